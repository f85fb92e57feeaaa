#include "soar/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace soar {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

std::string layer_weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string layer_bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

Vector VelocityField::velocity(const Vector& z, Condition cond, double t) const {
  std::vector<Vector> out = velocity_batch(std::span(&z, 1), std::span(&cond, 1), std::span(&t, 1));
  return std::move(out.front());
}

VelocityModel VelocityModel::initialize(const ModelShape& shape, Rng& rng) {
  if (shape.latent_dim == 0 || shape.condition_count == 0)
    throw ContractViolation("model shape needs positive latent dim and condition count");
  for (std::size_t w : shape.hidden)
    if (w == 0) throw ContractViolation("hidden widths must be positive");

  ParamSet params;
  Tensor embedding({shape.condition_count + 1, shape.embed_dim});
  for (double& x : embedding.values) x = rng.uniform(-1.0, 1.0);
  params.add(kEmbeddingName, std::move(embedding));

  std::size_t fan_in = shape.input_width();
  const std::size_t layers = shape.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    const std::size_t fan_out = last ? shape.latent_dim : shape.hidden[l];
    Tensor weight({fan_out, fan_in});
    Tensor bias({fan_out});
    if (!last) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& x : weight.values) x = rng.uniform(-bound, bound);
      for (double& x : bias.values) x = rng.uniform(-bound, bound);
    }
    params.add(layer_weight_name(l), std::move(weight));
    params.add(layer_bias_name(l), std::move(bias));
    fan_in = fan_out;
  }
  return VelocityModel(shape, std::move(params));
}

VelocityModel VelocityModel::from_params(ParamSet params) {
  const Tensor& embedding = params.at(kEmbeddingName);
  if (embedding.shape.size() != 2 || embedding.shape[0] < 2)
    throw ContractViolation("embedding table must be [conditions + 1, embed_dim]");

  ModelShape shape;
  shape.condition_count = embedding.shape[0] - 1;
  shape.embed_dim = embedding.shape[1];
  shape.hidden.clear();

  std::size_t layers = 0;
  while (params.contains(layer_weight_name(layers))) ++layers;
  if (layers == 0) throw ContractViolation("parameter set has no layers");
  if (params.size() != 1 + 2 * layers) throw ContractViolation("parameter set has unexpected tensors");

  std::size_t prev_out = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& w = params.at(layer_weight_name(l));
    const Tensor& b = params.at(layer_bias_name(l));
    if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[0])
      throw ContractViolation("layer " + std::to_string(l) + " has inconsistent shapes");
    if (l > 0 && w.shape[1] != prev_out)
      throw ContractViolation("layer " + std::to_string(l) + " input width does not chain");
    if (l + 1 < layers) shape.hidden.push_back(w.shape[0]);
    prev_out = w.shape[0];
  }
  shape.latent_dim = prev_out;

  const std::size_t in = params.at(layer_weight_name(0)).shape[1];
  const std::size_t fixed = shape.latent_dim + shape.embed_dim + 1;
  if (in < fixed || (in - fixed) % 2 != 0) throw ContractViolation("input width does not match a known feature layout");
  shape.time_frequencies = (in - fixed) / 2;
  return VelocityModel(std::move(shape), std::move(params));
}

std::size_t VelocityModel::embedding_row(Condition cond) const {
  if (!cond) return shape_.null_row();
  if (*cond >= shape_.condition_count)
    throw ContractViolation("condition id " + std::to_string(*cond) + " out of range");
  return *cond;
}

std::vector<Vector> VelocityModel::forward(std::span<const Vector> z, std::span<const Condition> cond,
                                           std::span<const double> t, ForwardCache* cache) const {
  const std::size_t batch = z.size();
  if (cond.size() != batch || t.size() != batch) throw ContractViolation("forward: batch spans differ in length");

  const std::size_t d = shape_.latent_dim;
  const std::size_t e = shape_.embed_dim;
  const Tensor& embedding = params_.at(kEmbeddingName);

  std::vector<std::size_t> rows(batch);
  Eigen::MatrixXd x(shape_.input_width(), batch);
  for (std::size_t j = 0; j < batch; ++j) {
    if (z[j].dim() != d)
      throw ContractViolation("forward: latent has dim " + std::to_string(z[j].dim()) + ", model expects " +
                              std::to_string(d));
    if (!std::isfinite(t[j])) throw ContractViolation("forward: time input is not finite");
    rows[j] = embedding_row(cond[j]);
    std::size_t k = 0;
    for (std::size_t i = 0; i < d; ++i) x(k++, j) = z[j][i];
    for (std::size_t i = 0; i < e; ++i) x(k++, j) = embedding.values[rows[j] * e + i];
    x(k++, j) = t[j];
    double freq = std::numbers::pi;
    for (std::size_t f = 0; f < shape_.time_frequencies; ++f, freq *= 2.0) {
      x(k++, j) = std::sin(freq * t[j]);
      x(k++, j) = std::cos(freq * t[j]);
    }
  }

  if (cache) {
    cache->filled_ = false;
    cache->rows_ = rows;
    cache->layer_input_.clear();
    cache->pre_act_.clear();
  }

  const std::size_t layers = layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& w = params_.at(layer_weight_name(l));
    const Tensor& b = params_.at(layer_bias_name(l));
    // Owned copies: Eigen picks its vectorization peel from the address, so
    // products read straight from std::vector storage would round differently
    // depending on where the allocator happened to put the parameters.
    const RowMatrix weight =
        ConstRowMap(w.values.data(), static_cast<Eigen::Index>(w.shape[0]), static_cast<Eigen::Index>(w.shape[1]));
    const Eigen::VectorXd bias = ConstVecMap(b.values.data(), static_cast<Eigen::Index>(b.shape[0]));

    Eigen::MatrixXd pre = weight * x;
    pre.colwise() += bias;
    if (cache) cache->layer_input_.push_back(std::move(x));
    if (l + 1 == layers) {
      x = std::move(pre);
    } else {
      x = pre.unaryExpr(&silu);
      if (cache) cache->pre_act_.push_back(std::move(pre));
    }
  }
  if (cache) cache->filled_ = true;

  std::vector<Vector> out(batch, Vector(d));
  for (std::size_t j = 0; j < batch; ++j)
    for (std::size_t i = 0; i < d; ++i) out[j][i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

Vector VelocityModel::forward(const Vector& z, Condition cond, double t, ForwardCache* cache) const {
  std::vector<Vector> out = forward(std::span(&z, 1), std::span(&cond, 1), std::span(&t, 1), cache);
  return std::move(out.front());
}

void VelocityModel::backward(const ForwardCache& cache, std::span<const Vector> grad_out, GradSet& grads) const {
  if (!cache.filled()) throw ContractViolation("backward: no cached forward pass");
  const std::size_t batch = cache.batch_size();
  if (grad_out.size() != batch) throw ContractViolation("backward: gradient batch does not match cached batch");
  if (!grads.same_layout(params_)) throw ContractViolation("backward: gradient set layout differs from parameters");

  const std::size_t d = shape_.latent_dim;
  Eigen::MatrixXd g(d, batch);
  for (std::size_t j = 0; j < batch; ++j) {
    if (grad_out[j].dim() != d) throw ContractViolation("backward: output gradient has wrong dimension");
    for (std::size_t i = 0; i < d; ++i) g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = grad_out[j][i];
  }

  const std::size_t layers = layer_count();
  for (std::size_t l = layers; l-- > 0;) {
    const Tensor& w = params_.at(layer_weight_name(l));
    const auto out_w = static_cast<Eigen::Index>(w.shape[0]);
    const auto in_w = static_cast<Eigen::Index>(w.shape[1]);
    const RowMatrix weight = ConstRowMap(w.values.data(), out_w, in_w);

    Tensor& dw = grads.at(layer_weight_name(l));
    Tensor& db = grads.at(layer_bias_name(l));
    RowMap dweight(dw.values.data(), out_w, in_w);
    VecMap dbias(db.values.data(), out_w);
    const RowMatrix step_dweight = g * cache.layer_input_[l].transpose();
    const Eigen::VectorXd step_dbias = g.rowwise().sum();
    dweight += step_dweight;
    dbias += step_dbias;

    Eigen::MatrixXd dx = weight.transpose() * g;
    if (l > 0) {
      g = dx.cwiseProduct(cache.pre_act_[l - 1].unaryExpr(&silu_grad));
    } else {
      const std::size_t e = shape_.embed_dim;
      Tensor& dembed = grads.at(kEmbeddingName);
      for (std::size_t j = 0; j < batch; ++j)
        for (std::size_t i = 0; i < e; ++i)
          dembed.values[cache.rows_[j] * e + i] += dx(static_cast<Eigen::Index>(d + i), static_cast<Eigen::Index>(j));
    }
  }
}

GradSet VelocityModel::backward(const ForwardCache& cache, std::span<const Vector> grad_out) const {
  GradSet grads = GradSet::zeros_like(params_);
  backward(cache, grad_out, grads);
  return grads;
}

}  // namespace soar
