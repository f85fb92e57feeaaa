#include "soar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace soar {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double x) {
    const auto v = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void tensor(const std::string& name, const Tensor& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    raw(name.data(), name.size());
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) u32(static_cast<std::uint32_t>(d));
    for (double x : t.values) f64(x);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }
  [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params, const AdamState* adam) {
  // Gather everything into one ordered map so the file order is lexicographic.
  ParamSet all;
  for (const auto& [name, t] : params) {
    if (starts_with(name, "adam.")) throw ContractViolation("parameter name uses reserved prefix: " + name);
    all.add(name, t);
  }
  if (adam) {
    if (!params.same_layout(adam->m) || !params.same_layout(adam->v))
      throw ContractViolation("optimizer moments do not match parameters");
    for (const auto& [name, t] : adam->m) all.add(kAdamFirstPrefix + name, t);
    for (const auto& [name, t] : adam->v) all.add(kAdamSecondPrefix + name, t);
    all.add(kAdamStepName, Tensor(std::vector<std::size_t>{}, static_cast<double>(adam->step)));
  }

  Writer w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) w.tensor(name, t);
  return w.take();
}

namespace {

Checkpoint decode_unchecked(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint out;
  MomentSet m, v;
  std::optional<double> step;
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> dims(rank);
    std::size_t elements = 1;
    for (auto& d : dims) {
      d = r.u32();
      if (d != 0 && elements > r.remaining() / d) throw CheckpointError("tensor '" + name + "' exceeds file size");
      elements *= d;
    }
    if (elements > r.remaining() / 8) throw CheckpointError("tensor '" + name + "' exceeds file size");
    Tensor t(dims);
    for (double& x : t.values) x = r.f64();

    if (starts_with(name, kAdamFirstPrefix)) {
      m.add(name.substr(std::strlen(kAdamFirstPrefix)), std::move(t));
    } else if (starts_with(name, kAdamSecondPrefix)) {
      v.add(name.substr(std::strlen(kAdamSecondPrefix)), std::move(t));
    } else if (name == kAdamStepName) {
      if (t.size() != 1) throw CheckpointError("malformed optimizer step tensor");
      step = t.values[0];
    } else {
      out.params.add(std::move(name), std::move(t));
    }
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");

  if (step) {
    if (!out.params.same_layout(m) || !out.params.same_layout(v))
      throw CheckpointError("optimizer moments do not match parameters");
    out.adam = AdamState{std::move(m), std::move(v), static_cast<std::uint64_t>(*step)};
  } else if (m.size() != 0 || v.size() != 0) {
    throw CheckpointError("optimizer moments present without step counter");
  }
  return out;
}

}  // namespace

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  try {
    return decode_unchecked(bytes);
  } catch (const ContractViolation& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_checkpoint(const std::filesystem::path& path, const ParamSet& params, const AdamState* adam) {
  const auto bytes = encode_checkpoint(params, adam);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace soar
