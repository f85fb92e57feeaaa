#include <doctest.h>

#include <cstring>

#include "soar/checkpoint.hpp"
#include "soar/model.hpp"
#include "support.hpp"

using namespace soar;

namespace {

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

}  // namespace

TEST_CASE("byte layout of a one-tensor checkpoint") {
  ParamSet p;
  Tensor t({2});
  t.values = {1.0, -2.5};
  p.add("x", t);
  const auto bytes = encode_checkpoint(p);
  REQUIRE(bytes.size() == 8 + 4 + 4 + (4 + 1) + 4 + 4 + 16);
  CHECK(std::memcmp(bytes.data(), "SOARCKPT", 8) == 0);
  CHECK(read_u32(bytes, 8) == 1);
  CHECK(read_u32(bytes, 12) == 1);
  CHECK(read_u32(bytes, 16) == 1);
  CHECK(bytes[20] == 'x');
  CHECK(read_u32(bytes, 21) == 1);
  CHECK(read_u32(bytes, 25) == 2);
  double v = 0.0;
  std::memcpy(&v, bytes.data() + 37, 8);
  CHECK(v == -2.5);
}

TEST_CASE("round trip preserves parameters and optimizer state exactly") {
  const auto model = test::perturbed_model(test::small_shape(2, 3, 8), 21);
  AdamState adam = AdamState::zeros_like(model.params());
  adam.step = 17;
  Rng rng(3);
  for (auto& [_, t] : adam.m)
    for (double& x : t.values) x = rng.normal();
  for (auto& [_, t] : adam.v)
    for (double& x : t.values) x = rng.uniform();

  const auto bytes = encode_checkpoint(model.params(), &adam);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.params == model.params());
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->m == adam.m);
  CHECK(back.adam->v == adam.v);
  CHECK(back.adam->step == 17);
  CHECK(encode_checkpoint(back.params, &*back.adam) == bytes);

  const Checkpoint params_only = decode_checkpoint(encode_checkpoint(model.params()));
  CHECK_FALSE(params_only.adam.has_value());
}

TEST_CASE("corrupt checkpoints are rejected") {
  ParamSet p;
  p.add("x", Tensor({3}, 1.0));
  const auto good = encode_checkpoint(p);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CheckpointError);

  auto bad_version = good;
  bad_version[8] = 2;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), CheckpointError);

  for (std::size_t cut : {0ul, 5ul, 12ul, 20ul, good.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(std::span(good.data(), cut)), CheckpointError);

  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), CheckpointError);

  auto huge_dim = good;
  huge_dim[25] = 0xff;
  huge_dim[26] = 0xff;
  huge_dim[27] = 0xff;
  CHECK_THROWS_AS(decode_checkpoint(huge_dim), CheckpointError);
}

TEST_CASE("files round trip and missing files fail") {
  test::TempDir dir("ckpt");
  ParamSet p;
  p.add("x", Tensor({2}, 0.25));
  write_checkpoint(dir / "a.ckpt", p);
  CHECK(read_checkpoint(dir / "a.ckpt").params == p);
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.ckpt"), CheckpointError);
}
