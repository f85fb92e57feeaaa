#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "soar/adam.hpp"
#include "soar/numerics.hpp"

namespace soar {

/// Unreadable or malformed checkpoint (bad magic, unknown version, truncated).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'O', 'A', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Reserved tensor names for optimizer state.
inline constexpr const char* kAdamFirstPrefix = "adam.m/";
inline constexpr const char* kAdamSecondPrefix = "adam.v/";
inline constexpr const char* kAdamStepName = "adam.step";

struct Checkpoint {
  ParamSet params;
  std::optional<AdamState> adam;
};

// Layout, all integers little-endian:
//   "SOARCKPT" | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
//               f64 payload[prod(dims)]
// Tensors are written in lexicographic name order.
std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params, const AdamState* adam = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const ParamSet& params, const AdamState* adam = nullptr);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace soar
