#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "robdet/mlp.hpp"
#include "robdet/optimizer.hpp"

namespace robdet {

/// Model (and optionally optimizer) snapshot.
///
/// Layout, all little-endian, no padding:
///   "MLPC" | u16 version=1 | u32 input_dim | u32 n_hidden | n_hidden x u32 width
///   | f64 dropout_rate | f64 bn_epsilon | f64 bn_momentum | u8 batch_norm
///   | per hidden layer, f64: weight (row-major, out x in), bias, bn_scale,
///     bn_shift, running_mean, running_var
///   | f64 output weight x last width | f64 output bias
///   | u8 has_optimizer | if 1: u64 step, then per trainable block (mlp
///     block order) f64 first moments, f64 second moments
struct Checkpoint {
  MlpParams<double> params;
  std::optional<AdamWState<double>> optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace robdet
