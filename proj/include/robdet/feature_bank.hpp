#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace robdet {

/// Label convention: 0 = fake, 1 = real.
inline constexpr std::uint8_t kFake = 0;
inline constexpr std::uint8_t kReal = 1;

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Sample {
  Eigen::VectorXf features;
  std::uint8_t label = kFake;
};

struct ClassCounts {
  std::size_t n_real = 0;
  std::size_t n_fake = 0;

  std::size_t total() const { return n_real + n_fake; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Immutable set of labeled feature vectors, one row per sample.
class FeatureBank {
 public:
  /// Throws ArgumentError if labels are outside {0,1}, sizes disagree,
  /// dim is zero or any feature is non-finite.
  FeatureBank(FeatureMatrix features, std::vector<std::uint8_t> labels);
  FeatureBank(std::size_t dim, std::span<const Sample> samples);

  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  const FeatureMatrix& features() const { return features_; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }
  std::uint8_t label(std::size_t i) const { return labels_[i]; }
  auto row(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)); }

  /// Bank built from the given rows, in the given order.
  FeatureBank select(std::span<const std::size_t> rows) const;

  friend bool operator==(const FeatureBank& a, const FeatureBank& b);

 private:
  FeatureMatrix features_;
  std::vector<std::uint8_t> labels_;
};

enum class BankFormat { binary, csv };

/// `.csv` selects csv, anything else binary.
BankFormat format_from_path(const std::filesystem::path& path);

FeatureBank load_bank(const std::filesystem::path& path, BankFormat format);
FeatureBank load_bank(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames, so a failed write never
/// leaves a partial file at `path`.
void save_bank(const FeatureBank& bank, const std::filesystem::path& path, BankFormat format);
void save_bank(const FeatureBank& bank, const std::filesystem::path& path);

/// Parse a bank from in-memory text / bytes. Used by the file loaders.
FeatureBank parse_bank_csv(std::string_view text);
FeatureBank parse_bank_binary(std::span<const std::byte> bytes);

std::vector<std::byte> encode_bank_binary(const FeatureBank& bank);
std::string encode_bank_csv(const FeatureBank& bank);

/// Byte length of the binary header: magic(4) + version(2) + dim(4) + count(8).
inline constexpr std::size_t kBankHeaderBytes = 18;

ClassCounts class_counts(const FeatureBank& bank);

/// Stratified split into (train, validation). Each class is shuffled under
/// `seed` and its first ceil(val_fraction * n_c) samples go to validation.
/// Within each split, samples keep their original relative order.
std::pair<FeatureBank, FeatureBank> split_bank(const FeatureBank& bank, double val_fraction,
                                               std::uint64_t seed);

/// Two isotropic unit Gaussians separated along the first axis: real at
/// +separation/2, fake at -separation/2. Real samples come first.
FeatureBank generate_synthetic(std::size_t n_real, std::size_t n_fake, std::size_t dim,
                               double separation, std::uint64_t seed);

}  // namespace robdet
