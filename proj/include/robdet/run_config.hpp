#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robdet/augmentation.hpp"
#include "robdet/errors.hpp"
#include "robdet/trainer.hpp"

namespace robdet {

/// Unknown key or unparsable value in a run config.
class ConfigError : public ArgumentError {
 public:
  ConfigError(std::string key, const std::string& message)
      : ArgumentError(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  TrainConfig train;
  std::optional<std::uint64_t> augment_seed;  ///< defaults to train.seed

  AugmentConfig augment() const { return {train.beta_noise, augment_seed.value_or(train.seed)}; }
};

/// Every accepted key, in the order format_run_config writes them.
const std::vector<std::string>& run_config_keys();

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Flat `key=value` lines; '#' starts a comment line; blank lines ignored.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
std::string format_run_config(const RunConfig& cfg);

}  // namespace robdet
