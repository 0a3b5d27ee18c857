#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "robdet/feature_bank.hpp"
#include "robdet/rng.hpp"

namespace robdet {

struct AugmentConfig {
  double beta = 0.5;  ///< noise scale
  std::uint64_t seed = 8079;
};

/// One noise vector: sigma ~ U(0,1), eta ~ N(0, sigma^2 I).
struct NoiseDraw {
  double sigma = 0.0;
  Eigen::VectorXd eta;
};

NoiseDraw draw_noise(std::size_t dim, Rng& rng);

/// Returns the 2n-sample bank [originals..., originals + beta * eta_i...].
/// Each augmented sample i draws from its own substream keyed by (seed, i),
/// so the result does not depend on evaluation order.
FeatureBank augment_bank(const FeatureBank& bank, const AugmentConfig& cfg);

}  // namespace robdet
