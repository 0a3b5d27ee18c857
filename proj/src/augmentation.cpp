#include "robdet/augmentation.hpp"

#include <cmath>
#include <random>

#include "robdet/errors.hpp"

namespace robdet {

NoiseDraw draw_noise(std::size_t dim, Rng& rng) {
  if (dim == 0) throw ArgumentError("noise dim must be >= 1");
  NoiseDraw d;
  d.sigma = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  d.eta.resize(static_cast<Eigen::Index>(dim));
  for (auto& e : d.eta) e = d.sigma * normal(rng);
  return d;
}

FeatureBank augment_bank(const FeatureBank& bank, const AugmentConfig& cfg) {
  if (bank.empty()) throw ArgumentError("cannot augment an empty bank");
  if (!(cfg.beta >= 0.0) || !std::isfinite(cfg.beta)) throw ArgumentError("beta must be finite and >= 0");

  const auto n = static_cast<Eigen::Index>(bank.size());
  FeatureMatrix out(2 * n, static_cast<Eigen::Index>(bank.dim()));
  out.topRows(n) = bank.features();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cfg.beta == 0.0) {
      // keeps -0.0 bit-identical
      out.row(n + i) = bank.features().row(i);
      continue;
    }
    auto rng = make_stream(cfg.seed, {static_cast<std::uint64_t>(i)});
    auto noise = draw_noise(bank.dim(), rng);
    out.row(n + i) = (bank.features().row(i).cast<double>() + cfg.beta * noise.eta.transpose()).cast<float>();
  }
  std::vector<std::uint8_t> labels = bank.labels();
  labels.insert(labels.end(), bank.labels().begin(), bank.labels().end());
  return FeatureBank(std::move(out), std::move(labels));
}

}  // namespace robdet
