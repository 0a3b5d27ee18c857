#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "robdet/errors.hpp"
#include "robdet/mlp.hpp"
#include "robdet/types.hpp"

namespace robdet {

struct AdamWConfig {
  double base_lr = 1e-5;
  double weight_decay = 6e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(base_lr > 0.0)) throw ArgumentError("base_lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ArgumentError("beta1/beta2 must lie in [0,1)");
    if (!(eps > 0.0)) throw ArgumentError("eps must be > 0");
  }
};

struct CosineSchedule {
  std::size_t total_epochs = 100;
  double min_lr = 0.0;
};

struct SamConfig {
  double nu = 0.1;  ///< perturbation radius
};

/// Moments aligned with blocks(params).
template <typename Scalar>
struct AdamWState {
  std::vector<VectorX<Scalar>> first;
  std::vector<VectorX<Scalar>> second;
  std::uint64_t step = 0;

  static AdamWState zeros_for(const MlpParams<Scalar>& params) {
    AdamWState s;
    for (const auto& b : blocks(params)) {
      s.first.push_back(VectorX<Scalar>::Zero(b.size()));
      s.second.push_back(VectorX<Scalar>::Zero(b.size()));
    }
    return s;
  }

  /// Bitwise over every moment.
  friend bool operator==(const AdamWState& a, const AdamWState& b) {
    if (a.step != b.step || a.first.size() != b.first.size() || a.second.size() != b.second.size()) return false;
    for (std::size_t i = 0; i < a.first.size(); ++i)
      if (!bitwise_equal(a.first[i], b.first[i]) || !bitwise_equal(a.second[i], b.second[i])) return false;
    return true;
  }
};

/// Cosine annealing from base_lr at epoch 0 to min_lr at total_epochs.
inline double lr_at(const CosineSchedule& schedule, const AdamWConfig& cfg, std::size_t epoch) {
  if (schedule.total_epochs == 0) throw ArgumentError("total_epochs must be >= 1");
  if (epoch > schedule.total_epochs) throw ArgumentError("epoch beyond schedule");
  if (epoch == schedule.total_epochs) return schedule.min_lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
  return schedule.min_lr + 0.5 * (cfg.base_lr - schedule.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

/// Global L2 norm over every trainable block.
template <typename Scalar>
Scalar global_norm(const MlpParams<Scalar>& grads) {
  Scalar sq = 0;
  for (const auto& b : blocks(grads)) sq += b.squaredNorm();
  return std::sqrt(sq);
}

/// nu * g / ||g||_2 with one norm over all parameters; zero if g is zero.
template <typename Scalar>
MlpParams<Scalar> sam_perturbation(const MlpParams<Scalar>& grads, double nu) {
  auto eps = zeros_like(grads);
  auto src = blocks(grads);
  for (std::size_t i = 0; i < src.size(); ++i)
    if (!src[i].allFinite()) throw NumericError("non-finite gradient in " + block_infos(grads.spec)[i].name);
  const Scalar norm = global_norm(grads);
  if (norm == Scalar(0)) return eps;
  const Scalar scale = Scalar(nu) / norm;
  auto dst = blocks(eps);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = scale * src[i];
  return eps;
}

/// In-place AdamW step. Weight decay is decoupled and skipped for biases and
/// batch-norm parameters. On a non-finite result nothing is modified.
template <typename Scalar>
void adamw_step(MlpParams<Scalar>& params, const MlpParams<Scalar>& grads, AdamWState<Scalar>& state, double lr,
                const AdamWConfig& cfg) {
  const auto infos = block_infos(params.spec);
  if (state.first.empty() && state.step == 0) state = AdamWState<Scalar>::zeros_for(params);

  auto next_params = params;
  auto next_state = state;
  auto p = blocks(next_params);
  auto g = blocks(grads);
  if (g.size() != p.size() || next_state.first.size() != p.size()) throw ArgumentError("optimizer shape mismatch");

  next_state.step += 1;
  const auto t = static_cast<double>(next_state.step);
  const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
  const Scalar bias1 = Scalar(1) - Scalar(std::pow(cfg.beta1, t));
  const Scalar bias2 = Scalar(1) - Scalar(std::pow(cfg.beta2, t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i].size() != p[i].size()) throw ArgumentError("gradient shape mismatch in " + infos[i].name);
    auto& m = next_state.first[i];
    auto& v = next_state.second[i];
    m = b1 * m + (1 - b1) * g[i];
    v = b2 * v + (1 - b2) * g[i].cwiseAbs2();
    const VectorX<Scalar> step =
        Scalar(lr) * ((m / bias1).array() / ((v / bias2).array().sqrt() + Scalar(cfg.eps))).matrix();
    if (infos[i].decay) {
      const VectorX<Scalar> old = p[i];
      p[i] = old - step - Scalar(lr * cfg.weight_decay) * old;
    } else {
      p[i] -= step;
    }
    if (!p[i].allFinite()) throw NumericError("non-finite update in " + infos[i].name);
  }
  params = std::move(next_params);
  state = std::move(next_state);
}

template <typename Scalar>
struct LossAndGrad {
  Scalar loss;
  MlpParams<Scalar> grads;
};

template <typename Scalar>
struct SamStep {
  Scalar loss = 0;            ///< at the unperturbed point
  Scalar perturbed_loss = 0;  ///< at theta + eps*
};

/// Two-pass sharpness-aware step. `loss_and_grad(params, commit_running_stats)`
/// must evaluate the same stochastic function on every call (fixed dropout
/// masks). Pass 1 at theta commits running statistics; pass 2 at theta + eps*
/// does not. AdamW then moves the original theta with the pass-2 gradient.
template <typename Scalar, typename LossFn>
SamStep<Scalar> sam_update(MlpParams<Scalar>& params, AdamWState<Scalar>& state, const AdamWConfig& cfg,
                           const SamConfig& sam, double lr, LossFn&& loss_and_grad) {
  LossAndGrad<Scalar> first = loss_and_grad(params, true);
  const auto eps = sam_perturbation(first.grads, sam.nu);

  auto perturbed = params;
  {
    auto dst = blocks(perturbed);
    auto src = blocks(eps);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  LossAndGrad<Scalar> second = loss_and_grad(perturbed, false);
  adamw_step(params, second.grads, state, lr, cfg);
  return {first.loss, second.loss};
}

}  // namespace robdet
