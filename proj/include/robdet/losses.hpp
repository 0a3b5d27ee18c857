#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "robdet/errors.hpp"
#include "robdet/feature_bank.hpp"
#include "robdet/types.hpp"

namespace robdet {

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  using std::abs, std::exp, std::log1p, std::max;
  return max(x, Scalar(0)) + log1p(exp(-abs(x)));
}

/// Logistic function, stable for large |x|.
template <typename Scalar>
Scalar sigmoid(Scalar x) {
  using std::exp;
  if (x >= 0) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

/// Signed margin label: real -> +1, fake -> -1.
inline int signed_label(std::uint8_t label) { return label == kReal ? 1 : -1; }

/// Per-class constants of the vector-scaling loss. Index 0 = fake, 1 = real.
struct VsParams {
  double omega_fake = 1.0, omega_real = 1.0;
  double zeta_fake = 1.2, zeta_real = 0.8;
  double delta_fake = 0.05, delta_real = -0.05;

  double omega(std::uint8_t y) const { return y == kReal ? omega_real : omega_fake; }
  double zeta(std::uint8_t y) const { return y == kReal ? zeta_real : zeta_fake; }
  double delta(std::uint8_t y) const { return y == kReal ? delta_real : delta_fake; }

  void validate() const {
    if (!(omega_fake > 0 && omega_real > 0)) throw ArgumentError("VS omegas must be > 0");
    if (!(zeta_fake > 0 && zeta_real > 0)) throw ArgumentError("VS zetas must be > 0");
    if (!std::isfinite(omega_fake + omega_real + zeta_fake + zeta_real + delta_fake + delta_real))
      throw ArgumentError("VS constants must be finite");
  }
};

/// Plain logistic loss as VS constants.
inline VsParams ce_params() { return {1.0, 1.0, 1.0, 1.0, 0.0, 0.0}; }

template <typename Scalar>
struct ValueGrad {
  Scalar value;
  Scalar grad;
};

/// omega_y * log(1 + exp(delta_y - zeta_y * s * logit)), s = +-1, and d/dlogit.
template <typename Scalar>
ValueGrad<Scalar> vs_loss(Scalar logit, std::uint8_t label, const VsParams& p) {
  const Scalar s = Scalar(signed_label(label));
  const Scalar w = Scalar(p.omega(label)), z = Scalar(p.zeta(label));
  const Scalar arg = Scalar(p.delta(label)) - z * s * logit;
  return {w * softplus(arg), -w * z * s * sigmoid(arg)};
}

template <typename Scalar>
ValueGrad<Scalar> ce_loss(Scalar logit, std::uint8_t label) {
  return vs_loss(logit, label, ce_params());
}

/// Normalized inverse class frequency: omega_c = m / (2 m_c).
inline std::pair<double, double> default_omegas(const ClassCounts& counts) {
  if (counts.n_real == 0 || counts.n_fake == 0) throw ArgumentError("default_omegas needs both classes present");
  const double m = static_cast<double>(counts.total());
  return {m / (2.0 * static_cast<double>(counts.n_fake)), m / (2.0 * static_cast<double>(counts.n_real))};
}

struct CvarConfig {
  double alpha = 0.9;
  double lambda_tolerance = 1e-8;
  int max_bisection_iters = 100;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0,1]");
    if (!(lambda_tolerance > 0.0)) throw ArgumentError("lambda_tolerance must be > 0");
    if (max_bisection_iters < 1) throw ArgumentError("max_bisection_iters must be >= 1");
  }
};

/// phi(lambda) = lambda + 1/(alpha m) * sum_i (loss_i - lambda)_+
template <typename Derived>
typename Derived::Scalar cvar_objective(const Eigen::MatrixBase<Derived>& losses, typename Derived::Scalar lambda,
                                        double alpha) {
  using Scalar = typename Derived::Scalar;
  const Scalar excess = (losses.array() - lambda).cwiseMax(Scalar(0)).sum();
  return lambda + excess / (Scalar(alpha) * Scalar(losses.size()));
}

namespace detail {
template <typename Derived>
void check_losses(const Eigen::MatrixBase<Derived>& losses, double alpha) {
  if (losses.size() == 0) throw ArgumentError("CVaR needs at least one loss");
  if (!losses.allFinite()) throw ArgumentError("CVaR losses must be finite");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0,1]");
}
}  // namespace detail

/// Minimizer of phi by bisection on the subgradient
/// g(lambda) = 1 - |{i : loss_i > lambda}| / (alpha m) over [min, max].
/// Once the bracket is below tolerance, the result snaps to the best of the
/// bracket ends and any loss values inside it: phi is piecewise linear with
/// kinks at the losses, so this recovers the exact minimum.
template <typename Derived>
typename Derived::Scalar cvar_solve_lambda(const Eigen::MatrixBase<Derived>& losses, double alpha,
                                           const CvarConfig& cfg = {}) {
  using Scalar = typename Derived::Scalar;
  detail::check_losses(losses, alpha);
  Scalar lo = losses.minCoeff(), hi = losses.maxCoeff();
  const Scalar threshold = Scalar(alpha) * Scalar(losses.size());
  for (int it = 0; it < cfg.max_bisection_iters && hi - lo > Scalar(cfg.lambda_tolerance); ++it) {
    const Scalar mid = lo + (hi - lo) / 2;
    const auto above = (losses.array() > mid).count();
    // g(mid) < 0 means the minimizer lies to the right
    if (Scalar(above) > threshold) lo = mid;
    else hi = mid;
  }
  Scalar best = lo, best_phi = cvar_objective(losses, lo, alpha);
  auto consider = [&](Scalar c) {
    const Scalar v = cvar_objective(losses, c, alpha);
    if (v < best_phi) best = c, best_phi = v;
  };
  consider(hi);
  for (Eigen::Index i = 0; i < losses.size(); ++i)
    if (losses[i] > lo && losses[i] < hi) consider(losses[i]);
  return best;
}

template <typename Scalar>
struct CvarOracle {
  Scalar lambda_star;
  Scalar cvar;
};

/// Sort-based closed form: mean of the top alpha-fraction with a fractional
/// weight on the boundary loss. Reference for cvar_solve_lambda.
template <typename Derived>
CvarOracle<typename Derived::Scalar> cvar_quantile_oracle(const Eigen::MatrixBase<Derived>& losses, double alpha) {
  using Scalar = typename Derived::Scalar;
  detail::check_losses(losses, alpha);
  std::vector<Scalar> sorted(static_cast<std::size_t>(losses.size()));
  for (Eigen::Index i = 0; i < losses.size(); ++i) sorted[static_cast<std::size_t>(i)] = losses[i];
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const auto m = sorted.size();
  const double k = alpha * static_cast<double>(m);
  const auto whole = std::min<std::size_t>(static_cast<std::size_t>(std::floor(k)), m);
  const double frac = k - static_cast<double>(whole);
  Scalar sum = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(whole), Scalar(0));
  if (whole < m) sum += Scalar(frac) * sorted[whole];
  return {sorted[std::min(whole, m - 1)], sum / Scalar(k)};
}

template <typename Scalar>
struct CvarResult {
  Scalar value;
  Scalar lambda_star;
  VectorX<Scalar> grad;  ///< per logit
};

/// CVaR of per-sample losses and its gradient w.r.t. the logits, holding
/// lambda* fixed. Samples above lambda* get weight 1/(alpha m). Samples equal
/// to lambda* share the remaining mass alpha m - |above| (over alpha m), which
/// keeps lambda* optimal and makes the weights sum to one; for distinct
/// losses this is the exact derivative of the sorted-tail formula.
template <typename Scalar>
CvarResult<Scalar> cvar_loss(const VectorX<Scalar>& losses, const VectorX<Scalar>& dlosses, double alpha,
                             const CvarConfig& cfg = {}) {
  if (losses.size() != dlosses.size()) throw ArgumentError("losses and derivatives differ in length");
  CvarResult<Scalar> r;
  r.lambda_star = cvar_solve_lambda(losses, alpha, cfg);
  r.value = cvar_objective(losses, r.lambda_star, alpha);
  const Scalar tail = Scalar(alpha) * Scalar(losses.size());
  const auto above = (losses.array() > r.lambda_star).count();
  const auto ties = (losses.array() == r.lambda_star).count();
  Scalar tie_weight = 0;
  if (ties > 0) tie_weight = std::clamp((tail - Scalar(above)) / (tail * Scalar(ties)), Scalar(0), Scalar(1) / tail);
  r.grad = (losses.array() > r.lambda_star)
               .select(dlosses.array() / tail,
                       (losses.array() == r.lambda_star).select(tie_weight * dlosses.array(), Scalar(0)));
  return r;
}

template <typename Scalar>
struct AucResult {
  Scalar value;
  VectorX<Scalar> grad;
};

/// Mean logistic pairwise loss over (real, fake) pairs. nullopt if the batch
/// lacks either class.
template <typename Scalar>
std::optional<AucResult<Scalar>> auc_surrogate_loss(const VectorX<Scalar>& logits,
                                                    std::span<const std::uint8_t> labels) {
  if (static_cast<std::size_t>(logits.size()) != labels.size())
    throw ArgumentError("logits and labels differ in length");
  std::vector<Eigen::Index> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == kReal ? pos : neg).push_back(static_cast<Eigen::Index>(i));
  if (pos.empty() || neg.empty()) return std::nullopt;

  const Scalar norm = Scalar(1) / (Scalar(pos.size()) * Scalar(neg.size()));
  AucResult<Scalar> r{Scalar(0), VectorX<Scalar>::Zero(logits.size())};
  for (auto i : pos) {
    Scalar row = 0, gi = 0;
    for (auto j : neg) {
      const Scalar margin = logits[i] - logits[j];
      row += softplus(-margin);
      const Scalar s = sigmoid(-margin);
      gi -= s;
      r.grad[j] += norm * s;
    }
    r.value += row;
    r.grad[i] = norm * gi;
  }
  r.value *= norm;
  return r;
}

/// Pairwise indicator loss: fraction of (real, fake) pairs with h+ <= h-.
template <typename Scalar>
Scalar auc_indicator_loss(const VectorX<Scalar>& logits, std::span<const std::uint8_t> labels) {
  std::size_t bad = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kReal) continue;
    ++pos;
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[j] != kReal && logits[Eigen::Index(i)] <= logits[Eigen::Index(j)]) ++bad;
  }
  neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("indicator AUC loss needs both classes");
  return Scalar(bad) / (Scalar(pos) * Scalar(neg));
}

enum class LossKind { cvar_vs_auc, ce_auc };

/// Everything the total objective needs besides the batch.
struct Objective {
  LossKind kind = LossKind::cvar_vs_auc;
  VsParams vs;
  CvarConfig cvar;
  double gamma = 0.6;
};

template <typename Scalar>
struct LossBreakdown {
  Scalar cvar_value = 0;  ///< CVaR term, or mean CE for ce_auc
  Scalar lambda_star = 0;
  Scalar auc_value = 0;
  Scalar total = 0;
  VectorX<Scalar> grad;
  bool auc_skipped = false;  ///< single-class batch, AUC term set to 0
};

/// total = CVaR(VS losses) + gamma * AUC surrogate, or for ce_auc
/// mean(CE) + gamma * AUC surrogate; with its gradient per logit.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const VectorX<Scalar>& logits, std::span<const std::uint8_t> labels,
                                 const Objective& obj) {
  const auto m = logits.size();
  if (m == 0 || static_cast<std::size_t>(m) != labels.size()) throw ArgumentError("bad batch for total_loss");
  if (!(obj.gamma >= 0.0) || !std::isfinite(obj.gamma)) throw ArgumentError("gamma must be finite and >= 0");

  LossBreakdown<Scalar> out;
  VectorX<Scalar> losses(m), dl(m);
  if (obj.kind == LossKind::cvar_vs_auc) {
    for (Eigen::Index i = 0; i < m; ++i) {
      auto [v, g] = vs_loss(logits[i], labels[static_cast<std::size_t>(i)], obj.vs);
      losses[i] = v, dl[i] = g;
    }
    auto c = cvar_loss(losses, dl, obj.cvar.alpha, obj.cvar);
    out.cvar_value = c.value;
    out.lambda_star = c.lambda_star;
    out.grad = std::move(c.grad);
  } else {
    for (Eigen::Index i = 0; i < m; ++i) {
      auto [v, g] = ce_loss(logits[i], labels[static_cast<std::size_t>(i)]);
      losses[i] = v, dl[i] = g;
    }
    out.cvar_value = losses.mean();
    out.grad = dl / Scalar(m);
  }

  if (auto auc = auc_surrogate_loss(logits, labels)) {
    out.auc_value = auc->value;
    out.grad += Scalar(obj.gamma) * auc->grad;
  } else {
    out.auc_skipped = true;
  }
  out.total = out.cvar_value + Scalar(obj.gamma) * out.auc_value;
  return out;
}

}  // namespace robdet
