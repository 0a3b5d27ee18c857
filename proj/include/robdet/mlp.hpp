#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "robdet/errors.hpp"
#include "robdet/feature_bank.hpp"
#include "robdet/rng.hpp"
#include "robdet/types.hpp"

namespace robdet {

/// Architecture of the classification head. Each hidden block is
/// affine -> batch norm -> ReLU -> dropout; the output is a plain affine
/// layer producing one logit.
struct MlpSpec {
  std::size_t input_dim = 768;
  std::vector<std::size_t> hidden_dims{512, 256};
  double dropout_rate = 0.3;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;
  bool batch_norm = true;

  /// Number of affine layers.
  std::size_t depth() const { return hidden_dims.size() + 1; }

  void validate() const {
    if (input_dim == 0) throw ArgumentError("input_dim must be >= 1");
    for (auto h : hidden_dims)
      if (h == 0) throw ArgumentError("hidden widths must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ArgumentError("dropout_rate must lie in [0,1)");
    if (!(bn_epsilon > 0.0)) throw ArgumentError("bn_epsilon must be > 0");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ArgumentError("bn_momentum must lie in (0,1)");
  }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Resize `base` to `depth` affine layers: extra hidden blocks of width 256
/// are appended, or trailing ones dropped.
inline MlpSpec with_depth(MlpSpec base, std::size_t depth) {
  if (depth == 0) throw ArgumentError("depth must be >= 1");
  base.hidden_dims.resize(depth - 1, 256);
  return base;
}

template <typename Scalar>
struct HiddenLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;
  VectorX<Scalar> bn_scale;
  VectorX<Scalar> bn_shift;
  VectorX<Scalar> running_mean;
  VectorX<Scalar> running_var;

  friend bool operator==(const HiddenLayer& a, const HiddenLayer& b) {
    return bitwise_equal(a.weight, b.weight) && bitwise_equal(a.bias, b.bias) &&
           bitwise_equal(a.bn_scale, b.bn_scale) && bitwise_equal(a.bn_shift, b.bn_shift) &&
           bitwise_equal(a.running_mean, b.running_mean) && bitwise_equal(a.running_var, b.running_var);
  }
};

/// Parameters of the head. Also used as the gradient container, in which
/// case running statistics stay zero.
template <typename Scalar>
struct MlpParams {
  MlpSpec spec;
  std::vector<HiddenLayer<Scalar>> hidden;
  RowVectorX<Scalar> out_weight;
  Scalar out_bias = 0;

  /// Bitwise over every array.
  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    return a.spec == b.spec && a.hidden == b.hidden && bitwise_equal(a.out_weight, b.out_weight) &&
           std::memcmp(&a.out_bias, &b.out_bias, sizeof(Scalar)) == 0;
  }
};

template <typename Scalar>
MlpParams<Scalar> zeros_like(const MlpParams<Scalar>& p) {
  MlpParams<Scalar> z;
  z.spec = p.spec;
  for (const auto& l : p.hidden) {
    z.hidden.push_back({MatrixX<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                        VectorX<Scalar>::Zero(l.bias.size()), VectorX<Scalar>::Zero(l.bn_scale.size()),
                        VectorX<Scalar>::Zero(l.bn_shift.size()), VectorX<Scalar>::Zero(l.running_mean.size()),
                        VectorX<Scalar>::Zero(l.running_var.size())});
  }
  z.out_weight = RowVectorX<Scalar>::Zero(p.out_weight.size());
  z.out_bias = 0;
  return z;
}

/// Glorot-uniform weights, zero biases, identity batch norm.
template <typename Scalar>
MlpParams<Scalar> init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  auto rng = make_stream(seed);
  auto glorot = [&](std::size_t fan_out, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    MatrixX<Scalar> w(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(u(rng));
    return w;
  };

  MlpParams<Scalar> p;
  p.spec = spec;
  std::size_t fan_in = spec.input_dim;
  for (auto width : spec.hidden_dims) {
    const auto n = static_cast<Eigen::Index>(width);
    p.hidden.push_back({glorot(width, fan_in), VectorX<Scalar>::Zero(n), VectorX<Scalar>::Ones(n),
                        VectorX<Scalar>::Zero(n), VectorX<Scalar>::Zero(n), VectorX<Scalar>::Ones(n)});
    fan_in = width;
  }
  p.out_weight = glorot(1, fan_in);
  p.out_bias = 0;
  return p;
}

/// Static description of one trainable parameter block.
struct BlockInfo {
  std::string name;
  bool decay = false;  ///< decoupled weight decay applies
};

/// Trainable blocks in canonical order: per hidden layer weight, bias and
/// (with batch norm) scale, shift; then output weight, output bias.
inline std::vector<BlockInfo> block_infos(const MlpSpec& spec) {
  std::vector<BlockInfo> out;
  for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
    const auto pre = "hidden[" + std::to_string(l) + "].";
    out.push_back({pre + "weight", true});
    out.push_back({pre + "bias", false});
    if (spec.batch_norm) {
      out.push_back({pre + "bn_scale", false});
      out.push_back({pre + "bn_shift", false});
    }
  }
  out.push_back({"output.weight", true});
  out.push_back({"output.bias", false});
  return out;
}

/// Flat views over the trainable blocks, ordered as block_infos().
template <typename Scalar>
std::vector<Eigen::Map<VectorX<Scalar>>> blocks(MlpParams<Scalar>& p) {
  std::vector<Eigen::Map<VectorX<Scalar>>> out;
  for (auto& l : p.hidden) {
    out.emplace_back(l.weight.data(), l.weight.size());
    out.emplace_back(l.bias.data(), l.bias.size());
    if (p.spec.batch_norm) {
      out.emplace_back(l.bn_scale.data(), l.bn_scale.size());
      out.emplace_back(l.bn_shift.data(), l.bn_shift.size());
    }
  }
  out.emplace_back(p.out_weight.data(), p.out_weight.size());
  out.emplace_back(&p.out_bias, 1);
  return out;
}

template <typename Scalar>
std::vector<Eigen::Map<const VectorX<Scalar>>> blocks(const MlpParams<Scalar>& p) {
  std::vector<Eigen::Map<const VectorX<Scalar>>> out;
  for (const auto& l : p.hidden) {
    out.emplace_back(l.weight.data(), l.weight.size());
    out.emplace_back(l.bias.data(), l.bias.size());
    if (p.spec.batch_norm) {
      out.emplace_back(l.bn_scale.data(), l.bn_scale.size());
      out.emplace_back(l.bn_shift.data(), l.bn_shift.size());
    }
  }
  out.emplace_back(p.out_weight.data(), p.out_weight.size());
  out.emplace_back(&p.out_bias, 1);
  return out;
}

enum class Mode { train, eval };

/// Inverted-dropout multipliers per hidden layer: 0 or 1/(1-rate).
template <typename Scalar>
struct DropoutMasks {
  std::vector<MatrixX<Scalar>> layers;
};

template <typename Scalar>
DropoutMasks<Scalar> sample_dropout_masks(const MlpSpec& spec, Eigen::Index batch, Rng& rng) {
  DropoutMasks<Scalar> m;
  const Scalar keep_scale = Scalar(1) / Scalar(1 - spec.dropout_rate);
  std::bernoulli_distribution keep(1.0 - spec.dropout_rate);
  for (auto width : spec.hidden_dims) {
    MatrixX<Scalar> mask(batch, static_cast<Eigen::Index>(width));
    if (spec.dropout_rate == 0.0) {
      mask.setOnes();
    } else {
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(rng) ? keep_scale : Scalar(0);
    }
    m.layers.push_back(std::move(mask));
  }
  return m;
}

template <typename Scalar>
struct LayerCache {
  MatrixX<Scalar> input;
  MatrixX<Scalar> normalized;  // xhat (equals the affine output without batch norm)
  RowVectorX<Scalar> inv_std;
  MatrixX<Scalar> pre_relu;
  MatrixX<Scalar> dropout;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<LayerCache<Scalar>> layers;
  MatrixX<Scalar> last_activation;
  VectorX<Scalar> logits;
  Eigen::Index batch = 0;
};

/// Train-mode forward with caller-supplied dropout masks. Batch statistics
/// normalize; running statistics are updated only if `commit_running_stats`.
template <typename Scalar>
ForwardCache<Scalar> train_forward(MlpParams<Scalar>& params, const MatrixX<Scalar>& x,
                                   const DropoutMasks<Scalar>& masks, bool commit_running_stats) {
  const auto& spec = params.spec;
  const Eigen::Index n = x.rows();
  if (x.cols() != static_cast<Eigen::Index>(spec.input_dim)) throw ArgumentError("batch width != input_dim");
  if (spec.batch_norm && n < 2) throw ArgumentError("train-mode batch norm needs a batch of >= 2");
  if (!x.allFinite()) throw ArgumentError("non-finite value in batch");
  if (masks.layers.size() != params.hidden.size()) throw ArgumentError("dropout masks do not match depth");

  ForwardCache<Scalar> cache;
  cache.batch = n;
  MatrixX<Scalar> a = x;
  for (std::size_t l = 0; l < params.hidden.size(); ++l) {
    auto& layer = params.hidden[l];
    LayerCache<Scalar> lc;
    lc.input = std::move(a);
    MatrixX<Scalar> z = (lc.input * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    if (spec.batch_norm) {
      const RowVectorX<Scalar> mean = z.colwise().mean();
      z.rowwise() -= mean;
      const RowVectorX<Scalar> var = z.array().square().colwise().mean();
      lc.inv_std = (var.array() + Scalar(spec.bn_epsilon)).rsqrt();
      lc.normalized = z.array().rowwise() * lc.inv_std.array();
      lc.pre_relu = (lc.normalized.array().rowwise() * layer.bn_scale.transpose().array()).rowwise() +
                    layer.bn_shift.transpose().array();
      if (commit_running_stats) {
        const Scalar m = Scalar(spec.bn_momentum);
        // running variance tracks the unbiased estimate
        const Scalar unbias = Scalar(n) / Scalar(n - 1);
        layer.running_mean = (1 - m) * layer.running_mean + m * mean.transpose();
        layer.running_var = (1 - m) * layer.running_var + (m * unbias) * var.transpose();
      }
    } else {
      lc.normalized = z;
      lc.pre_relu = std::move(z);
    }
    const auto& mask = masks.layers[l];
    if (mask.rows() != n || mask.cols() != lc.pre_relu.cols()) throw ArgumentError("dropout mask shape mismatch");
    lc.dropout = mask;
    a = lc.pre_relu.cwiseMax(Scalar(0)).cwiseProduct(mask);
    cache.layers.push_back(std::move(lc));
  }
  cache.logits = (a * params.out_weight.transpose()).array() + params.out_bias;
  cache.last_activation = std::move(a);
  return cache;
}

/// Eval-mode logits: running batch-norm statistics, no dropout. Pure.
template <typename Scalar>
VectorX<Scalar> predict_logits(const MlpParams<Scalar>& params, const MatrixX<Scalar>& x) {
  const auto& spec = params.spec;
  if (x.cols() != static_cast<Eigen::Index>(spec.input_dim)) throw ArgumentError("batch width != input_dim");
  if (!x.allFinite()) throw ArgumentError("non-finite value in batch");
  MatrixX<Scalar> a = x;
  for (const auto& layer : params.hidden) {
    MatrixX<Scalar> z = (a * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    if (spec.batch_norm) {
      const RowVectorX<Scalar> scale =
          layer.bn_scale.transpose().array() * (layer.running_var.transpose().array() + Scalar(spec.bn_epsilon)).rsqrt();
      const RowVectorX<Scalar> shift =
          layer.bn_shift.transpose().array() - layer.running_mean.transpose().array() * scale.array();
      z = (z.array().rowwise() * scale.array()).rowwise() + shift.array();
    }
    a = z.cwiseMax(Scalar(0));
  }
  return (a * params.out_weight.transpose()).array() + params.out_bias;
}

/// Eval-mode logits over a whole bank, computed in chunks of `chunk` rows.
template <typename Scalar = double>
VectorX<Scalar> predict_logits(const MlpParams<Scalar>& params, const FeatureBank& bank, std::size_t chunk = 1024) {
  if (bank.dim() != params.spec.input_dim) throw ArgumentError("bank dim != model input_dim");
  if (chunk == 0) throw ArgumentError("chunk must be >= 1");
  const auto n = static_cast<Eigen::Index>(bank.size());
  VectorX<Scalar> out(n);
  for (Eigen::Index start = 0; start < n; start += static_cast<Eigen::Index>(chunk)) {
    const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), n - start);
    MatrixX<Scalar> x = bank.features().middleRows(start, len).template cast<Scalar>();
    out.segment(start, len) = predict_logits(params, x);
  }
  return out;
}

/// Convenience wrapper: eval mode ignores `rng` and returns an empty cache
/// apart from logits; train mode samples dropout masks and commits running
/// statistics.
template <typename Scalar>
ForwardCache<Scalar> forward(MlpParams<Scalar>& params, const MatrixX<Scalar>& x, Mode mode, Rng& rng) {
  if (mode == Mode::eval) {
    ForwardCache<Scalar> c;
    c.batch = x.rows();
    c.logits = predict_logits(std::as_const(params), x);
    return c;
  }
  auto masks = sample_dropout_masks<Scalar>(params.spec, x.rows(), rng);
  return train_forward(params, x, masks, true);
}

/// Gradient of sum_i dL/dlogit_i * logit_i w.r.t. the trainable parameters,
/// through batch statistics and the cached dropout masks.
template <typename Scalar>
MlpParams<Scalar> backward(const MlpParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                           const VectorX<Scalar>& dlogits) {
  if (dlogits.size() != cache.batch || cache.layers.size() != params.hidden.size())
    throw ArgumentError("cache does not match gradient / params");
  const bool bn = params.spec.batch_norm;
  auto grads = zeros_like(params);

  grads.out_weight = dlogits.transpose() * cache.last_activation;
  grads.out_bias = dlogits.sum();
  MatrixX<Scalar> da = dlogits * params.out_weight;

  const Scalar n = Scalar(cache.batch);
  for (std::size_t li = params.hidden.size(); li-- > 0;) {
    const auto& layer = params.hidden[li];
    const auto& lc = cache.layers[li];
    auto& g = grads.hidden[li];
    MatrixX<Scalar> dy = da.cwiseProduct(lc.dropout);
    dy = (lc.pre_relu.array() > Scalar(0)).select(dy, Scalar(0));
    MatrixX<Scalar> dz;
    if (bn) {
      g.bn_scale = dy.cwiseProduct(lc.normalized).colwise().sum().transpose();
      g.bn_shift = dy.colwise().sum().transpose();
      const MatrixX<Scalar> dxhat = dy.array().rowwise() * layer.bn_scale.transpose().array();
      const RowVectorX<Scalar> sum_dxhat = dxhat.colwise().sum();
      const RowVectorX<Scalar> sum_dxhat_xhat = dxhat.cwiseProduct(lc.normalized).colwise().sum();
      dz = (n * dxhat.array()).rowwise() - sum_dxhat.array();
      dz.array() -= lc.normalized.array().rowwise() * sum_dxhat_xhat.array();
      dz = dz.array().rowwise() * (lc.inv_std.array() / n);
    } else {
      dz = std::move(dy);
    }
    g.weight = dz.transpose() * lc.input;
    g.bias = dz.colwise().sum().transpose();
    if (li > 0) da = dz * layer.weight;
  }
  return grads;
}

}  // namespace robdet
