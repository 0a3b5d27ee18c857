#include <doctest.h>

#include "oracles.hpp"
#include "robdet/losses.hpp"
#include "robdet/mlp.hpp"

using namespace robdet;
using Params = MlpParams<double>;

namespace {

MlpSpec small_spec(std::size_t in, std::vector<std::size_t> hidden, double dropout = 0.0) {
  MlpSpec s;
  s.input_dim = in;
  s.hidden_dims = std::move(hidden);
  s.dropout_rate = dropout;
  return s;
}

Eigen::MatrixXd random_batch(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

// Randomize scale/shift too so their gradients are non-trivial.
void jitter_bn(Params& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5), v(-0.5, 0.5);
  for (auto& l : p.hidden) {
    for (auto& s : l.bn_scale) s = u(rng);
    for (auto& s : l.bn_shift) s = v(rng);
    for (auto& s : l.bias) s = v(rng);
  }
  p.out_bias = v(rng);
}

std::vector<double> flatten(const Params& p) {
  std::vector<double> out;
  for (const auto& b : blocks(p)) out.insert(out.end(), b.data(), b.data() + b.size());
  return out;
}

void unflatten(Params& p, const std::vector<double>& flat) {
  std::size_t k = 0;
  for (auto& b : blocks(p))
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = flat[k++];
}

/// Max relative error of backward() against central differences of
/// sum_i c_i * logit_i.
double gradient_check(const Params& base, const Eigen::MatrixXd& x, std::uint64_t seed) {
  Rng rng(seed);
  const auto masks = sample_dropout_masks<double>(base.spec, x.rows(), rng);
  std::normal_distribution<double> normal;
  Eigen::VectorXd c(x.rows());
  for (auto& v : c) v = normal(rng);

  Params p = base;
  auto cache = train_forward(p, x, masks, false);
  const auto analytic = flatten(backward(p, cache, c));

  auto f = [&](const std::vector<double>& flat) {
    Params q = base;
    unflatten(q, flat);
    return c.dot(train_forward(q, x, masks, false).logits);
  };
  const auto numeric = oracle::central_diff(f, flatten(base), 1e-5);
  double worst = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i) worst = std::max(worst, oracle::rel_err(analytic[i], numeric[i]));
  return worst;
}

}  // namespace

TEST_CASE("init is deterministic and respects the Glorot bound") {
  auto spec = small_spec(4, {4});
  CHECK(init_params<double>(spec, 3) == init_params<double>(spec, 3));
  CHECK_FALSE(init_params<double>(spec, 3) == init_params<double>(spec, 4));
  auto p = init_params<double>(spec, 3);
  CHECK(p.hidden[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(0.75));
  CHECK(p.hidden[0].bias.isZero());
  CHECK(p.hidden[0].bn_scale.isOnes());
  CHECK(p.hidden[0].running_var.isOnes());
  CHECK(p.out_bias == 0.0);
}

TEST_CASE("fresh batch norm in eval mode is the identity up to the epsilon scale") {
  auto spec = small_spec(3, {5, 4});
  auto with_bn = init_params<double>(spec, 1);
  auto without = with_bn;
  without.spec.batch_norm = false;
  auto x = random_batch(6, 3, 2);
  // running var 1 -> each BN divides by sqrt(1 + eps)
  const double k = std::pow(1.0 + spec.bn_epsilon, -0.5 * 2);
  CHECK((predict_logits(with_bn, x) - k * predict_logits(without, x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero output layer gives zero logits") {
  auto p = init_params<double>(small_spec(3, {4}), 1);
  p.out_weight.setZero();
  p.out_bias = 0;
  auto x = random_batch(5, 3, 1);
  CHECK(predict_logits(p, x).isZero());
  Rng rng(1);
  CHECK(forward(p, x, Mode::train, rng).logits.isZero());
}

TEST_CASE("eval mode ignores dropout and is pure") {
  auto p = init_params<double>(small_spec(3, {8, 8}, 0.3), 5);
  const auto before = p;
  auto x = random_batch(7, 3, 4);
  Rng a(1), b(2);
  auto l1 = forward(p, x, Mode::eval, a).logits;
  auto l2 = forward(p, x, Mode::eval, b).logits;
  CHECK(l1 == l2);
  CHECK(p == before);
}

TEST_CASE("bank inference does not depend on chunking") {
  auto bank = generate_synthetic(9, 8, 6, 1.0, 3);
  auto p = init_params<double>(small_spec(6, {8, 4}), 7);
  // give running stats non-trivial values first
  Rng rng(3);
  Eigen::MatrixXd x = bank.features().cast<double>();
  forward(p, x, Mode::train, rng);
  auto whole = predict_logits(p, bank, 1000);
  CHECK(predict_logits(p, bank, 1) == whole);
  CHECK(predict_logits(p, bank, 4) == whole);
  CHECK_THROWS_AS(predict_logits(p, generate_synthetic(1, 1, 5, 1.0, 1)), ArgumentError);
}

TEST_CASE("single hidden layer matches a step-by-step recomputation") {
  auto spec = small_spec(2, {2});
  auto p = init_params<double>(spec, 0);
  p.hidden[0].weight << 0.5, -1.0, 2.0, 0.25;
  p.hidden[0].bias << 0.1, -0.2;
  p.hidden[0].bn_scale << 1.5, 0.5;
  p.hidden[0].bn_shift << 0.3, -0.1;
  p.out_weight << 1.0, -2.0;
  p.out_bias = 0.05;
  Eigen::MatrixXd x(3, 2);
  x << 1.0, 2.0, -1.0, 0.5, 0.0, -3.0;

  // recomputation with scalar loops
  double z[3][2], y[3][2];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) z[i][j] = p.hidden[0].weight(j, 0) * x(i, 0) + p.hidden[0].weight(j, 1) * x(i, 1) + p.hidden[0].bias[j];
  for (int j = 0; j < 2; ++j) {
    const double mu = (z[0][j] + z[1][j] + z[2][j]) / 3;
    double var = 0;
    for (int i = 0; i < 3; ++i) var += (z[i][j] - mu) * (z[i][j] - mu);
    var /= 3;
    for (int i = 0; i < 3; ++i) {
      const double bn = (z[i][j] - mu) / std::sqrt(var + 1e-5) * p.hidden[0].bn_scale[j] + p.hidden[0].bn_shift[j];
      y[i][j] = bn > 0 ? bn : 0;
    }
  }
  Rng rng(0);
  const auto masks = sample_dropout_masks<double>(spec, 3, rng);
  auto cache = train_forward(p, x, masks, false);
  for (int i = 0; i < 3; ++i) {
    const double expect = y[i][0] * 1.0 + y[i][1] * -2.0 + 0.05;
    CHECK(std::abs(cache.logits[i] - expect) < 1e-10);
  }
}

TEST_CASE("train forward updates only running statistics") {
  auto p = init_params<double>(small_spec(3, {4}), 2);
  const auto before = p;
  auto x = random_batch(5, 3, 9);
  Rng rng(1);
  forward(p, x, Mode::train, rng);
  CHECK(p.hidden[0].weight == before.hidden[0].weight);
  CHECK(p.hidden[0].bn_scale == before.hidden[0].bn_scale);
  CHECK(p.out_weight == before.out_weight);
  CHECK_FALSE(p.hidden[0].running_mean == before.hidden[0].running_mean);
  // momentum 0.1 from zero: running mean is a tenth of the batch mean
  Eigen::MatrixXd z = x * before.hidden[0].weight.transpose();
  CHECK((p.hidden[0].running_mean - 0.1 * z.colwise().mean().transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward argument errors") {
  auto p = init_params<double>(small_spec(3, {4}), 2);
  Rng rng(1);
  CHECK_THROWS_AS(forward(p, random_batch(1, 3, 1), Mode::train, rng), ArgumentError);
  CHECK_THROWS_AS(forward(p, random_batch(4, 2, 1), Mode::train, rng), ArgumentError);
  Eigen::MatrixXd bad = random_batch(4, 3, 1);
  bad(2, 1) = std::nan("");
  CHECK_THROWS_AS(forward(p, bad, Mode::train, rng), ArgumentError);
  CHECK_THROWS_AS(forward(p, bad, Mode::eval, rng), ArgumentError);
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  auto p = init_params<double>(small_spec(4, {3, 3}, 0.2), 1);
  Rng rng(2);
  auto cache = forward(p, random_batch(5, 4, 3), Mode::train, rng);
  auto g = backward(p, cache, Eigen::VectorXd(Eigen::VectorXd::Zero(5)));
  for (const auto& b : blocks(std::as_const(g))) CHECK(b.isZero());
  CHECK_THROWS_AS(backward(p, cache, Eigen::VectorXd(Eigen::VectorXd::Zero(4))), ArgumentError);
}

TEST_CASE("logistic regression corner: output weight gradient is -x/2") {
  auto spec = small_spec(3, {});
  spec.batch_norm = false;
  auto p = init_params<double>(spec, 1);
  p.out_weight.setZero();
  Eigen::MatrixXd x(1, 3);
  x << 0.4, -1.0, 2.5;
  Rng rng(0);
  auto cache = forward(p, x, Mode::train, rng);
  const auto d = ce_loss(cache.logits[0], kReal).grad;
  CHECK(d == -0.5);
  auto g = backward(p, cache, Eigen::VectorXd(Eigen::VectorXd::Constant(1, d)));
  CHECK((g.out_weight - (-0.5 * x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches finite differences on a 5-[4,3] net") {
  auto p = init_params<double>(small_spec(5, {4, 3}, 0.25), 42);
  jitter_bn(p, 42);
  CHECK(gradient_check(p, random_batch(6, 5, 42), 42) < 1e-4);
}

TEST_CASE("property: backward matches finite differences on random nets") {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<std::size_t> width(1, 8), depth(0, 2), batch(2, 8);
    std::vector<std::size_t> hidden(depth(gen));
    for (auto& h : hidden) h = width(gen);
    auto spec = small_spec(width(gen), hidden, trial % 2 ? 0.3 : 0.0);
    spec.batch_norm = trial % 3 != 0;
    auto p = init_params<double>(spec, gen());
    jitter_bn(p, gen());
    const auto err = gradient_check(p, random_batch(static_cast<Eigen::Index>(batch(gen)),
                                                    static_cast<Eigen::Index>(spec.input_dim), gen()),
                                    gen());
    CHECK_MESSAGE(err < 1e-4, "trial " << trial);
  }
}

TEST_CASE("with_depth replicates width-256 blocks") {
  MlpSpec base;
  CHECK(with_depth(base, 3).hidden_dims == std::vector<std::size_t>{512, 256});
  CHECK(with_depth(base, 6).hidden_dims == std::vector<std::size_t>{512, 256, 256, 256, 256});
  CHECK(with_depth(base, 15).depth() == 15);
  CHECK(with_depth(base, 1).hidden_dims.empty());
}
