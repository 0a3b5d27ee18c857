#include "robdet/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "robdet/errors.hpp"
#include "robdet/rng.hpp"

namespace robdet {

namespace {

// substream tags
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDropoutStream = 2;

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void require_both_classes(const FeatureBank& bank, const char* what) {
  auto c = class_counts(bank);
  if (c.n_real == 0 || c.n_fake == 0) throw ArgumentError(std::string(what) + " bank must contain both classes");
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 2) throw ArgumentError("batch_size must be >= 2");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0,1]");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ArgumentError("gamma must be finite and >= 0");
  if (!(nu >= 0.0) || !std::isfinite(nu)) throw ArgumentError("nu must be finite and >= 0");
  if (!(beta_noise >= 0.0) || !std::isfinite(beta_noise)) throw ArgumentError("beta_noise must be finite and >= 0");
  if (!(min_lr >= 0.0)) throw ArgumentError("min_lr must be >= 0");
  adamw.validate();
  objective({1, 1}).cvar.validate();
  objective({1, 1}).vs.validate();
}

Objective TrainConfig::objective(const ClassCounts& train_counts) const {
  Objective obj;
  obj.kind = loss_kind;
  obj.vs = vs;
  std::tie(obj.vs.omega_fake, obj.vs.omega_real) = default_omegas(train_counts);
  obj.cvar = {alpha, lambda_tolerance, max_bisection_iters};
  obj.gamma = gamma;
  return obj;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_stream(seed, {kShuffleStream, epoch});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    if (end - start < 2) break;  // batch norm needs two rows
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

EvalReport evaluate(const MlpParams<double>& params, const FeatureBank& bank) {
  const Eigen::VectorXd logits = predict_logits(params, bank);
  return classification_report(logits, bank.labels(), 0.0);
}

TrainOutcome train(const FeatureBank& train_bank, const FeatureBank& val_bank, const TrainConfig& cfg,
                   const TrainControl& control) {
  cfg.validate();
  require_both_classes(train_bank, "training");
  require_both_classes(val_bank, "validation");
  if (train_bank.dim() != val_bank.dim()) throw ArgumentError("training and validation banks differ in dim");

  MlpSpec spec = cfg.mlp;
  spec.input_dim = train_bank.dim();
  const auto objective = cfg.objective(class_counts(train_bank));
  const auto schedule = cfg.schedule();
  const SamConfig sam{cfg.nu};

  const std::size_t batches_per_epoch = epoch_batches(train_bank.size(), cfg.batch_size, cfg.seed, 0).size();
  if (batches_per_epoch == 0) throw ArgumentError("training bank too small for one batch");

  MlpParams<double> params;
  AdamWState<double> opt;
  std::size_t first_epoch = 0;
  if (control.resume_from) {
    params = control.resume_from->params;
    if (params.spec != spec) throw ArgumentError("resume checkpoint architecture differs from config");
    if (!control.resume_from->optimizer) throw ArgumentError("resume checkpoint has no optimizer state");
    opt = *control.resume_from->optimizer;
    if (opt.step % batches_per_epoch != 0) throw ArgumentError("resume checkpoint is not at an epoch boundary");
    first_epoch = opt.step / batches_per_epoch;
  } else {
    params = init_params<double>(spec, cfg.seed);
    opt = AdamWState<double>::zeros_for(params);
  }
  const std::size_t last_epoch = std::min(cfg.epochs, control.stop_after_epochs.value_or(cfg.epochs));

  const Eigen::MatrixXd all_x = train_bank.features().cast<double>();
  TrainOutcome out;
  double best_auc = -1.0;

  for (std::size_t epoch = first_epoch; epoch < last_epoch; ++epoch) {
    const double lr = lr_at(schedule, cfg.adamw, epoch);
    const auto batches = epoch_batches(train_bank.size(), cfg.batch_size, cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    double loss_sum = 0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), all_x.cols());
      std::vector<std::uint8_t> labels(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = all_x.row(static_cast<Eigen::Index>(rows[i]));
        labels[i] = train_bank.label(rows[i]);
      }
      auto mask_rng = make_stream(cfg.seed, {kDropoutStream, epoch, b});
      const auto masks = sample_dropout_masks<double>(spec, x.rows(), mask_rng);

      bool skipped = false;
      auto loss_and_grad = [&](MlpParams<double>& at, bool commit) {
        auto cache = train_forward(at, x, masks, commit);
        auto lb = total_loss<double>(cache.logits, labels, objective);
        if (commit) skipped = lb.auc_skipped;
        return LossAndGrad<double>{lb.total, backward(at, cache, lb.grad)};
      };

      const auto where = " at epoch " + std::to_string(epoch) + " batch " + std::to_string(b);
      SamStep<double> step;
      try {
        step = sam_update(params, opt, cfg.adamw, sam, lr, loss_and_grad);
      } catch (const NumericError& e) {
        throw NumericError(e.what() + where);
      }
      if (!std::isfinite(step.loss) || !std::isfinite(step.perturbed_loss))
        throw NumericError("non-finite loss" + where);
      loss_sum += step.loss;
      if (skipped) ++rec.skipped_auc_batches;
    }
    rec.mean_loss = loss_sum / static_cast<double>(batches.size());
    rec.validation = evaluate(params, val_bank);
    if (rec.validation.auc > best_auc) {
      best_auc = rec.validation.auc;
      out.best_params = params;
      out.best_epoch = epoch;
    }
    out.history.push_back(std::move(rec));
  }
  if (out.history.empty()) {
    out.best_params = params;
    out.best_epoch = first_epoch;
  }
  out.final_params = std::move(params);
  out.final_optimizer = std::move(opt);
  return out;
}

std::string format_epoch_line(const EpochRecord& r) {
  return "epoch=" + std::to_string(r.epoch) + " loss=" + fmt(r.mean_loss) + " lr=" + fmt(r.lr) +
         " val_auc=" + fmt(r.validation.auc) + " val_acc=" + fmt(r.validation.accuracy) +
         " val_eer=" + fmt(r.validation.eer) + " skipped_auc_batches=" + std::to_string(r.skipped_auc_batches);
}

std::string format_train_log(std::span<const EpochRecord> history) {
  std::string out;
  for (const auto& r : history) out += format_epoch_line(r) + "\n";
  return out;
}

std::vector<AblationRow> ablate_gamma(const FeatureBank& train_bank, const FeatureBank& val_bank,
                                      const TrainConfig& cfg, std::span<const double> gammas) {
  if (gammas.empty()) throw ArgumentError("gamma sweep needs at least one value");
  std::vector<AblationRow> rows;
  for (double g : gammas) {
    auto c = cfg;
    c.gamma = g;
    auto outcome = train(train_bank, val_bank, c);
    rows.push_back({g, evaluate(outcome.best_params, val_bank)});
  }
  return rows;
}

std::vector<AblationRow> ablate_depth(const FeatureBank& train_bank, const FeatureBank& val_bank,
                                      const TrainConfig& cfg, std::span<const std::size_t> depths) {
  if (depths.empty()) throw ArgumentError("depth sweep needs at least one value");
  for (auto d : depths)
    if (d == 0 || d % 3 != 0 || d > 15) throw ArgumentError("depth " + std::to_string(d) + " not in {3,6,9,12,15}");
  std::vector<AblationRow> rows;
  for (auto d : depths) {
    auto c = cfg;
    c.mlp = with_depth(cfg.mlp, d);
    auto outcome = train(train_bank, val_bank, c);
    rows.push_back({static_cast<double>(d), evaluate(outcome.best_params, val_bank)});
  }
  return rows;
}

std::string format_ablation_csv(std::string_view name, std::span<const AblationRow> rows) {
  std::string out = std::string(name) + ",auc,accuracy,f1,precision,recall,eer\n";
  for (const auto& r : rows) {
    out += fmt(r.value);
    for (double v : {r.report.auc, r.report.accuracy, r.report.f1, r.report.precision, r.report.recall, r.report.eer})
      out += "," + fmt(v);
    out += "\n";
  }
  return out;
}

}  // namespace robdet
