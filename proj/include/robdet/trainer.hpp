#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robdet/checkpoint.hpp"
#include "robdet/feature_bank.hpp"
#include "robdet/losses.hpp"
#include "robdet/metrics.hpp"
#include "robdet/mlp.hpp"
#include "robdet/optimizer.hpp"

namespace robdet {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 8079;
  double alpha = 0.9;
  double gamma = 0.6;
  double nu = 0.1;
  double beta_noise = 0.5;  ///< augmentation noise scale, applied by callers before train()
  LossKind loss_kind = LossKind::cvar_vs_auc;

  MlpSpec mlp;  ///< input_dim is taken from the training bank
  AdamWConfig adamw;
  double min_lr = 0.0;
  /// Only zetas and deltas are read; omegas come from the training bank's
  /// class counts.
  VsParams vs;
  double lambda_tolerance = 1e-8;
  int max_bisection_iters = 100;

  void validate() const;
  CosineSchedule schedule() const { return {epochs, min_lr}; }
  Objective objective(const ClassCounts& train_counts) const;
};

struct EpochRecord {
  std::size_t epoch = 0;  ///< 0-based
  double mean_loss = 0;   ///< mean pass-1 total loss over batches
  double lr = 0;
  EvalReport validation;
  std::size_t skipped_auc_batches = 0;
};

struct TrainOutcome {
  MlpParams<double> best_params;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  MlpParams<double> final_params;
  AdamWState<double> final_optimizer;
};

/// Continue from a snapshot taken at an epoch boundary, and/or stop early
/// while keeping the full-length cosine schedule.
struct TrainControl {
  std::optional<Checkpoint> resume_from;
  std::optional<std::size_t> stop_after_epochs;
};

/// Mini-batch training with SAM + AdamW and best-by-validation-AUC
/// selection. Deterministic in (banks, cfg).
TrainOutcome train(const FeatureBank& train_bank, const FeatureBank& val_bank, const TrainConfig& cfg,
                   const TrainControl& control = {});

/// Eval-mode logits -> classification_report at threshold 0.
EvalReport evaluate(const MlpParams<double>& params, const FeatureBank& bank);

/// Row indices of each batch for one epoch: a seed-derived shuffle cut into
/// batch_size chunks; a final chunk of one sample is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

std::string format_epoch_line(const EpochRecord& rec);
std::string format_train_log(std::span<const EpochRecord> history);

struct AblationRow {
  double value = 0;
  EvalReport report;
};

std::vector<AblationRow> ablate_gamma(const FeatureBank& train_bank, const FeatureBank& val_bank,
                                      const TrainConfig& cfg, std::span<const double> gammas);

/// Depths are total affine layers and must be in {3, 6, 9, 12, 15}.
std::vector<AblationRow> ablate_depth(const FeatureBank& train_bank, const FeatureBank& val_bank,
                                      const TrainConfig& cfg, std::span<const std::size_t> depths);

/// Header `<name>,auc,accuracy,f1,precision,recall,eer`.
std::string format_ablation_csv(std::string_view name, std::span<const AblationRow> rows);

}  // namespace robdet
