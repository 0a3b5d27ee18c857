#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace robdet {

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;  ///< predict real iff score >= threshold
};

struct EvalReport {
  double auc = 0, accuracy = 0, f1 = 0, precision = 0, recall = 0, eer = 0;
  double threshold_used = 0;
  std::vector<RocPoint> roc_points;
};

/// Mann-Whitney AUC with half credit for ties. Throws UndefinedMetricError
/// unless both classes are present.
double auc_score(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels);

/// Points for thresholds +inf then each distinct score, descending. The
/// first point is (0,0) and the last (1,1).
std::vector<RocPoint> roc_curve(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels);

/// Trapezoidal area under ROC points.
double roc_area(std::span<const RocPoint> roc);

/// Crossing of FPR and FNR = 1 - TPR along the ROC, linearly interpolated.
double eer(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels);
double eer_from_roc(std::span<const RocPoint> roc);

/// Predicts real iff score > threshold. Precision, recall and F1 are
/// macro-averaged over the two classes; an undefined ratio counts as 0.
EvalReport classification_report(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                  std::span<const std::uint8_t> labels, double threshold = 0.0);

/// `auc=...` lines for the six headline metrics.
std::string format_report(const EvalReport& report);
EvalReport parse_report(std::string_view text);

/// CSV with header "threshold,fpr,tpr".
std::string format_roc_csv(std::span<const RocPoint> roc);
std::vector<RocPoint> parse_roc_csv(std::string_view text);

}  // namespace robdet
