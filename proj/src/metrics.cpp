#include "robdet/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "robdet/errors.hpp"
#include "robdet/feature_bank.hpp"

namespace robdet {

namespace {

void check_inputs(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels) {
  if (static_cast<std::size_t>(scores.size()) != labels.size())
    throw ArgumentError("scores and labels differ in length");
  const auto pos = std::count(labels.begin(), labels.end(), kReal);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw UndefinedMetricError("metric needs both classes present");
  if (!scores.allFinite()) throw ArgumentError("non-finite score");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(std::string_view s) {
  double v{};
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw FormatError("bad number '" + std::string(s) + "'");
  return v;
}

}  // namespace

double auc_score(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  // rank-sum over score groups, ties get half credit
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[Eigen::Index(a)] < scores[Eigen::Index(b)]; });

  double neg_below = 0, credit = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[Eigen::Index(order[j])] == scores[Eigen::Index(order[i])]) {
      (labels[order[j]] == kReal ? group_pos : group_neg) += 1;
      ++j;
    }
    credit += group_pos * (neg_below + 0.5 * group_neg);
    neg_below += group_neg;
    pos += group_pos;
    neg += group_neg;
    i = j;
  }
  return credit / (pos * neg);
}

std::vector<RocPoint> roc_curve(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels) {
  check_inputs(scores, labels);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[Eigen::Index(a)] > scores[Eigen::Index(b)]; });
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), kReal));
  const double neg = static_cast<double>(labels.size()) - pos;

  std::vector<RocPoint> roc{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[Eigen::Index(order[i])];
    while (i < order.size() && scores[Eigen::Index(order[i])] == t) {
      (labels[order[i]] == kReal ? tp : fp) += 1;
      ++i;
    }
    roc.push_back({fp / neg, tp / pos, t});
  }
  return roc;
}

double roc_area(std::span<const RocPoint> roc) {
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  return area;
}

double eer_from_roc(std::span<const RocPoint> roc) {
  if (roc.empty()) throw ArgumentError("empty ROC");
  // d = FPR - FNR rises from -1 at (0,0) to +1 at (1,1)
  auto gap = [](const RocPoint& p) { return p.fpr - (1.0 - p.tpr); };
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const double d0 = gap(roc[i - 1]), d1 = gap(roc[i]);
    if (d0 < 0 && d1 >= 0) {
      const double s = -d0 / (d1 - d0);
      return roc[i - 1].fpr + s * (roc[i].fpr - roc[i - 1].fpr);
    }
  }
  return gap(roc.front()) >= 0 ? roc.front().fpr : roc.back().fpr;
}

double eer(const Eigen::Ref<const Eigen::VectorXd>& scores, std::span<const std::uint8_t> labels) {
  return eer_from_roc(roc_curve(scores, labels));
}

EvalReport classification_report(const Eigen::Ref<const Eigen::VectorXd>& scores,
                                  std::span<const std::uint8_t> labels, double threshold) {
  check_inputs(scores, labels);
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted_real = scores[Eigen::Index(i)] > threshold;
    if (labels[i] == kReal) (predicted_real ? tp : fn) += 1;
    else (predicted_real ? fp : tn) += 1;
  }
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  auto f1 = [](double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; };
  const double prec_real = ratio(tp, tp + fp), rec_real = ratio(tp, tp + fn);
  const double prec_fake = ratio(tn, tn + fn), rec_fake = ratio(tn, tn + fp);

  EvalReport r;
  r.accuracy = (tp + tn) / static_cast<double>(labels.size());
  r.precision = (prec_real + prec_fake) / 2;
  r.recall = (rec_real + rec_fake) / 2;
  r.f1 = (f1(prec_real, rec_real) + f1(prec_fake, rec_fake)) / 2;
  r.threshold_used = threshold;
  r.roc_points = roc_curve(scores, labels);
  r.auc = auc_score(scores, labels);
  r.eer = eer_from_roc(r.roc_points);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::string out;
  for (auto [k, v] : {std::pair{"auc", r.auc}, {"accuracy", r.accuracy}, {"f1", r.f1}, {"precision", r.precision},
                      {"recall", r.recall}, {"eer", r.eer}})
    out += std::string(k) + "=" + fmt(v) + "\n";
  return out;
}

EvalReport parse_report(std::string_view text) {
  EvalReport r;
  unsigned seen = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("missing '=' in report line");
    auto key = line.substr(0, eq);
    double v = parse_double(line.substr(eq + 1));
    const std::pair<std::string_view, double*> fields[] = {{"auc", &r.auc},         {"accuracy", &r.accuracy},
                                                           {"f1", &r.f1},           {"precision", &r.precision},
                                                           {"recall", &r.recall},   {"eer", &r.eer}};
    bool found = false;
    for (std::size_t i = 0; i < std::size(fields); ++i) {
      if (fields[i].first == key) {
        *fields[i].second = v;
        seen |= 1u << i;
        found = true;
      }
    }
    if (!found) throw FormatError("unknown report key '" + std::string(key) + "'");
  }
  if (seen != 0x3f) throw FormatError("report is missing keys");
  return r;
}

std::string format_roc_csv(std::span<const RocPoint> roc) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : roc) {
    out += std::isinf(p.threshold) ? (p.threshold > 0 ? "inf" : "-inf") : fmt(p.threshold);
    out += "," + fmt(p.fpr) + "," + fmt(p.tpr) + "\n";
  }
  return out;
}

std::vector<RocPoint> parse_roc_csv(std::string_view text) {
  std::vector<RocPoint> out;
  bool header = true;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;
    if (header) {
      if (line != "threshold,fpr,tpr") throw FormatError("bad ROC header");
      header = false;
      continue;
    }
    auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos)
      throw FormatError("bad ROC row at line " + std::to_string(line_no));
    out.push_back({parse_double(line.substr(c1 + 1, c2 - c1 - 1)), parse_double(line.substr(c2 + 1)),
                   parse_double(line.substr(0, c1))});
  }
  return out;
}

}  // namespace robdet
