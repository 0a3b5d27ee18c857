#pragma once

// Reference computations used only by tests. They deliberately avoid the
// library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

/// Central difference of f at x along each coordinate.
inline std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// |a-b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fraction of (pos, neg) pairs with pos > neg, ties worth 1/2.
inline double pair_count_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double credit = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        credit += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return credit / pairs;
}

/// Fraction of pairs with pos <= neg, and the tie mass separately.
inline std::pair<double, double> pair_count_indicator(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double bad = 0, ties = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        if (s[i] <= s[j]) bad += 1;
        if (s[i] == s[j]) ties += 1;
      }
  return {bad / pairs, ties / pairs};
}

inline double cvar_phi(const std::vector<double>& l, double lambda, double alpha) {
  double acc = 0;
  for (double v : l) acc += std::max(v - lambda, 0.0);
  return lambda + acc / (alpha * static_cast<double>(l.size()));
}

/// Minimum of phi over a uniform grid on [min, max] plus every loss value.
inline double grid_cvar(const std::vector<double>& l, double alpha, int steps = 20000) {
  const double lo = *std::min_element(l.begin(), l.end()), hi = *std::max_element(l.begin(), l.end());
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= steps; ++k) best = std::min(best, cvar_phi(l, lo + (hi - lo) * k / steps, alpha));
  for (double v : l) best = std::min(best, cvar_phi(l, v, alpha));
  return best;
}

/// EER by threshold scan: the threshold where |FPR - FNR| is smallest,
/// reported as the mean of the two rates there.
inline double grid_eer(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double lo, double hi,
                       double step) {
  double best_gap = 2, best = 0;
  for (double t = lo; t <= hi; t += step) {
    double fp = 0, fn = 0, p = 0, n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (y[i] == 1) p += 1, fn += s[i] < t;
      else n += 1, fp += s[i] >= t;
    }
    const double fpr = fp / n, fnr = fn / p;
    if (std::abs(fpr - fnr) < best_gap) best_gap = std::abs(fpr - fnr), best = (fpr + fnr) / 2;
  }
  return best;
}

/// Rows of a CSV as doubles via iostreams; '#' lines skipped.
inline std::vector<std::vector<double>> read_csv_numbers(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace oracle
