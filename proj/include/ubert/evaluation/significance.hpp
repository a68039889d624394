// Paired Wilcoxon signed-rank test and Holm step-down correction.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ubert::eval {

struct WilcoxonResult {
  double p_value = 1.0;
  double w_plus = 0.0;   // sum of ranks of positive differences
  std::size_t m = 0;     // non-zero differences
  bool exact = false;
};

namespace detail {

// Average ranks (1-based) of |d|, with the tie-group sizes.
inline std::vector<double> abs_ranks(std::span<const double> d, std::vector<std::size_t>* tie_sizes) {
  const std::size_t m = d.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> ranks(m);
  for (std::size_t i = 0; i < m;) {
    std::size_t j = i;
    while (j + 1 < m && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double r = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    if (tie_sizes) tie_sizes->push_back(j - i + 1);
    i = j + 1;
  }
  return ranks;
}

inline std::vector<double> nonzero_differences(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("wilcoxon_signed_rank: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + " paired scores");
  }
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  }
  return d;
}

}  // namespace detail

// Exact two-sided p by enumerating all 2^m sign assignments through the
// distribution of the rank sum (ranks doubled so midranks stay integral).
inline WilcoxonResult wilcoxon_exact(std::span<const double> d) {
  WilcoxonResult res{1.0, 0.0, d.size(), true};
  if (d.empty()) return res;
  auto ranks = detail::abs_ranks(d, nullptr);
  std::vector<std::size_t> doubled(ranks.size());
  std::size_t total = 0, observed = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = static_cast<std::size_t>(std::lround(2 * ranks[i]));
    total += doubled[i];
    if (d[i] > 0) observed += doubled[i];
  }
  std::vector<double> ways(total + 1, 0.0);
  ways[0] = 1.0;
  for (auto r : doubled)
    for (std::size_t s = total; s >= r; --s) {
      ways[s] += ways[s - r];
      if (s == r) break;
    }
  const double all = std::ldexp(1.0, static_cast<int>(d.size()));
  double lower = 0, upper = 0;
  for (std::size_t s = 0; s <= total; ++s) {
    if (s <= observed) lower += ways[s];
    if (s >= observed) upper += ways[s];
  }
  res.w_plus = double(observed) / 2.0;
  res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
  return res;
}

// Normal approximation with tie-corrected variance and continuity correction.
inline WilcoxonResult wilcoxon_normal(std::span<const double> d) {
  WilcoxonResult res{1.0, 0.0, d.size(), false};
  if (d.empty()) return res;
  std::vector<std::size_t> ties;
  auto ranks = detail::abs_ranks(d, &ties);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0) res.w_plus += ranks[i];
  }
  const double m = double(d.size());
  const double mean = m * (m + 1) / 4.0;
  double var = m * (m + 1) * (2 * m + 1) / 24.0;
  for (auto t : ties) var -= (double(t) * t * t - double(t)) / 48.0;
  if (var <= 0) return res;
  const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

inline constexpr std::size_t kWilcoxonExactLimit = 20;

// Two-sided paired test on a - b; zero differences are dropped. Exact for up
// to 20 remaining pairs, normal approximation beyond.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  auto d = detail::nonzero_differences(a, b);
  return d.size() <= kWilcoxonExactLimit ? wilcoxon_exact(d) : wilcoxon_normal(d);
}

// Holm step-down: walk the p-values in ascending order and reject while
// p_(i) <= alpha / (m - i + 1). Decisions come back in input order.
inline std::vector<bool> holm_correct(std::span<const double> pvals, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("holm_correct: alpha must be in (0,1)");
  if (pvals.empty()) throw std::invalid_argument("holm_correct: no p-values");
  for (double p : pvals) {
    if (!(p >= 0 && p <= 1)) throw std::invalid_argument("holm_correct: p-value outside [0,1]");
  }
  const std::size_t m = pvals.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pvals[a] < pvals[b]; });
  std::vector<bool> reject(m, false);
  for (std::size_t i = 0; i < m; ++i) {
    if (pvals[order[i]] > alpha / double(m - i)) break;
    reject[order[i]] = true;
  }
  return reject;
}

}  // namespace ubert::eval
