// Document-level bootstrap with percentile (nearest-rank) intervals.
//
// Replicate b draws its indices from an RNG seeded by (seed, b), so any
// subset of replicates can be computed independently and in any order, and
// models evaluated on the same gold labels share resamples exactly.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "ubert/evaluation/metrics.hpp"

namespace ubert::eval {

using Metric = std::function<double(const ConfusionCounts&)>;

struct LabeledPrediction {
  int gold = 0;
  int predicted = 0;
};

struct BootstrapOptions {
  std::size_t replicates = 2000;
  double level = 0.95;
  std::uint64_t seed = 0;
  // Resamples whose gold labels hold a single class are redrawn, at most
  // this many times per replicate; past the cap the last draw is kept.
  std::size_t max_redraws = 100;
};

struct BootstrapResult {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t redraws = 0;         // single-class resamples thrown away
  std::size_t capped = 0;          // replicates that kept a single-class draw
  std::vector<double> replicates;  // metric per replicate, replicate order
};

// Indices of replicate b over n documents with the given gold labels.
inline std::vector<std::size_t> resample_indices(std::span<const int> gold, std::uint64_t seed, std::size_t b,
                                                 std::size_t max_redraws, std::size_t* redraws = nullptr,
                                                 bool* capped = nullptr) {
  const std::size_t n = gold.size();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(std::uint64_t(b) >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  for (std::size_t attempt = 0;; ++attempt) {
    bool has0 = false, has1 = false;
    for (auto& i : idx) {
      i = pick(rng);
      (gold[i] == 1 ? has1 : has0) = true;
    }
    if (has0 && has1) break;
    if (attempt == max_redraws) {
      if (capped) *capped = true;
      break;
    }
    if (redraws) ++*redraws;
  }
  return idx;
}

// Nearest-rank quantile of sorted values.
inline double nearest_rank(const std::vector<double>& sorted, double q) {
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * double(n) - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

inline BootstrapResult bootstrap_ci(std::span<const LabeledPrediction> records, const Metric& metric,
                                    const BootstrapOptions& opt = {}) {
  if (records.empty()) throw std::invalid_argument("bootstrap_ci: no records");
  if (opt.replicates < 1) throw std::invalid_argument("bootstrap_ci: need at least one replicate");
  if (!(opt.level > 0 && opt.level < 1)) throw std::invalid_argument("bootstrap_ci: level must be in (0,1)");
  std::vector<int> gold(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) gold[i] = records[i].gold;

  BootstrapResult res;
  res.replicates.reserve(opt.replicates);
  for (std::size_t b = 0; b < opt.replicates; ++b) {
    bool capped = false;
    auto idx = resample_indices(gold, opt.seed, b, opt.max_redraws, &res.redraws, &capped);
    if (capped) ++res.capped;
    ConfusionCounts c;
    for (auto i : idx) {
      const auto& r = records[i];
      if (r.gold == 1) {
        (r.predicted == 1 ? c.tp : c.fn)++;
      } else {
        (r.predicted == 1 ? c.fp : c.tn)++;
      }
    }
    res.replicates.push_back(metric(c));
  }
  auto sorted = res.replicates;
  std::sort(sorted.begin(), sorted.end());
  res.lo = nearest_rank(sorted, (1.0 - opt.level) / 2.0);
  res.hi = nearest_rank(sorted, (1.0 + opt.level) / 2.0);
  return res;
}

}  // namespace ubert::eval
