// Confusion counts and the two headline metrics. Class 1 is the positive
// ("reversed") class.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>

namespace ubert::eval {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  // Same table with the roles of the two classes exchanged.
  ConfusionCounts swapped() const { return {tn, tp, fn, fp}; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("confusion: empty evaluation set");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) {
      throw std::invalid_argument("confusion: non-binary value at index " + std::to_string(i));
    }
    if (y == 1) {
      (p == 1 ? c.tp : c.fn)++;
    } else {
      (p == 1 ? c.fp : c.tn)++;
    }
  }
  return c;
}

namespace detail {

inline void require_nonempty(const ConfusionCounts& c, const char* what) {
  if (c.total() == 0) throw std::invalid_argument(std::string(what) + ": empty evaluation set");
}

}  // namespace detail

// Mean of the two per-class F1 scores, 2h / (2h + false alarms + misses). A
// class that is neither predicted nor present scores 1. The mean is formed
// as one fraction of integers and divided once, so the result is the
// correctly rounded value.
inline double macro_f1(const ConfusionCounts& c) {
  detail::require_nonempty(c, "macro_f1");
  const std::uint64_t dp = 2 * c.tp + c.fp + c.fn, dn = 2 * c.tn + c.fp + c.fn;
  std::uint64_t num = 0, den = 0;
  if (dp == 0) {
    num = dn + 2 * c.tn;
    den = 2 * dn;
  } else if (dn == 0) {
    num = dp + 2 * c.tp;
    den = 2 * dp;
  } else {
    num = c.tp * dn + c.tn * dp;
    den = dp * dn;
  }
  const std::uint64_t g = std::gcd(num, den);
  return double(num / g) / double(den / g);
}

// Matthews correlation; 0 whenever a marginal is empty. Numerator and the
// product of marginals are exact integers in double (below 2^53), so the
// value is fl(n / fl(sqrt(P))) whatever order the counts are added in.
inline double mcc(const ConfusionCounts& c) {
  detail::require_nonempty(c, "mcc");
  const double tp = double(c.tp), tn = double(c.tn), fp = double(c.fp), fn = double(c.fn);
  const double a = tp + fp, b = tp + fn, d = tn + fp, e = tn + fn;
  if (a == 0 || b == 0 || d == 0 || e == 0) return 0.0;
  const double r = (tp * tn - fp * fn) / std::sqrt(a * b * d * e);
  return std::clamp(r, -1.0, 1.0);
}

inline double accuracy(const ConfusionCounts& c) {
  detail::require_nonempty(c, "accuracy");
  return double(c.tp + c.tn) / double(c.total());
}

}  // namespace ubert::eval
