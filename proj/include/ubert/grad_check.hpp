// Central finite-difference verification of reverse-mode gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ubert/tensor.hpp"

namespace ubert {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// `loss` rebuilds a scalar from the current values of `points`. Every point
// must require gradients. Returns the largest
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12) over all
// coordinates. A coordinate whose true gradient is zero but whose loss is
// not exactly flat scores close to 1, so callers should not pass parameters
// the function cannot see.
template <std::floating_point T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> points, T step) {
  if (!(step > T(0))) throw std::invalid_argument("grad_check: step must be positive");
  for (auto& p : points) {
    if (!p.requires_grad()) throw std::invalid_argument("grad_check: point does not require gradients");
    p.zero_grad();
  }
  auto f0 = loss();
  if (f0.size() != 1) throw ShapeError("grad_check: function is not scalar-valued");
  backward(f0);

  GradCheckResult result;
  for (std::size_t t = 0; t < points.size(); ++t) {
    auto& p = points[t];
    std::vector<T> analytic(p.size(), T(0));
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + step;
      const T up = loss().item();
      values[i] = saved - step;
      const T down = loss().item();
      values[i] = saved;
      const T numeric = (up - down) / (T(2) * step);
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i])) {
        throw std::runtime_error("grad_check: non-finite value at tensor " + std::to_string(t) + ", coordinate " +
                                 std::to_string(i));
      }
      const double err = std::abs(double(analytic[i]) - double(numeric)) /
                         (std::abs(double(analytic[i])) + std::abs(double(numeric)) + 1e-12);
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = double(analytic[i]);
        result.worst_numeric = double(numeric);
      }
    }
  }
  return result;
}

}  // namespace ubert
