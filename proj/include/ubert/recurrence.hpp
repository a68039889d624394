// LSTM over the ordered chunk embeddings and the logistic document classifier.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ubert/model.hpp"
#include "ubert/ops.hpp"

namespace ubert {

template <std::floating_point T>
struct SequenceResult {
  Tensor<T> hidden_sequence;  // [n, output_width], document order
  Tensor<T> final_hidden;     // [1, output_width]
};

struct Prediction {
  double probability = 0.5;  // of class 1 ("reversed")
  int label = 0;
};

// One LSTM step with gates laid out i | f | g | o.
template <std::floating_point T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(const Tensor<T>& input_proj, const Tensor<T>& h, const Tensor<T>& c,
                                          const Tensor<T>& hidden_weight) {
  const std::size_t H = h.cols();
  auto gates = add(input_proj, matmul(h, hidden_weight));
  auto i = sigmoid(slice_cols(gates, 0, H));
  auto f = sigmoid(slice_cols(gates, H, 2 * H));
  auto g = tanh(slice_cols(gates, 2 * H, 3 * H));
  auto o = sigmoid(slice_cols(gates, 3 * H, 4 * H));
  auto c_next = add(mul(f, c), mul(i, g));
  auto h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

namespace detail {

// Hidden states of one direction, in the order the steps were taken.
template <std::floating_point T>
std::vector<Tensor<T>> run_direction(const Tensor<T>& embeddings, const ModelState<T>& st, const std::string& dir,
                                     bool reversed) {
  const std::string p = "recurrence." + dir + ".";
  const std::size_t n = embeddings.rows(), H = st.config().recurrence.hidden_width;
  auto proj = add_bias(matmul(embeddings, st.param(p + "input_weight")), st.param(p + "bias"));
  auto h = Tensor<T>::zeros({1, H});
  auto c = Tensor<T>::zeros({1, H});
  std::vector<Tensor<T>> hs;
  hs.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = reversed ? n - 1 - s : s;
    std::tie(h, c) = lstm_cell(slice_rows(proj, t, t + 1), h, c, st.param(p + "hidden_weight"));
    hs.push_back(h);
  }
  return hs;
}

}  // namespace detail

template <std::floating_point T>
SequenceResult<T> run_sequence(const Tensor<T>& embeddings, const ModelState<T>& st) {
  const auto& cfg = st.config().recurrence;
  if (embeddings.rank() != 2 || embeddings.cols() != cfg.input_width) {
    throw ShapeError("run_sequence: embeddings " + shape_string(embeddings.shape()) + " vs input_width " +
                     std::to_string(cfg.input_width));
  }
  auto fwd = detail::run_direction(embeddings, st, "forward", false);
  if (!cfg.bidirectional) return {concat_rows(fwd), fwd.back()};
  auto bwd = detail::run_direction(embeddings, st, "reverse", true);
  const std::size_t n = fwd.size();
  std::vector<Tensor<T>> rows;
  rows.reserve(n);
  for (std::size_t t = 0; t < n; ++t) rows.push_back(concat_cols<T>({fwd[t], bwd[n - 1 - t]}));
  // the reverse direction finishes at the first chunk
  return {concat_rows(rows), concat_cols<T>({fwd.back(), bwd.back()})};
}

template <std::floating_point T>
Tensor<T> pool_sequence(const SequenceResult<T>& seq, Pooling pooling) {
  switch (pooling) {
    case Pooling::mean:
      return mean_rows(seq.hidden_sequence);
    case Pooling::max:
      return max_rows(seq.hidden_sequence);
    case Pooling::final_state:
      break;
  }
  return seq.final_hidden;
}

// Affine map to a single logit: [1, width] -> [1, 1].
template <std::floating_point T>
Tensor<T> classifier_logit(const Tensor<T>& doc_vector, const ModelState<T>& st) {
  const auto& w = st.param("classifier.weight");
  if (doc_vector.rank() != 2 || doc_vector.rows() != 1 || doc_vector.cols() != w.rows()) {
    throw ShapeError("classify: document vector " + shape_string(doc_vector.shape()) + " vs classifier " +
                     shape_string(w.shape()));
  }
  return add_bias(matmul(doc_vector, w), st.param("classifier.bias"));
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Prediction prediction_from_logit(double logit, double threshold = 0.5) {
  const double p = logistic(logit);
  return {p, p >= threshold ? 1 : 0};
}

template <std::floating_point T>
Prediction classify(const Tensor<T>& doc_vector, const ModelState<T>& st, double threshold = 0.5) {
  return prediction_from_logit(static_cast<double>(classifier_logit(doc_vector, st).item()), threshold);
}

}  // namespace ubert
