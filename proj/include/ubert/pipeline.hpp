// Whole-document inference: chunk, decorate, encode in passes of at most
// max_c windows, run the recurrence over every chunk vector, classify.
#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/chunking.hpp"
#include "ubert/encoder.hpp"
#include "ubert/model.hpp"
#include "ubert/recurrence.hpp"

namespace ubert {

struct PipelineConfig {
  std::size_t chunk_size = 510;
  std::size_t overlap = 0;
  std::size_t max_c = 15;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  ModelConfig model;

  void validate() const {
    model.validate();
    if (chunk_size < 2) throw std::invalid_argument("pipeline: chunk_size must be at least 2");
    if (overlap > chunk_size || overlap % 2 != 0) {
      throw std::invalid_argument("pipeline: overlap must be even and at most chunk_size, got " +
                                  std::to_string(overlap));
    }
    if (chunk_size + 2 > model.encoder.max_window) {
      throw std::invalid_argument("pipeline: chunk_size + 2 = " + std::to_string(chunk_size + 2) +
                                  " exceeds encoder max_window " + std::to_string(model.encoder.max_window));
    }
    if (max_c < 1) throw std::invalid_argument("pipeline: max_c must be at least 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("pipeline: threshold must be in (0,1)");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PipelineConfig, chunk_size, overlap, max_c, threshold, seed, model)

// Sizes of successive encoder passes over n chunks: full passes of max_c,
// then the remainder.
inline std::vector<std::size_t> plan_passes(std::size_t n, std::size_t max_c) {
  if (n < 1 || max_c < 1) throw std::invalid_argument("plan_passes: n and max_c must be positive");
  std::vector<std::size_t> passes(n / max_c, max_c);
  if (n % max_c) passes.push_back(n % max_c);
  return passes;
}

// Counts encoder invocations; safe to share between threads.
struct PassCounter {
  std::atomic<std::size_t> passes{0};
};

// [n, 4*dim] chunk vectors in document order.
template <std::floating_point T>
Tensor<T> chunk_embeddings(const TokenizedDocument& doc, const ModelState<T>& st, const PipelineConfig& cfg,
                           PassCounter* counter = nullptr) {
  const auto chunks = chunk_document(doc, cfg.chunk_size, cfg.overlap);
  std::vector<Tensor<T>> parts;
  std::size_t next = 0;
  for (std::size_t pass : plan_passes(chunks.count(), cfg.max_c)) {
    std::vector<EncoderWindow> windows;
    windows.reserve(pass);
    for (std::size_t i = 0; i < pass; ++i) windows.push_back(decorate(chunks.chunks[next + i], cfg.chunk_size));
    next += pass;
    parts.push_back(encode_batch(windows, st, cfg.max_c));
    if (counter) counter->passes.fetch_add(1, std::memory_order_relaxed);
  }
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

// Pre-sigmoid score of class 1, [1, 1].
template <std::floating_point T>
Tensor<T> document_logit(const TokenizedDocument& doc, const ModelState<T>& st, const PipelineConfig& cfg,
                         PassCounter* counter = nullptr) {
  auto seq = run_sequence(chunk_embeddings(doc, st, cfg, counter), st);
  return classifier_logit(pool_sequence(seq, st.config().recurrence.pooling), st);
}

// Uses every token of the document regardless of its length.
template <std::floating_point T>
Prediction predict_document(const TokenizedDocument& doc, const ModelState<T>& st, const PipelineConfig& cfg,
                            PassCounter* counter = nullptr) {
  if (doc.tokens.empty()) throw std::invalid_argument("predict_document: document " + doc.id + " is empty");
  NoGradGuard no_grad;
  return prediction_from_logit(static_cast<double>(document_logit(doc, st, cfg, counter).item()), cfg.threshold);
}

}  // namespace ubert
