// Fine-tuning: one-cycle learning rate, AdamW on the trainable
// parameter groups, binary cross-entropy per document.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/pipeline.hpp"

namespace ubert {

struct TrainConfig {
  double max_lr = 1e-3;
  std::size_t epochs = 1;
  std::size_t total_steps = 0;  // 0: derived from epochs and batch_size
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  std::size_t batch_size = 1;  // documents per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  double positive_weight = 1.0;  // loss weight of class-1 documents; 1 = unweighted
  std::uint64_t seed = 0;

  void validate() const {
    if (!(max_lr > 0)) throw std::invalid_argument("train: max_lr must be positive");
    if (!(pct_start > 0 && pct_start < 1)) throw std::invalid_argument("train: pct_start must be in (0,1)");
    if (!(div_factor > 0) || !(final_div_factor > 0)) throw std::invalid_argument("train: div factors must be positive");
    if (epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
    if (!(positive_weight > 0)) throw std::invalid_argument("train: positive_weight must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, max_lr, epochs, total_steps, pct_start, div_factor,
                                                final_div_factor, batch_size, beta1, beta2, epsilon, weight_decay,
                                                positive_weight, seed)

namespace detail {

inline double cosine_between(double from, double to, double fraction) {
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * fraction));
}

}  // namespace detail

// Learning rate at step s of total_steps. Warm-up runs over
// [0, floor(pct_start*T)] from max_lr/div_factor to max_lr; annealing runs
// from there to step T-1, ending at max_lr/(div_factor*final_div_factor).
// Both phases interpolate on a half cosine.
inline double one_cycle_lr(std::size_t step, const TrainConfig& cfg) {
  const std::size_t total = cfg.total_steps;
  if (total < 1) throw std::invalid_argument("one_cycle_lr: total_steps must be at least 1");
  if (step >= total) {
    throw std::out_of_range("one_cycle_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) +
                            ")");
  }
  const double initial = cfg.max_lr / cfg.div_factor;
  const double final_lr = initial / cfg.final_div_factor;
  const auto peak = static_cast<std::size_t>(std::floor(cfg.pct_start * static_cast<double>(total)));
  if (step <= peak) {
    if (peak == 0) return cfg.max_lr;
    return detail::cosine_between(initial, cfg.max_lr, double(step) / double(peak));
  }
  const std::size_t span = total - 1 - peak;
  return detail::cosine_between(cfg.max_lr, final_lr, double(step - peak) / double(span));
}

// Adam with decoupled weight decay.
template <std::floating_point T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, double beta1, double beta2, double epsilon, double weight_decay)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  explicit AdamW(std::vector<Tensor<T>> params, const TrainConfig& cfg = {})
      : AdamW(std::move(params), cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay) {}

  // Applies one update from the accumulated gradients; parameters without a
  // gradient are left untouched.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.requires_grad() || !p.has_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + epsilon_) + weight_decay_ * double(w[i]);
        w[i] = static_cast<T>(double(w[i]) - lr * update);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, epsilon_, weight_decay_;
  std::size_t t_ = 0;
};

struct TrainResult {
  std::vector<double> losses;  // one per step
  std::vector<double> learning_rates;
  std::size_t steps = 0;
};

// Mutates `state` in place; each epoch is a fresh shuffled pass of `corpus`.
template <std::floating_point T>
TrainResult train(const std::vector<TokenizedDocument>& corpus, ModelState<T>& state, const PipelineConfig& pipeline,
                  TrainConfig cfg, const std::function<void(std::size_t, double)>& on_step = {}) {
  cfg.validate();
  pipeline.validate();
  if (corpus.empty()) throw std::invalid_argument("train: corpus is empty");
  for (const auto& d : corpus) {
    if (!d.label || (*d.label != 0 && *d.label != 1)) {
      throw std::invalid_argument("train: document '" + d.id + "' has no 0/1 label");
    }
    if (d.tokens.empty()) throw std::invalid_argument("train: document '" + d.id + "' is empty");
  }
  const std::size_t per_epoch = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t steps = per_epoch * cfg.epochs;
  if (cfg.total_steps == 0) cfg.total_steps = steps;
  if (cfg.total_steps < steps) throw std::invalid_argument("train: total_steps shorter than the requested epochs");

  std::vector<std::size_t> order(corpus.size());
  std::mt19937_64 rng(cfg.seed);
  AdamW<T> opt(state.trainable_parameters(), cfg);
  TrainResult result;
  for (std::size_t s = 0; s < steps; ++s) {
    if (s % per_epoch == 0) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);
    }
    const std::size_t begin = (s % per_epoch) * cfg.batch_size, end = std::min(corpus.size(), begin + cfg.batch_size);
    std::vector<Tensor<T>> logits;
    std::vector<T> targets, weights;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& doc = corpus[order[i]];
      logits.push_back(document_logit(doc, state, pipeline));
      targets.push_back(T(*doc.label));
      weights.push_back(*doc.label == 1 ? T(cfg.positive_weight) : T(1));
    }
    auto stacked = logits.size() == 1 ? logits.front() : concat_rows(logits);
    auto loss = bce_with_logits<T>(stacked, targets, weights);
    opt.zero_grad();
    backward(loss);
    const double lr = one_cycle_lr(s, cfg);
    opt.step(lr);
    result.losses.push_back(static_cast<double>(loss.item()));
    result.learning_rates.push_back(lr);
    if (on_step) on_step(s, result.losses.back());
  }
  result.steps = steps;
  return result;
}

}  // namespace ubert
