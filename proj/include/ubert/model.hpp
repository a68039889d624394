// Model configuration and the parameter store shared by the encoder,
// recurrence and classifier.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ubert/tensor.hpp"

namespace ubert {

// Which positions of a layer form the chunk vector.
enum class Representation { cls, mean_over_mask };
// How the recurrent hidden sequence becomes the document vector.
enum class Pooling { final_state, mean, max };

NLOHMANN_JSON_SERIALIZE_ENUM(Representation, {{Representation::cls, "cls"},
                                              {Representation::mean_over_mask, "mean-over-mask"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Pooling, {{Pooling::final_state, "final"}, {Pooling::mean, "mean"}, {Pooling::max, "max"}})

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t ff_mult = 4;
  std::size_t max_window = 512;
  Representation representation = Representation::cls;

  // Concatenation of the last four layers.
  std::size_t output_width() const { return 4 * dim; }

  void validate() const {
    if (vocab_size < 5) throw std::invalid_argument("encoder: vocab_size must cover the reserved ids plus one token");
    if (dim == 0 || n_heads == 0 || dim % n_heads != 0) {
      throw std::invalid_argument("encoder: n_heads (" + std::to_string(n_heads) + ") must divide dim (" +
                                  std::to_string(dim) + ")");
    }
    if (n_layers < 4) {
      throw std::invalid_argument("encoder: n_layers must be at least 4 for last-four-layer extraction, got " +
                                  std::to_string(n_layers));
    }
    if (ff_mult == 0) throw std::invalid_argument("encoder: ff_mult must be positive");
    if (max_window < 3) throw std::invalid_argument("encoder: max_window must hold CLS, one token and SEP");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct RecurrenceConfig {
  std::size_t input_width = 256;
  std::size_t hidden_width = 64;
  bool bidirectional = false;
  Pooling pooling = Pooling::final_state;

  std::size_t output_width() const { return bidirectional ? 2 * hidden_width : hidden_width; }

  friend bool operator==(const RecurrenceConfig&, const RecurrenceConfig&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  RecurrenceConfig recurrence;

  void validate() const {
    encoder.validate();
    if (recurrence.hidden_width == 0) throw std::invalid_argument("recurrence: hidden_width must be positive");
    if (recurrence.input_width != encoder.output_width()) {
      throw std::invalid_argument("recurrence: input_width " + std::to_string(recurrence.input_width) +
                                  " does not match encoder output width " + std::to_string(encoder.output_width()));
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, vocab_size, dim, n_layers, n_heads, ff_mult,
                                                max_window, representation)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RecurrenceConfig, input_width, hidden_width, bidirectional, pooling)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, encoder, recurrence)

// Named parameters grouped for freezing. Groups are "embeddings",
// "encoder.layer.<i>", "recurrence" and "classifier".
template <std::floating_point T>
class ModelState {
 public:
  ModelState() = default;

  // Weights uniform in +-1/sqrt(fan_in), biases zero, norm gains one.
  static ModelState initialize(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelState st;
    st.config_ = config;
    std::mt19937_64 rng(seed);
    const auto& e = config.encoder;
    const std::size_t d = e.dim, ff = e.ff_mult * e.dim;
    st.add_uniform("embeddings.token", {e.vocab_size, d}, d, rng);
    st.add_uniform("embeddings.position", {e.max_window, d}, d, rng);
    st.add_const("embeddings.norm.gain", {d}, T(1));
    st.add_const("embeddings.norm.bias", {d}, T(0));
    for (std::size_t l = 0; l < e.n_layers; ++l) {
      const std::string p = layer_prefix(l);
      st.add_uniform(p + "qkv.weight", {d, 3 * d}, d, rng);
      // no key bias: it shifts every logit in a row equally and softmax ignores it
      st.add_const(p + "query.bias", {d}, T(0));
      st.add_const(p + "value.bias", {d}, T(0));
      st.add_uniform(p + "out.weight", {d, d}, d, rng);
      st.add_const(p + "out.bias", {d}, T(0));
      st.add_const(p + "norm1.gain", {d}, T(1));
      st.add_const(p + "norm1.bias", {d}, T(0));
      st.add_uniform(p + "ff1.weight", {d, ff}, d, rng);
      st.add_const(p + "ff1.bias", {ff}, T(0));
      st.add_uniform(p + "ff2.weight", {ff, d}, ff, rng);
      st.add_const(p + "ff2.bias", {d}, T(0));
      st.add_const(p + "norm2.gain", {d}, T(1));
      st.add_const(p + "norm2.bias", {d}, T(0));
    }
    const auto& r = config.recurrence;
    const std::size_t h = r.hidden_width;
    for (const char* dir : {"forward", "reverse"}) {
      if (std::string(dir) == "reverse" && !r.bidirectional) break;
      const std::string p = std::string("recurrence.") + dir + ".";
      st.add_uniform(p + "input_weight", {r.input_width, 4 * h}, h, rng);
      st.add_uniform(p + "hidden_weight", {h, 4 * h}, h, rng);
      st.add_const(p + "bias", {4 * h}, T(0));
    }
    st.add_uniform("classifier.weight", {r.output_width(), 1}, r.output_width(), rng);
    st.add_const("classifier.bias", {1}, T(0));
    st.apply_default_trainable();
    return st;
  }

  static std::string layer_prefix(std::size_t layer) { return "encoder.layer." + std::to_string(layer) + "."; }

  static std::string group_of(const std::string& name) {
    static const std::string enc = "encoder.layer.";
    if (name.starts_with(enc)) return name.substr(0, name.find('.', enc.size()));
    return name.substr(0, name.find('.'));
  }

  const ModelConfig& config() const { return config_; }

  bool contains(const std::string& name) const { return params_.contains(name); }

  const Tensor<T>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("model: no parameter named " + name);
    return it->second;
  }
  Tensor<T>& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("model: no parameter named " + name);
    return it->second;
  }

  // Parameter names in creation order.
  const std::vector<std::string>& names() const { return order_; }

  std::vector<std::string> groups() const {
    std::vector<std::string> out;
    for (const auto& n : order_) {
      auto g = group_of(n);
      if (out.empty() || out.back() != g) out.push_back(g);
    }
    return out;
  }

  bool trainable(const std::string& group) const {
    auto it = trainable_.find(group);
    if (it == trainable_.end()) throw std::out_of_range("model: no parameter group " + group);
    return it->second;
  }

  void set_trainable(const std::string& group, bool on) {
    if (!trainable_.contains(group)) throw std::out_of_range("model: no parameter group " + group);
    trainable_[group] = on;
    for (const auto& n : order_) {
      if (group_of(n) == group) params_.at(n).set_requires_grad(on);
    }
  }

  // Last encoder layer, recurrence and classifier train; everything else is frozen.
  void apply_default_trainable() {
    const std::string last = "encoder.layer." + std::to_string(config_.encoder.n_layers - 1);
    for (const auto& g : groups()) set_trainable(g, g == last || g == "recurrence" || g == "classifier");
  }

  std::vector<Tensor<T>> trainable_parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& n : order_) {
      if (params_.at(n).requires_grad()) out.push_back(params_.at(n));
    }
    return out;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.size();
    return n;
  }

  // Deep copy; the handles in the copy do not alias this state.
  ModelState clone() const {
    ModelState out;
    out.config_ = config_;
    out.order_ = order_;
    out.trainable_ = trainable_;
    for (const auto& [n, p] : params_) out.params_.emplace(n, p.clone());
    return out;
  }

  // Used by checkpoint loading: replaces values of an existing parameter.
  void assign(const std::string& name, std::span<const T> values) {
    auto& p = param(name);
    if (values.size() != p.size()) {
      throw std::invalid_argument("model: parameter " + name + " expects " + std::to_string(p.size()) +
                                  " values, got " + std::to_string(values.size()));
    }
    std::copy(values.begin(), values.end(), p.mutable_data().begin());
  }

 private:
  void add(const std::string& name, Tensor<T> t) {
    order_.push_back(name);
    params_.emplace(name, std::move(t));
    trainable_.emplace(group_of(name), false);
  }

  void add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> v(element_count(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    add(name, Tensor<T>(std::move(shape), std::move(v)));
  }

  void add_const(const std::string& name, Shape shape, T value) { add(name, Tensor<T>::filled(std::move(shape), value)); }

  ModelConfig config_;
  std::vector<std::string> order_;
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, bool> trainable_;
};

}  // namespace ubert
