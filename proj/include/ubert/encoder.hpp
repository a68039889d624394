// Post-layernorm transformer encoder producing one 4*dim vector per window.
#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ubert/chunking.hpp"
#include "ubert/model.hpp"
#include "ubert/ops.hpp"

namespace ubert {

// Hidden states of every layer for a batch of equal-width windows.
template <std::floating_point T>
struct LayerStates {
  std::size_t batch = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;  // batch*width, 1 = real token
  std::vector<Tensor<T>> layers;   // layers[l] is [batch*width, dim], l = 0 is the first layer
};

// One encoder block: attention, residual, norm, feed-forward, residual, norm.
template <std::floating_point T>
Tensor<T> encoder_layer(const Tensor<T>& x, std::span<const std::uint8_t> mask, std::size_t batch,
                        const ModelState<T>& st, std::size_t layer) {
  const std::string p = ModelState<T>::layer_prefix(layer);
  const auto heads = st.config().encoder.n_heads;
  const std::size_t d = x.cols();
  auto proj_qkv = matmul(x, st.param(p + "qkv.weight"));
  auto qkv = concat_cols<T>({add_bias(slice_cols(proj_qkv, 0, d), st.param(p + "query.bias")),
                             slice_cols(proj_qkv, d, 2 * d),
                             add_bias(slice_cols(proj_qkv, 2 * d, 3 * d), st.param(p + "value.bias"))});
  auto attn = masked_self_attention(qkv, mask, batch, heads);
  auto proj = add_bias(matmul(attn, st.param(p + "out.weight")), st.param(p + "out.bias"));
  auto h = layernorm(add(x, proj), st.param(p + "norm1.gain"), st.param(p + "norm1.bias"));
  auto ff = add_bias(matmul(gelu(add_bias(matmul(h, st.param(p + "ff1.weight")), st.param(p + "ff1.bias"))),
                            st.param(p + "ff2.weight")),
                     st.param(p + "ff2.bias"));
  return layernorm(add(h, ff), st.param(p + "norm2.gain"), st.param(p + "norm2.bias"));
}

template <std::floating_point T>
LayerStates<T> run_encoder(const std::vector<EncoderWindow>& windows, const ModelState<T>& st) {
  const auto& cfg = st.config().encoder;
  if (windows.empty()) throw std::invalid_argument("encoder: empty batch");
  const std::size_t width = windows.front().width();
  if (width > cfg.max_window) {
    throw std::invalid_argument("encoder: window width " + std::to_string(width) + " exceeds max_window " +
                                std::to_string(cfg.max_window));
  }
  LayerStates<T> out;
  out.batch = windows.size();
  out.width = width;
  std::vector<TokenId> ids, positions;
  ids.reserve(out.batch * width);
  for (const auto& w : windows) {
    if (w.width() != width || w.mask.size() != width) {
      throw std::invalid_argument("encoder: windows in one batch must share a width");
    }
    ids.insert(ids.end(), w.ids.begin(), w.ids.end());
    out.mask.insert(out.mask.end(), w.mask.begin(), w.mask.end());
    for (std::size_t i = 0; i < width; ++i) positions.push_back(static_cast<TokenId>(i));
  }
  auto x = add(embedding(st.param("embeddings.token"), std::span<const TokenId>(ids)),
               embedding(st.param("embeddings.position"), std::span<const TokenId>(positions)));
  x = layernorm(x, st.param("embeddings.norm.gain"), st.param("embeddings.norm.bias"));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    x = encoder_layer(x, out.mask, out.batch, st, l);
    out.layers.push_back(x);
  }
  return out;
}

// Concatenates, fourth-from-last layer first, each of the last four layers'
// vector for every window: the CLS row, or the mean over real positions.
template <std::floating_point T>
Tensor<T> extract_representation(const LayerStates<T>& states, Representation mode = Representation::cls) {
  const std::size_t n_layers = states.layers.size();
  if (n_layers < 4) {
    throw std::invalid_argument("extract_representation: need at least 4 layers, got " + std::to_string(n_layers));
  }
  std::vector<Tensor<T>> parts;
  if (mode == Representation::cls) {
    std::vector<std::size_t> cls_rows(states.batch);
    for (std::size_t b = 0; b < states.batch; ++b) cls_rows[b] = b * states.width;
    for (std::size_t l = n_layers - 4; l < n_layers; ++l) parts.push_back(gather_rows(states.layers[l], cls_rows));
  } else {
    // block-diagonal averaging matrix over the masked positions of each window
    std::vector<T> pool(states.batch * states.batch * states.width, T(0));
    for (std::size_t b = 0; b < states.batch; ++b) {
      std::size_t real = 0;
      for (std::size_t i = 0; i < states.width; ++i) real += states.mask[b * states.width + i];
      for (std::size_t i = 0; i < states.width; ++i) {
        if (states.mask[b * states.width + i]) {
          pool[b * states.batch * states.width + b * states.width + i] = T(1) / T(real);
        }
      }
    }
    Tensor<T> pool_t({states.batch, states.batch * states.width}, std::move(pool));
    for (std::size_t l = n_layers - 4; l < n_layers; ++l) parts.push_back(matmul(pool_t, states.layers[l]));
  }
  return concat_cols(parts);
}

// One encoder pass: [batch, 4*dim] in window order.
template <std::floating_point T>
Tensor<T> encode_batch(const std::vector<EncoderWindow>& windows, const ModelState<T>& st,
                       std::size_t max_batch = std::numeric_limits<std::size_t>::max()) {
  if (windows.empty() || windows.size() > max_batch) {
    throw std::invalid_argument("encode_batch: batch of " + std::to_string(windows.size()) +
                                " windows outside [1, " + std::to_string(max_batch) + "]");
  }
  return extract_representation(run_encoder(windows, st), st.config().encoder.representation);
}

}  // namespace ubert
