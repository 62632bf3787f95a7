#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gar/autodiff.hpp"
#include "gar/random.hpp"

namespace gar {

struct MultiHeadConfig {
  std::size_t d_model = 128;
  std::size_t num_heads = 1;

  std::size_t head_dim() const { return d_model / num_heads; }
  void validate() const;

  friend bool operator==(const MultiHeadConfig&, const MultiHeadConfig&) = default;
};

struct EncoderConfig {
  std::size_t num_layers = 1;
  MultiHeadConfig attention;
  std::size_t d_ff = 256;
  double dropout = 0.1;

  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Weights of one encoder layer. Each head owns its own query/key/value
// projections (d_model x head_dim); the output projection has no bias.
struct EncoderLayerWeights {
  std::vector<Parameter> query;
  std::vector<Parameter> key;
  std::vector<Parameter> value;
  Parameter output;
  Parameter ff_in_weight, ff_in_bias;
  Parameter ff_out_weight, ff_out_bias;
  Parameter norm1_gain, norm1_bias;
  Parameter norm2_gain, norm2_bias;

  static EncoderLayerWeights init(const EncoderConfig& cfg, Rng& rng, const std::string& prefix);

  void for_each_parameter(const std::function<void(Parameter&)>& fn);
};

// Post-softmax attention weights, indexed [layer][head], each N x N.
struct AttentionRecord {
  std::vector<std::vector<Tensor>> layers;
};

// Glorot/Xavier uniform initialisation of a fan_in x fan_out matrix.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// softmax(Q K^T / sqrt(d)) V, with d the shared last extent of Q and K.
// When weights_out is set it receives the softmax matrix.
Var attention(Var q, Var k, Var v, Tensor* weights_out = nullptr);

// Self-attention: every head attends over projections of the same S, the
// head outputs are concatenated and projected by the output matrix.
Var multi_head(Var s, EncoderLayerWeights& w, std::vector<Tensor>* head_weights = nullptr);

// LayerNorm(S + Dropout(MHA(S))) followed by
// LayerNorm(E + Dropout(Linear(Dropout(ReLU(Linear(E)))))).
Var encoder_layer(Var s, EncoderLayerWeights& w, double dropout_rate,
                  std::vector<Tensor>* head_weights = nullptr);

// Applies the layers in order. record, when non-null, is filled with every
// layer's attention matrices.
Var encode(Var s, std::span<EncoderLayerWeights> layers, double dropout_rate,
           AttentionRecord* record = nullptr);

}  // namespace gar
