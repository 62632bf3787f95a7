#include "gar/transformer.hpp"

#include <cmath>

#include "gar/error.hpp"

namespace gar {

void MultiHeadConfig::validate() const {
  if (d_model == 0 || num_heads == 0) throw ConfigError("d_model and num_heads must be positive");
  if (d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
}

void EncoderConfig::validate() const {
  attention.validate();
  if (num_layers == 0) throw ConfigError("num_layers must be at least 1");
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

EncoderLayerWeights EncoderLayerWeights::init(const EncoderConfig& cfg, Rng& rng, const std::string& prefix) {
  cfg.validate();
  const std::size_t d = cfg.attention.d_model;
  const std::size_t hd = cfg.attention.head_dim();
  EncoderLayerWeights w;
  for (std::size_t h = 0; h < cfg.attention.num_heads; ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    w.query.emplace_back(head + ".query", xavier_uniform(d, hd, rng));
    w.key.emplace_back(head + ".key", xavier_uniform(d, hd, rng));
    w.value.emplace_back(head + ".value", xavier_uniform(d, hd, rng));
  }
  w.output = Parameter(prefix + ".output", xavier_uniform(d, d, rng));
  w.ff_in_weight = Parameter(prefix + ".ff_in.weight", xavier_uniform(d, cfg.d_ff, rng));
  w.ff_in_bias = Parameter(prefix + ".ff_in.bias", Tensor({cfg.d_ff}));
  w.ff_out_weight = Parameter(prefix + ".ff_out.weight", xavier_uniform(cfg.d_ff, d, rng));
  w.ff_out_bias = Parameter(prefix + ".ff_out.bias", Tensor({d}));
  w.norm1_gain = Parameter(prefix + ".norm1.gain", Tensor({d}, 1.0));
  w.norm1_bias = Parameter(prefix + ".norm1.bias", Tensor({d}));
  w.norm2_gain = Parameter(prefix + ".norm2.gain", Tensor({d}, 1.0));
  w.norm2_bias = Parameter(prefix + ".norm2.bias", Tensor({d}));
  return w;
}

void EncoderLayerWeights::for_each_parameter(const std::function<void(Parameter&)>& fn) {
  for (std::size_t h = 0; h < query.size(); ++h) {
    fn(query[h]);
    fn(key[h]);
    fn(value[h]);
  }
  for (Parameter* p : {&output, &ff_in_weight, &ff_in_bias, &ff_out_weight, &ff_out_bias, &norm1_gain,
                       &norm1_bias, &norm2_gain, &norm2_bias}) {
    fn(*p);
  }
}

Var attention(Var q, Var k, Var v, Tensor* weights_out) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (qv.cols() != kv.cols()) {
    throw DimensionError("attention: query width " + std::to_string(qv.cols()) + " != key width " +
                         std::to_string(kv.cols()));
  }
  if (kv.rows() != vv.rows()) {
    throw DimensionError("attention: " + std::to_string(kv.rows()) + " keys but " +
                         std::to_string(vv.rows()) + " values");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  Var weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d));
  if (weights_out) *weights_out = weights.value();
  return matmul(weights, v);
}

Var multi_head(Var s, EncoderLayerWeights& w, std::vector<Tensor>* head_weights) {
  Graph& g = *s.graph;
  const std::size_t heads = w.query.size();
  std::vector<Var> outputs;
  outputs.reserve(heads);
  if (head_weights) head_weights->assign(heads, Tensor());
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = matmul(s, g.param(w.query[h]));
    Var kh = matmul(s, g.param(w.key[h]));
    Var vh = matmul(s, g.param(w.value[h]));
    outputs.push_back(attention(qh, kh, vh, head_weights ? &(*head_weights)[h] : nullptr));
  }
  Var joined = heads == 1 ? outputs.front() : concat_cols(outputs);
  return matmul(joined, g.param(w.output));
}

Var encoder_layer(Var s, EncoderLayerWeights& w, double dropout_rate, std::vector<Tensor>* head_weights) {
  Graph& g = *s.graph;
  Var attended = dropout(multi_head(s, w, head_weights), dropout_rate);
  Var e = layer_norm(add(s, attended), g.param(w.norm1_gain), g.param(w.norm1_bias));

  Var hidden = relu(add_row(matmul(e, g.param(w.ff_in_weight)), g.param(w.ff_in_bias)));
  Var ff = add_row(matmul(dropout(hidden, dropout_rate), g.param(w.ff_out_weight)), g.param(w.ff_out_bias));
  return layer_norm(add(e, dropout(ff, dropout_rate)), g.param(w.norm2_gain), g.param(w.norm2_bias));
}

Var encode(Var s, std::span<EncoderLayerWeights> layers, double dropout_rate, AttentionRecord* record) {
  if (layers.empty()) throw ConfigError("encode: at least one layer is required");
  if (record) record->layers.assign(layers.size(), {});
  Var x = s;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = encoder_layer(x, layers[l], dropout_rate, record ? &record->layers[l] : nullptr);
  }
  return x;
}

}  // namespace gar
