#pragma once

// Straight-line reference computations on plain row-major matrices. They
// never touch the graph, so they serve as independent oracles.

#include <cmath>
#include <vector>

#include "gar/tensor.hpp"
#include "gar/transformer.hpp"

namespace gar::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Tensor to_tensor(const Mat& m) {
  Tensor t({m.size(), m[0].size()});
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t.at(i, j) = m[i][j];
  return t;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat plus_row(Mat a, const Tensor& row) {
  for (auto& r : a)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  return a;
}

inline Mat softmax(Mat a) {
  for (auto& r : a) {
    double mx = r[0];
    for (double v : r) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : r) z += (v = std::exp(v - mx));
    for (double& v : r) v /= z;
  }
  return a;
}

inline Mat relu(Mat a) {
  for (auto& r : a)
    for (double& v : r) v = std::max(v, 0.0);
  return a;
}

inline Mat layer_norm(Mat a, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  for (auto& r : a) {
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = gain[j] * (r[j] - mean) / std::sqrt(var + eps) + bias[j];
  }
  return a;
}

inline Mat attention(const Mat& q, const Mat& k, const Mat& v, Mat* weights = nullptr) {
  Mat s = mul(q, transpose(k));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  for (auto& r : s)
    for (double& x : r) x *= scale;
  Mat w = softmax(s);
  if (weights) *weights = w;
  return mul(w, v);
}

inline Mat multi_head(const Mat& s, const EncoderLayerWeights& w) {
  Mat joined(s.size());
  for (std::size_t h = 0; h < w.query.size(); ++h) {
    Mat out = attention(mul(s, to_mat(w.query[h].value)), mul(s, to_mat(w.key[h].value)),
                        mul(s, to_mat(w.value[h].value)));
    for (std::size_t i = 0; i < s.size(); ++i) joined[i].insert(joined[i].end(), out[i].begin(), out[i].end());
  }
  return mul(joined, to_mat(w.output.value));
}

// Inference-mode encoder layer, dropout omitted.
inline Mat encoder_layer(const Mat& s, const EncoderLayerWeights& w) {
  Mat e = layer_norm(plus(s, multi_head(s, w)), w.norm1_gain.value, w.norm1_bias.value);
  Mat hidden = relu(plus_row(mul(e, to_mat(w.ff_in_weight.value)), w.ff_in_bias.value));
  Mat ff = plus_row(mul(hidden, to_mat(w.ff_out_weight.value)), w.ff_out_bias.value);
  return layer_norm(plus(e, ff), w.norm2_gain.value, w.norm2_bias.value);
}

}  // namespace gar::oracle
