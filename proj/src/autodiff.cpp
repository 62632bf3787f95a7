#include "gar/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "gar/error.hpp"

namespace gar {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

const Tensor& Var::value() const {
  if (!graph) throw UsageError("unbound Var");
  return graph->value(*this);
}

Graph::Graph(Mode mode, Rng* dropout_rng) : mode_(mode), rng_(dropout_rng) { nodes_.reserve(256); }

Var Graph::constant(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Graph::param(Parameter& p) {
  Var v = record(p.value, {}, nullptr);
  nodes_[v.id].param = &p;
  return v;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced at graph node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(Node{std::move(value), Tensor(), std::move(inputs), std::move(fn), nullptr});
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw UsageError("backward: Var belongs to a different graph");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " +
                     shape_string(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto& g = n.param->grad;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

namespace {

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C (m x n) += A (m x k) * B^T where B is n x k
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C (m x n) += A^T * B where A is k x m and B is k x n
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

Graph& graph_of(Var a) {
  if (!a.graph) throw UsageError("unbound Var");
  return *a.graph;
}

void same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw UsageError("operands belong to different graphs");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(av.shape()) + " x " +
                         shape_string(bv.shape()));
  }
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record(std::move(out), {a.id, b.id}, [m, k, n](Graph& gr, std::size_t self) {
    const auto ia = gr.inputs(self)[0];
    const auto ib = gr.inputs(self)[1];
    const double* dc = gr.node_grad(self).data().data();
    double* da = gr.grad_buffer(ia).data().data();
    double* db = gr.grad_buffer(ib).data().data();
    gemm_nt(dc, gr.node_value(ib).data().data(), da, m, n, k);
    gemm_tn(gr.node_value(ia).data().data(), dc, db, k, m, n);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require_matrix("transpose", av);
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return g.record(std::move(out), {a.id}, [r, c](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.node_grad(self);
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
  });
}

Var add(Var a, Var b) {
  same_graph(a, b);
  Graph& g = graph_of(a);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record(std::move(out), {a.id, b.id}, [](Graph& gr, std::size_t self) {
    for (auto in : gr.inputs(self)) {
      Tensor& dx = gr.grad_buffer(in);
      const Tensor& dy = gr.node_grad(self);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
}

Var add_row(Var a, Var row) {
  same_graph(a, row);
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  require_matrix("add_row", av);
  if (rv.size() != av.cols()) {
    throw DimensionError("add_row: row of " + std::to_string(rv.size()) + " for matrix " +
                         shape_string(av.shape()));
  }
  Tensor out = av;
  const std::size_t m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
  return g.record(std::move(out), {a.id, row.id}, [m, n](Graph& gr, std::size_t self) {
    Tensor& da = gr.grad_buffer(gr.inputs(self)[0]);
    Tensor& dr = gr.grad_buffer(gr.inputs(self)[1]);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        da[i * n + j] += dy[i * n + j];
        dr[j] += dy[i * n + j];
      }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return g.record(std::move(out), {a.id}, [s](Graph& gr, std::size_t self) {
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += s * dy[i];
  });
}

Var weighted_sum(std::span<const Var> xs, std::span<const double> coeffs) {
  if (xs.empty()) throw UsageError("weighted_sum: no operands");
  if (xs.size() != coeffs.size()) throw UsageError("weighted_sum: operand/coefficient count mismatch");
  Graph& g = graph_of(xs[0]);
  Tensor out(xs[0].shape());
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    same_graph(xs[0], xs[k]);
    const Tensor& xv = xs[k].value();
    require_same_shape("weighted_sum", out, xv);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[k] * xv[i];
    ids.push_back(xs[k].id);
  }
  std::vector<double> c(coeffs.begin(), coeffs.end());
  return g.record(std::move(out), std::move(ids), [c = std::move(c)](Graph& gr, std::size_t self) {
    const auto& ins = gr.inputs(self);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      Tensor& dx = gr.grad_buffer(ins[k]);
      const Tensor& dy = gr.node_grad(self);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c[k] * dy[i];
    }
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return g.record(std::move(out), {a.id}, [](Graph& gr, std::size_t self) {
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    const Tensor& y = gr.node_value(self);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (y[i] > 0.0) dx[i] += dy[i];
  });
}

Var log(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.values()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
    v = std::log(v);
  }
  return g.record(std::move(out), {a.id}, [](Graph& gr, std::size_t self) {
    const auto in = gr.inputs(self)[0];
    Tensor& dx = gr.grad_buffer(in);
    const Tensor& x = gr.node_value(in);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] / x[i];
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return g.record(Tensor({1}, std::vector<double>{s}), {a.id}, [](Graph& gr, std::size_t self) {
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    const double dy = gr.node_grad(self)[0];
    for (auto& v : dx.values()) v += dy;
  });
}

Var softmax_rows(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_matrix("softmax_rows", xv);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = xv.data().data() + i * n;
    double* yi = out.data().data() + i * n;
    const double mx = *std::max_element(xi, xi + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yi[j] /= z;
  }
  return g.record(std::move(out), {x.id}, [m, n](Graph& gr, std::size_t self) {
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    const Tensor& y = gr.node_value(self);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  same_graph(x, gain);
  same_graph(x, bias);
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_matrix("layer_norm", xv);
  const std::size_t m = xv.rows(), d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(m);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xv[i * d + j] - mean) * inv_std[i];
      out[i * d + j] = gv[j] * xhat[i * d + j] + bv[j];
    }
  }
  return g.record(std::move(out), {x.id, gain.id, bias.id},
                  [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                    const auto& ins = gr.inputs(self);
                    Tensor& dx = gr.grad_buffer(ins[0]);
                    Tensor& dg = gr.grad_buffer(ins[1]);
                    Tensor& db = gr.grad_buffer(ins[2]);
                    const Tensor& gv = gr.node_value(ins[1]);
                    const Tensor& dy = gr.node_grad(self);
                    std::vector<double> dxhat(d);
                    for (std::size_t i = 0; i < m; ++i) {
                      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double g_ij = dy[i * d + j];
                        dg[j] += g_ij * xhat[i * d + j];
                        db[j] += g_ij;
                        dxhat[j] = g_ij * gv[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[i * d + j];
                      }
                      mean_dxhat /= static_cast<double>(d);
                      mean_dxhat_xhat /= static_cast<double>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        dx[i * d + j] +=
                            inv_std[i] * (dxhat[j] - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                      }
                    }
                  });
}

Var dropout(Var x, double rate) {
  Graph& g = graph_of(x);
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!g.training() || rate == 0.0) return x;
  if (!g.rng()) throw UsageError("dropout in training mode requires a random generator");
  Tensor out = x.value();
  std::vector<double> mask(out.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = g.rng()->uniform() < rate ? 0.0 : keep_scale;
    out[i] *= mask[i];
  }
  return g.record(std::move(out), {x.id}, [mask = std::move(mask)](Graph& gr, std::size_t self) {
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += mask[i] * dy[i];
  });
}

Var concat_cols(std::span<const Var> xs) {
  if (xs.empty()) throw UsageError("concat_cols: no operands");
  Graph& g = graph_of(xs[0]);
  const std::size_t m = xs[0].value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& v : xs) {
    same_graph(xs[0], v);
    require_matrix("concat_cols", v.value());
    if (v.value().rows() != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(v.value().cols());
    ids.push_back(v.id);
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& xv = xs[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(xv.data().data() + i * widths[k], widths[k], out.data().data() + i * total + offset);
    offset += widths[k];
  }
  return g.record(std::move(out), std::move(ids), [m, total, widths](Graph& gr, std::size_t self) {
    const auto& ins = gr.inputs(self);
    const Tensor& dy = gr.node_grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ins.size(); ++k) {
      Tensor& dx = gr.grad_buffer(ins[k]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j) dx[i * widths[k] + j] += dy[i * total + off + j];
      off += widths[k];
    }
  });
}

Var max_over_set(Var x) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_matrix("max_over_set", xv);
  const std::size_t n = xv.rows(), d = xv.cols();
  if (n == 0) throw DataError("max_over_set: empty set");
  Tensor out({d});
  std::vector<std::size_t> arg(d, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double best = xv[j];
    for (std::size_t i = 1; i < n; ++i) {
      if (xv[i * d + j] > best) {
        best = xv[i * d + j];
        arg[j] = i;
      }
    }
    out[j] = best;
  }
  return g.record(std::move(out), {x.id}, [d, arg = std::move(arg)](Graph& gr, std::size_t self) {
    Tensor& dx = gr.grad_buffer(gr.inputs(self)[0]);
    const Tensor& dy = gr.node_grad(self);
    for (std::size_t j = 0; j < d; ++j) dx[arg[j] * d + j] += dy[j];
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Graph& g = graph_of(logits);
  const Tensor& z = logits.value();
  require_matrix("cross_entropy", z);
  const std::size_t m = z.rows(), c = z.cols();
  if (labels.size() != m) {
    throw DataError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(m) + " rows");
  }
  Tensor probs(Shape{m, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                      std::to_string(c) + " classes");
    }
    const double* zi = z.data().data() + i * c;
    const double mx = *std::max_element(zi, zi + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (probs[i * c + j] = std::exp(zi[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    loss += mx + std::log(s) - zi[labels[i]];
  }
  loss /= static_cast<double>(m);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return g.record(Tensor({1}, std::vector<double>{loss}), {logits.id},
                  [m, c, probs = std::move(probs), lab = std::move(lab)](Graph& gr, std::size_t self) {
                    Tensor& dz = gr.grad_buffer(gr.inputs(self)[0]);
                    const double dy = gr.node_grad(self)[0] / static_cast<double>(m);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < c; ++j)
                        dz[i * c + j] += dy * (probs[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
                  });
}

}  // namespace gar
