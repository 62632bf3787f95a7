#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gar/random.hpp"
#include "gar/tensor.hpp"

namespace gar {

enum class Mode { kTraining, kInference };

// A learnable tensor and its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad() { grad.fill(0.0); }

  std::string name;
  Tensor value;
  Tensor grad;
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Append-only tape built during a forward pass. backward() walks it once in
// reverse order. Leaves created with param() push their gradient into the
// owning Parameter, so a Graph must not outlive the parameters it references.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(Mode mode = Mode::kInference, Rng* dropout_rng = nullptr);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::kTraining; }
  Rng* rng() const { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() target with respect to this node; zeros
  // if the node did not influence it.
  Tensor grad(Var v) const;

  // Accumulates d(loss)/d(param) into every Parameter reachable from loss.
  void backward(Var loss);

  // Op implementation hooks.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& node_grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(std::size_t id);
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until something flows into it
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Mode mode_;
  Rng* rng_;
  std::vector<Node> nodes_;
};

// ---- differentiable operations ------------------------------------------
// Rank-1 operands of matmul are read as a single row.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
// Adds a length-n vector to every row of an m x n matrix.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
// sum_i coeffs[i] * xs[i]; all operands share one shape.
Var weighted_sum(std::span<const Var> xs, std::span<const double> coeffs);
Var relu(Var a);
Var log(Var a);
Var sum(Var a);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Inverted dropout; identity in inference mode or at rate 0.
Var dropout(Var x, double rate);
Var concat_cols(std::span<const Var> xs);
// Column-wise max over the rows of an N x d set; returns shape [d]. Ties go
// to the lowest row index.
Var max_over_set(Var x);
// Mean over rows of -log softmax(logits)[label]; returns shape [1].
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace gar
