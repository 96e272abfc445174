#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "boed/autodiff/array.hpp"

namespace boed::ad {

/// A trainable leaf. Owned by modules (Mlp, temperature, ...); graphs refer to it by address.
struct Parameter {
  std::string name;
  Array value;
};

/// Gradients keyed by parameter (or differentiable input) name.
using Gradients = std::map<std::string, Array>;

/// Handle to a node of a Graph.
struct Node {
  std::size_t id = 0;
};

/// Define-by-run reverse-mode tape.
///
/// Every operation evaluates eagerly and records how to propagate gradients.
/// A graph is built per forward pass and discarded afterwards. Nodes that do
/// not depend on a parameter or a differentiable input are never visited by
/// backward().
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // Leaves.
  Node input(std::string name, Array value, bool requires_grad = false);
  Node constant(Array value);
  /// Registers a parameter leaf; repeated calls with the same parameter return the same node.
  Node parameter(Parameter& p);

  const Array& value(Node n) const { return nodes_.at(n.id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Linear algebra and elementwise arithmetic. Binary elementwise ops broadcast
  // a scalar, a row [n] / [1, n], or a column [rows, 1] against the other operand.
  Node matmul(Node a, Node b);
  /// x W + b with b broadcast over rows; one node instead of matmul + add.
  Node linear(Node x, Node w, Node b);
  Node add(Node a, Node b);
  Node sub(Node a, Node b);
  Node multiply(Node a, Node b);
  Node scale(Node a, double factor);
  Node add_scalar(Node a, double offset);

  // Elementwise nonlinearities.
  Node relu(Node a);
  Node tanh(Node a);
  Node exp(Node a);
  Node log(Node a);
  Node softplus(Node a);
  /// Gradient is zero where the input was clipped.
  Node clamp(Node a, double lo, double hi);

  // Reductions.
  Node sum(Node a);
  Node mean(Node a);
  /// Row sums, [rows, 1].
  Node sum_cols(Node a);
  /// Overflow-safe log-sum-exp over the last axis: scalar for rank <= 1, [rows, 1] for rank 2.
  Node logsumexp(Node a);

  /// Elementwise log N(x; mean, exp(log_std)^2); all operands share one shape.
  Node gaussian_log_pdf(Node x, Node mean, Node log_std);

  // Structural.
  /// Column-wise concatenation; operands must have equal row counts.
  Node concatenate(Node a, Node b);
  Node slice_cols(Node a, std::size_t begin, std::size_t end);
  /// Output row i is the sum of input rows [ranges[i].first, ranges[i].second).
  Node segment_sum(Node a, std::vector<std::pair<std::size_t, std::size_t>> ranges);

  /// Reverse pass from a scalar node. Returns gradients for every parameter
  /// and every input created with requires_grad.
  Gradients backward(Node output);

 private:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Record {
    std::string op;
    std::vector<std::size_t> inputs;
    Array value;
    Array grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    std::string name;  // parameter / input name, empty otherwise
  };

  Node push(std::string op, std::vector<std::size_t> inputs, Array value, BackwardFn backward);
  Array& grad_of(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void check(bool ok, std::size_t at, const std::string& op, const std::string& what) const;

  template <class Forward, class Derivative>
  Node unary(const std::string& op, Node a, Forward f, Derivative df);
  enum class Broadcast { kSame, kScalar, kRow, kCol };
  Broadcast classify(const Array& big, const Array& small, const std::string& op) const;
  Node binary(const std::string& op, Node a, Node b, bool multiply);

  std::vector<Record> nodes_;
  std::map<const Parameter*, std::size_t> parameter_nodes_;
};

}  // namespace boed::ad
