#pragma once

// Central finite-difference checks shared by the autodiff tests and the acceptance gate.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "boed/autodiff/graph.hpp"
#include "boed/autodiff/mlp.hpp"
#include "boed/rng.hpp"

namespace boed::checks {

using namespace boed::ad;

inline Array random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Array a = Array::matrix(r, c);
  for (double& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

// Builds a scalar loss from named inputs; used for both the tape and finite differences.
using Builder = std::function<Node(Graph&, std::vector<Node>&)>;

inline double evaluate(const Builder& build, const std::vector<Array>& inputs) {
  Graph g;
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < inputs.size(); ++i) nodes.push_back(g.input("x" + std::to_string(i), inputs[i]));
  return g.value(build(g, nodes))[0];
}

inline double max_fd_error(const Builder& build, std::vector<Array> inputs, double h = 1e-5) {
  Graph g;
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < inputs.size(); ++i) nodes.push_back(g.input("x" + std::to_string(i), inputs[i], true));
  const Gradients grads = g.backward(build(g, nodes));
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Array& analytic = grads.at("x" + std::to_string(i));
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double x0 = inputs[i][k];
      inputs[i][k] = x0 + h;
      const double up = evaluate(build, inputs);
      inputs[i][k] = x0 - h;
      const double down = evaluate(build, inputs);
      inputs[i][k] = x0;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(analytic[k] - numeric) / std::max(1.0, std::abs(numeric) + std::abs(analytic[k]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

struct FdCase {
  std::string name;
  std::vector<std::vector<std::size_t>> shapes;
  Builder build;
  double lo = -1.0, hi = 1.0;
};

inline std::vector<FdCase> fd_cases() {
  const std::vector<std::size_t> m{3, 4}, col{3, 1}, row{4}, sc{};
  auto sum_of = [](Graph& g, Node n) { return g.sum(n); };
  std::vector<FdCase> c;
  c.push_back({"matmul", {{3, 4}, {4, 2}}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.matmul(x[0], x[1]))); }});
  c.push_back({"linear", {{3, 4}, {4, 2}, {2}},
               [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.linear(x[0], x[1], x[2]))); }});
  c.push_back({"add_same", {m, m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.add(x[0], x[1]))); }});
  c.push_back({"add_row", {m, row}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.add(x[0], x[1]))); }});
  c.push_back({"add_col", {m, col}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.add(x[0], x[1]))); }});
  c.push_back({"sub_scalar", {m, sc}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.sub(x[0], x[1]))); }});
  c.push_back({"sub_reversed", {col, m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.sub(x[0], x[1]))); }});
  c.push_back({"multiply_same", {m, m}, [=](Graph& g, auto& x) { return sum_of(g, g.multiply(x[0], x[1])); }});
  c.push_back({"multiply_row", {m, row}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.multiply(x[0], x[1]))); }});
  c.push_back({"multiply_col", {m, col}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.multiply(x[0], x[1]))); }});
  c.push_back({"scale", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.scale(x[0], -2.5))); }});
  c.push_back({"add_scalar", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.add_scalar(x[0], 0.3))); }});
  c.push_back({"relu", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.multiply(g.relu(x[0]), x[0])); }});
  c.push_back({"tanh", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(x[0])); }});
  c.push_back({"exp", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.exp(x[0])); }});
  c.push_back({"log", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.log(x[0])); }, 0.2, 3.0});
  c.push_back({"softplus", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.softplus(x[0])); }, -4.0, 4.0});
  c.push_back({"clamp", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.multiply(g.clamp(x[0], -0.5, 0.5), x[0])); }});
  c.push_back({"sum", {m}, [=](Graph& g, auto& x) { return g.sum(g.multiply(x[0], x[0])); }});
  c.push_back({"mean", {m}, [=](Graph& g, auto& x) { return g.mean(g.exp(x[0])); }});
  c.push_back({"sum_cols", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.sum_cols(x[0]))); }});
  c.push_back({"logsumexp_rows", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.logsumexp(x[0]))); }});
  c.push_back({"logsumexp_vector", {row}, [=](Graph& g, auto& x) { return g.logsumexp(x[0]); }});
  c.push_back({"gaussian_log_pdf", {m, m, m},
               [=](Graph& g, auto& x) { return g.sum(g.gaussian_log_pdf(x[0], x[1], x[2])); }});
  c.push_back({"concatenate", {m, col},
               [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.concatenate(x[0], g.scale(x[1], 2.0)))); }});
  c.push_back({"slice_cols", {m}, [=](Graph& g, auto& x) { return sum_of(g, g.exp(g.slice_cols(x[0], 1, 3))); }});
  c.push_back({"segment_sum", {{5, 2}},
               [=](Graph& g, auto& x) { return sum_of(g, g.tanh(g.segment_sum(x[0], {{0, 2}, {2, 2}, {1, 5}}))); }});
  return c;
}


/// Worst relative error of one primitive case at random point `point`.
inline double primitive_fd_error(const FdCase& fc, int point) {
  Rng rng = Rng::substream(17, static_cast<std::uint64_t>(point));
  std::vector<Array> inputs;
  for (const auto& shape : fc.shapes) {
    Array a(shape);
    for (double& v : a.values()) v = rng.uniform(fc.lo, fc.hi);
    inputs.push_back(std::move(a));
  }
  if (fc.name == "relu" || fc.name == "clamp") {
    // Keep finite differences away from the kinks.
    for (double& v : inputs[0].values()) {
      if (std::abs(v) < 1e-3 || std::abs(std::abs(v) - 0.5) < 1e-3) v += 0.01;
    }
  }
  return max_fd_error(fc.build, inputs);
}

/// Worst relative error over every parameter of a 2-hidden-layer MLP with a squared loss.
inline double mlp_fd_error(int point) {
  Rng rng = Rng::substream(99, static_cast<std::uint64_t>(point));
  Mlp net({3, {8, 8}, Activation::kTanh, 2}, "m", rng);
  const Array x = random_matrix(4, 3, rng);
  const Array target = random_matrix(4, 2, rng);
  auto loss_of = [&](Graph& g) {
    const Node d = g.sub(net.forward(g, g.constant(x)), g.constant(target));
    return g.mean(g.multiply(d, d));
  };
  Graph g;
  const Gradients grads = g.backward(loss_of(g));
  double worst = 0.0;
  const double h = 1e-5;
  for (Parameter* p : net.parameters()) {
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double w0 = p->value[k];
      p->value[k] = w0 + h;
      Graph gu;
      const double up = gu.value(loss_of(gu))[0];
      p->value[k] = w0 - h;
      Graph gd;
      const double down = gd.value(loss_of(gd))[0];
      p->value[k] = w0;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.at(p->name)[k];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric) + std::abs(analytic)));
    }
  }
  return worst;
}

}  // namespace boed::checks
