#include "boed/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "boed/error.hpp"

namespace boed::ad {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Graph::check(bool ok, std::size_t at, const std::string& op, const std::string& what) const {
  if (!ok) {
    throw AutodiffError(op + " at node " + std::to_string(at) + ": " + what);
  }
}

Node Graph::push(std::string op, std::vector<std::size_t> inputs, Array value, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  check(value.all_finite(), id, op, "non-finite value");
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
  Record r;
  r.op = std::move(op);
  r.inputs = std::move(inputs);
  r.value = std::move(value);
  r.requires_grad = needs;
  if (needs) r.backward = std::move(backward);
  nodes_.push_back(std::move(r));
  return Node{id};
}

Array& Graph::grad_of(std::size_t id) {
  Record& r = nodes_[id];
  if (!r.has_grad) {
    r.grad = Array(r.value.shape(), 0.0);
    r.has_grad = true;
  }
  return r.grad;
}

Node Graph::input(std::string name, Array value, bool requires_grad) {
  const std::size_t id = nodes_.size();
  check(value.all_finite(), id, "input '" + name + "'", "non-finite value");
  Record r;
  r.op = "input";
  r.value = std::move(value);
  r.requires_grad = requires_grad;
  r.name = std::move(name);
  nodes_.push_back(std::move(r));
  return Node{id};
}

Node Graph::constant(Array value) {
  const std::size_t id = nodes_.size();
  check(value.all_finite(), id, "constant", "non-finite value");
  Record r;
  r.op = "constant";
  r.value = std::move(value);
  nodes_.push_back(std::move(r));
  return Node{id};
}

Node Graph::parameter(Parameter& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) return Node{it->second};
  const std::size_t id = nodes_.size();
  check(p.value.all_finite(), id, "parameter '" + p.name + "'", "non-finite value");
  Record r;
  r.op = "parameter";
  r.value = p.value;
  r.requires_grad = true;
  r.name = p.name;
  nodes_.push_back(std::move(r));
  parameter_nodes_.emplace(&p, id);
  return Node{id};
}

Node Graph::matmul(Node a, Node b) {
  const Array& av = value(a);
  const Array& bv = value(b);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  check(av.rank() >= 1 && bv.rank() >= 1 && k == bv.rows(), nodes_.size(), "matmul",
        "shape mismatch " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  Array out = Array::matrix(m, n);
  matmul_kernel(av.data(), bv.data(), out.data(), m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return push("matmul", {ia, ib}, std::move(out), [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const Array& grad = g.nodes_[self].grad;
    if (g.needs_grad(ia)) {
      matmul_abt_accumulate(grad.data(), g.nodes_[ib].value.data(), g.grad_of(ia).data(), m, n, k);
    }
    if (g.needs_grad(ib)) {
      matmul_atb_accumulate(g.nodes_[ia].value.data(), grad.data(), g.grad_of(ib).data(), m, k, n);
    }
  });
}

Graph::Broadcast Graph::classify(const Array& big, const Array& small, const std::string& op) const {
  if (big.shape() == small.shape() ||
      (big.size() == small.size() && big.rows() == small.rows() && big.cols() == small.cols())) {
    return Broadcast::kSame;
  }
  if (small.size() == 1) return Broadcast::kScalar;
  if (small.rank() == 2 && small.shape()[1] == 1 && small.shape()[0] == big.rows()) {
    return Broadcast::kCol;
  }
  if (small.rows() == 1 && small.cols() == big.cols()) return Broadcast::kRow;
  check(false, nodes_.size(), op,
        "cannot broadcast " + shape_string(small.shape()) + " against " + shape_string(big.shape()));
  return Broadcast::kSame;
}

namespace {

/// Index of the broadcast operand for element (r, c).
template <int Kind>
inline std::size_t broadcast_index(std::size_t r, std::size_t c, std::size_t cols) {
  if constexpr (Kind == 0) return r * cols + c;
  else if constexpr (Kind == 1) return 0;
  else if constexpr (Kind == 2) return c;
  else return r;
}

template <int Kind, bool Multiply>
void binary_forward(const double* a, const double* b, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double y = b[broadcast_index<Kind>(r, c, cols)];
      out[r * cols + c] = Multiply ? a[r * cols + c] * y : a[r * cols + c] + y;
    }
  }
}

template <int Kind, bool Multiply>
void binary_backward(const double* grad, const double* a, const double* b, double* ga, double* gb,
                     std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const std::size_t j = broadcast_index<Kind>(r, c, cols);
      if (ga) ga[i] += Multiply ? grad[i] * b[j] : grad[i];
      if (gb) gb[j] += Multiply ? grad[i] * a[i] : grad[i];
    }
  }
}

template <bool Multiply, class... Args>
void dispatch_forward(int kind, Args... args) {
  switch (kind) {
    case 0: binary_forward<0, Multiply>(args...); break;
    case 1: binary_forward<1, Multiply>(args...); break;
    case 2: binary_forward<2, Multiply>(args...); break;
    default: binary_forward<3, Multiply>(args...); break;
  }
}

template <bool Multiply, class... Args>
void dispatch_backward(int kind, Args... args) {
  switch (kind) {
    case 0: binary_backward<0, Multiply>(args...); break;
    case 1: binary_backward<1, Multiply>(args...); break;
    case 2: binary_backward<2, Multiply>(args...); break;
    default: binary_backward<3, Multiply>(args...); break;
  }
}

}  // namespace

Node Graph::binary(const std::string& op, Node a, Node b, bool multiply) {
  std::size_t ia = a.id, ib = b.id;
  if (value(Node{ia}).size() < value(Node{ib}).size()) std::swap(ia, ib);
  const Array& av = nodes_[ia].value;
  const Array& bv = nodes_[ib].value;
  const Broadcast kind = classify(av, bv, op);
  const int k = kind == Broadcast::kSame ? 0 : kind == Broadcast::kScalar ? 1 : kind == Broadcast::kRow ? 2 : 3;
  const std::size_t rows = av.rows(), cols = av.cols();
  Array out(av.shape());
  if (multiply) dispatch_forward<true>(k, av.data(), bv.data(), out.data(), rows, cols);
  else dispatch_forward<false>(k, av.data(), bv.data(), out.data(), rows, cols);
  return push(op, {ia, ib}, std::move(out), [ia, ib, rows, cols, multiply, k](Graph& g, std::size_t self) {
    double* ga = g.needs_grad(ia) ? g.grad_of(ia).data() : nullptr;
    double* gb = g.needs_grad(ib) ? g.grad_of(ib).data() : nullptr;
    const double* grad = g.nodes_[self].grad.data();
    const double* av = g.nodes_[ia].value.data();
    const double* bv = g.nodes_[ib].value.data();
    if (multiply) dispatch_backward<true>(k, grad, av, bv, ga, gb, rows, cols);
    else dispatch_backward<false>(k, grad, av, bv, ga, gb, rows, cols);
  });
}

Node Graph::linear(Node x, Node w, Node b) {
  const Array& xv = value(x);
  const Array& wv = value(w);
  const Array& bv = value(b);
  const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
  check(xv.rank() >= 1 && wv.rank() == 2 && k == wv.rows(), nodes_.size(), "linear",
        "shape mismatch " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()));
  check(bv.size() == n, nodes_.size(), "linear",
        "bias " + shape_string(bv.shape()) + " does not match " + std::to_string(n) + " outputs");
  Array out = Array::matrix(m, n);
  matmul_kernel(xv.data(), wv.data(), out.data(), m, k, n);
  for (std::size_t r = 0; r < m; ++r) {
    double* o = out.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) o[c] += bv[c];
  }
  const std::size_t ix = x.id, iw = w.id, ib = b.id;
  return push("linear", {ix, iw, ib}, std::move(out), [ix, iw, ib, m, k, n](Graph& g, std::size_t self) {
    const Array& grad = g.nodes_[self].grad;
    if (g.needs_grad(ix)) {
      matmul_abt_accumulate(grad.data(), g.nodes_[iw].value.data(), g.grad_of(ix).data(), m, n, k);
    }
    if (g.needs_grad(iw)) {
      matmul_atb_accumulate(g.nodes_[ix].value.data(), grad.data(), g.grad_of(iw).data(), m, k, n);
    }
    if (g.needs_grad(ib)) {
      double* gb = g.grad_of(ib).data();
      for (std::size_t r = 0; r < m; ++r) {
        const double* gr = grad.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) gb[c] += gr[c];
      }
    }
  });
}

Node Graph::add(Node a, Node b) { return binary("add", a, b, false); }
Node Graph::multiply(Node a, Node b) { return binary("multiply", a, b, true); }
Node Graph::sub(Node a, Node b) { return add(a, scale(b, -1.0)); }

template <class Forward, class Derivative>
Node Graph::unary(const std::string& op, Node a, Forward f, Derivative df) {
  const Array& av = value(a);
  Array out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id;
  return push(op, {ia}, std::move(out), [ia, df](Graph& g, std::size_t self) {
    const Record& me = g.nodes_[self];
    const Array& x = g.nodes_[ia].value;
    Array& gx = g.grad_of(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += me.grad[i] * df(x[i], me.value[i]);
  });
}

Node Graph::scale(Node a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Node Graph::add_scalar(Node a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return x + offset; },
               [](double, double) { return 1.0; });
}

Node Graph::relu(Node a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Node Graph::tanh(Node a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Node Graph::exp(Node a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Node Graph::log(Node a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Node Graph::softplus(Node a) {
  return unary("softplus", a, stable_softplus, [](double x, double) { return sigmoid(x); });
}

Node Graph::clamp(Node a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Node Graph::sum(Node a) {
  const Array& av = value(a);
  double s = 0.0;
  for (double v : av.values()) s += v;
  const std::size_t ia = a.id;
  return push("sum", {ia}, Array::scalar(s), [ia](Graph& g, std::size_t self) {
    const double gs = g.nodes_[self].grad[0];
    for (double& v : g.grad_of(ia).values()) v += gs;
  });
}

Node Graph::mean(Node a) {
  const Array& av = value(a);
  check(av.size() > 0, nodes_.size(), "mean", "empty input");
  double s = 0.0;
  for (double v : av.values()) s += v;
  const double n = static_cast<double>(av.size());
  const std::size_t ia = a.id;
  return push("mean", {ia}, Array::scalar(s / n), [ia, n](Graph& g, std::size_t self) {
    const double gs = g.nodes_[self].grad[0] / n;
    for (double& v : g.grad_of(ia).values()) v += gs;
  });
}

Node Graph::sum_cols(Node a) {
  const Array& av = value(a);
  const std::size_t rows = av.rows(), cols = av.cols();
  Array out = Array::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av[r * cols + c];
    out[r] = s;
  }
  const std::size_t ia = a.id;
  return push("sum_cols", {ia}, std::move(out), [ia, rows, cols](Graph& g, std::size_t self) {
    const Array& grad = g.nodes_[self].grad;
    Array& ga = g.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += grad[r];
    }
  });
}

Node Graph::logsumexp(Node a) {
  const Array& av = value(a);
  const std::size_t rows = av.rows(), cols = av.cols();
  check(cols > 0, nodes_.size(), "logsumexp", "empty input");
  Array out = av.rank() == 2 ? Array::matrix(rows, 1) : Array::scalar(0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    const double m = *std::max_element(x, x + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - m);
    out[r] = m + std::log(s);
  }
  const std::size_t ia = a.id;
  return push("logsumexp", {ia}, std::move(out), [ia, rows, cols](Graph& g, std::size_t self) {
    const Record& me = g.nodes_[self];
    const Array& x = g.nodes_[ia].value;
    Array& gx = g.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += me.grad[r] * std::exp(x[r * cols + c] - me.value[r]);
      }
    }
  });
}

Node Graph::gaussian_log_pdf(Node x, Node mean, Node log_std) {
  const Array& xv = value(x);
  const Array& mv = value(mean);
  const Array& sv = value(log_std);
  check(xv.size() == mv.size() && xv.size() == sv.size(), nodes_.size(), "gaussian_log_pdf",
        "shape mismatch " + shape_string(xv.shape()) + ", " + shape_string(mv.shape()) + ", " +
            shape_string(sv.shape()));
  Array out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double z = (xv[i] - mv[i]) * std::exp(-sv[i]);
    out[i] = -0.5 * z * z - sv[i] - kHalfLog2Pi;
  }
  const std::size_t ix = x.id, im = mean.id, is = log_std.id;
  return push("gaussian_log_pdf", {ix, im, is}, std::move(out), [ix, im, is](Graph& g, std::size_t self) {
    const Array& grad = g.nodes_[self].grad;
    const Array& xv = g.nodes_[ix].value;
    const Array& mv = g.nodes_[im].value;
    const Array& sv = g.nodes_[is].value;
    Array* gx = g.needs_grad(ix) ? &g.grad_of(ix) : nullptr;
    Array* gm = g.needs_grad(im) ? &g.grad_of(im) : nullptr;
    Array* gs = g.needs_grad(is) ? &g.grad_of(is) : nullptr;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double inv_sd = std::exp(-sv[i]);
      const double z = (xv[i] - mv[i]) * inv_sd;
      if (gx) (*gx)[i] += grad[i] * (-z * inv_sd);
      if (gm) (*gm)[i] += grad[i] * (z * inv_sd);
      if (gs) (*gs)[i] += grad[i] * (z * z - 1.0);
    }
  });
}

Node Graph::concatenate(Node a, Node b) {
  const Array& av = value(a);
  const Array& bv = value(b);
  check(av.rows() == bv.rows(), nodes_.size(), "concatenate",
        "row mismatch " + shape_string(av.shape()) + " | " + shape_string(bv.shape()));
  const std::size_t rows = av.rows(), ca = av.cols(), cb = bv.cols();
  Array out = Array::matrix(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  const std::size_t ia = a.id, ib = b.id;
  return push("concatenate", {ia, ib}, std::move(out), [ia, ib, rows, ca, cb](Graph& g, std::size_t self) {
    const Array& grad = g.nodes_[self].grad;
    if (g.needs_grad(ia)) {
      Array& ga = g.grad_of(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += grad[r * (ca + cb) + c];
    }
    if (g.needs_grad(ib)) {
      Array& gb = g.grad_of(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += grad[r * (ca + cb) + ca + c];
    }
  });
}

Node Graph::slice_cols(Node a, std::size_t begin, std::size_t end) {
  const Array& av = value(a);
  const std::size_t rows = av.rows(), cols = av.cols();
  check(begin < end && end <= cols, nodes_.size(), "slice_cols",
        "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
            shape_string(av.shape()));
  const std::size_t w = end - begin;
  Array out = Array::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * cols + begin, w, out.data() + r * w);
  const std::size_t ia = a.id;
  return push("slice_cols", {ia}, std::move(out), [ia, rows, cols, begin, w](Graph& g, std::size_t self) {
    const Array& grad = g.nodes_[self].grad;
    Array& ga = g.grad_of(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += grad[r * w + c];
  });
}

Node Graph::segment_sum(Node a, std::vector<std::pair<std::size_t, std::size_t>> ranges) {
  const Array& av = value(a);
  const std::size_t rows = av.rows(), cols = av.cols();
  Array out = Array::matrix(ranges.size(), cols);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const auto [lo, hi] = ranges[i];
    check(lo <= hi && hi <= rows, nodes_.size(), "segment_sum",
          "segment [" + std::to_string(lo) + ", " + std::to_string(hi) + ") outside " +
              std::to_string(rows) + " rows");
    double* o = out.data() + i * cols;
    for (std::size_t r = lo; r < hi; ++r) {
      const double* x = av.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += x[c];
    }
  }
  const std::size_t ia = a.id;
  return push("segment_sum", {ia}, std::move(out),
              [ia, cols, ranges = std::move(ranges)](Graph& g, std::size_t self) {
                const Array& grad = g.nodes_[self].grad;
                Array& ga = g.grad_of(ia);
                for (std::size_t i = 0; i < ranges.size(); ++i) {
                  const double* gi = grad.data() + i * cols;
                  for (std::size_t r = ranges[i].first; r < ranges[i].second; ++r) {
                    double* x = ga.data() + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) x[c] += gi[c];
                  }
                }
              });
}

Gradients Graph::backward(Node output) {
  const std::size_t out = output.id;
  if (out >= nodes_.size()) throw AutodiffError("backward: unknown node " + std::to_string(out));
  check(nodes_[out].value.size() == 1, out, "backward",
        "output is not scalar, shape " + shape_string(nodes_[out].value.shape()));
  for (Record& r : nodes_) {
    r.has_grad = false;
    r.grad = Array();
  }
  if (nodes_[out].requires_grad) {
    grad_of(out)[0] = 1.0;
    for (std::size_t i = out + 1; i-- > 0;) {
      Record& r = nodes_[i];
      if (r.has_grad && r.backward) r.backward(*this, i);
    }
  }
  Gradients result;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Record& r = nodes_[i];
    if (r.name.empty() || !r.requires_grad) continue;
    result.emplace(r.name, grad_of(i));
  }
  return result;
}

}  // namespace boed::ad
