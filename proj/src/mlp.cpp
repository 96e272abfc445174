#include "boed/autodiff/mlp.hpp"

#include <cmath>

#include "boed/error.hpp"

namespace boed::ad {

Mlp::Mlp(const MlpSpec& spec, const std::string& prefix, Rng& rng) : spec_(spec) {
  std::vector<std::size_t> widths{spec.input_dim};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.output_dim);
  for (std::size_t w : widths) {
    if (w == 0) throw UsageError("mlp '" + prefix + "': layer widths must be >= 1");
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Array w = Array::matrix(fan_in, fan_out);
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    const std::string layer = prefix + ".l" + std::to_string(l);
    weights_.push_back({layer + ".W", std::move(w)});
    biases_.push_back({layer + ".b", Array({fan_out}, 0.0)});
  }
}

Node Mlp::forward(Graph& g, Node x, bool frozen) {
  auto leaf = [&](Parameter& p) { return frozen ? g.constant(p.value) : g.parameter(p); };
  Node h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = g.linear(h, leaf(weights_[l]), leaf(biases_[l]));
    if (l + 1 == weights_.size()) break;
    switch (spec_.activation) {
      case Activation::kRelu: h = g.relu(h); break;
      case Activation::kTanh: h = g.tanh(h); break;
      case Activation::kNone: break;
    }
  }
  return h;
}

Array Mlp::apply(const Array& x) const {
  Array h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Array& w = weights_[l].value;
    const Array& b = biases_[l].value;
    if (h.cols() != w.rows()) {
      throw AutodiffError("mlp apply: input " + shape_string(h.shape()) + " vs weight " +
                          shape_string(w.shape()));
    }
    const std::size_t rows = h.rows(), n = w.cols();
    Array out = Array::matrix(rows, n);
    matmul_kernel(h.data(), w.data(), out.data(), rows, w.rows(), n);
    const bool last = l + 1 == weights_.size();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        double v = out[r * n + c] + b[c];
        if (!last) {
          if (spec_.activation == Activation::kRelu) v = v > 0 ? v : 0.0;
          else if (spec_.activation == Activation::kTanh) v = std::tanh(v);
        }
        out[r * n + c] = v;
      }
    }
    h = std::move(out);
  }
  return h;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void soft_update(std::vector<Parameter*> target, const std::vector<const Parameter*>& source, double rate) {
  if (target.size() != source.size()) throw AutodiffError("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    Array& t = target[i]->value;
    const Array& s = source[i]->value;
    if (t.shape() != s.shape()) throw AutodiffError("soft_update: shape mismatch for " + target[i]->name);
    if (rate == 1.0) {
      t = s;
      continue;
    }
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = rate * s[j] + (1.0 - rate) * t[j];
  }
}

}  // namespace boed::ad
