#include "boed/autodiff/adam.hpp"

#include <cmath>

#include "boed/error.hpp"

namespace boed::ad {

void Adam::step(const std::vector<Parameter*>& params, const Gradients& grads) {
  for (const Parameter* p : params) {
    auto it = grads.find(p->name);
    if (it == grads.end()) throw AutodiffError("adam: no gradient for '" + p->name + "'");
    if (it->second.size() != p->value.size()) {
      throw AutodiffError("adam: gradient shape " + shape_string(it->second.shape()) +
                          " does not match parameter '" + p->name + "' " +
                          shape_string(p->value.shape()));
    }
    if (!it->second.all_finite()) throw NumericalError("adam: non-finite gradient for '" + p->name + "'");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (Parameter* p : params) {
    const Array& g = grads.at(p->name);
    auto [m_it, m_new] = first_.try_emplace(p->name, p->value.shape(), 0.0);
    auto [v_it, v_new] = second_.try_emplace(p->name, p->value.shape(), 0.0);
    Array& m = m_it->second;
    Array& v = v_it->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p->value[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace boed::ad
