#pragma once

#include <functional>
#include <memory>
#include <string>

#include "boed/models.hpp"
#include "boed/rng.hpp"

namespace boed {

/// A stateful design policy for one episode at a time.
class DesignPolicy {
 public:
  virtual ~DesignPolicy() = default;

  virtual std::string name() const = 0;
  /// Forget the current history (start of an episode).
  virtual void reset() = 0;
  virtual Design propose(Rng& rng) = 0;
  virtual void observe(const Design& d, Outcome y) = 0;
};

/// Builds a fresh policy instance per rollout.
using PolicyFactory = std::function<std::unique_ptr<DesignPolicy>()>;

/// Always proposes the same design.
class FixedDesignPolicy final : public DesignPolicy {
 public:
  explicit FixedDesignPolicy(Design d) : design_(std::move(d)) {}
  std::string name() const override { return "fixed"; }
  void reset() override {}
  Design propose(Rng&) override { return design_; }
  void observe(const Design&, Outcome) override {}

 private:
  Design design_;
};

}  // namespace boed
