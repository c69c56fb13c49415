#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "unlearn_arena/error.hpp"
#include "unlearn_arena/numerics.hpp"
#include "unlearn_arena/rng.hpp"
#include "unlearn_arena/schemes.hpp"

namespace arena {

/// Logit clamp range used by the DP oracle: after shifting so the top logit
/// sits at +10, every coordinate is clamped to [-10, 10].
inline constexpr double kLogitClamp = 10.0;
inline constexpr double kLogitSensitivity = 2.0 * kLogitClamp;

/// Query access to a model's Infer, with a hard query budget. A DP oracle
/// perturbs the clamped logits with Laplace(Δ / ε) noise on every answer.
class InferenceOracle {
 public:
  InferenceOracle(ModelState model, std::size_t budget)
      : model_(std::move(model)), budget_(budget), rng_(0, 0) {}

  InferenceOracle(ModelState model, std::size_t budget, double epsilon, double delta, RngStream rng)
      : model_(std::move(model)), budget_(budget), private_(true), epsilon_(epsilon), delta_(delta),
        rng_(std::move(rng)) {}

  Vector query(std::span<const double> x) {
    if (queries_ >= budget_) {
      throw Error(ErrorKind::BudgetExhausted, "query budget of " + std::to_string(budget_) + " spent");
    }
    const std::size_t position = queries_++;
    if (!private_) return infer(model_, x);
    Vector z = logits(model_, x);
    const double top = *std::max_element(z.begin(), z.end());
    RngStream noise = rng_.derive("query", position);
    const double scale = kLogitSensitivity / epsilon_;
    for (auto& v : z) {
      v = std::clamp(v - top + kLogitClamp, -kLogitClamp, kLogitClamp);
      v += noise.laplace(scale);
    }
    return softmax(z);
  }

  std::size_t queries() const noexcept { return queries_; }
  std::size_t budget() const noexcept { return budget_; }
  std::size_t input_dim() const noexcept { return model_.arch.input_dim(); }
  bool is_private() const noexcept { return private_; }
  double epsilon() const noexcept { return epsilon_; }
  double delta() const noexcept { return delta_; }
  /// Basic composition over the queries answered so far.
  double spent_epsilon() const noexcept { return private_ ? epsilon_ * static_cast<double>(queries_) : 0.0; }

 private:
  ModelState model_;
  std::size_t budget_;
  std::size_t queries_ = 0;
  bool private_ = false;
  double epsilon_ = std::numeric_limits<double>::infinity();
  double delta_ = 0.0;
  RngStream rng_;
};

/// Black-box access to `state` where each answer is ε-DP in the logits.
/// ε is the per-query parameter; δ is recorded (Laplace noise is pure ε-DP).
inline InferenceOracle wrap_dp_oracle(const ModelState& state, double epsilon, double delta, std::size_t budget,
                                      RngStream rng) {
  if (!is_parametric_classifier(state.scheme)) {
    throw Error(ErrorKind::NotParametric, "the DP oracle perturbs logits of a parametric classifier");
  }
  if (!(epsilon > 0.0)) throw Error(ErrorKind::ConfigError, "dp epsilon must be positive");
  return InferenceOracle(state, budget, epsilon, delta, std::move(rng));
}

inline InferenceOracle wrap_oracle(const ModelState& state, std::size_t budget) { return InferenceOracle(state, budget); }

}  // namespace arena
