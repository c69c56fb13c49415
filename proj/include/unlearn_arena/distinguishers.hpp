#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unlearn_arena/datasets.hpp"
#include "unlearn_arena/error.hpp"
#include "unlearn_arena/numerics.hpp"
#include "unlearn_arena/oracle.hpp"
#include "unlearn_arena/rng.hpp"
#include "unlearn_arena/schemes.hpp"
#include "unlearn_arena/unlearners.hpp"

namespace arena {

enum class DistinguisherKind { Kld, Mia, ExactMatch };

inline const char* to_string(DistinguisherKind k) {
  switch (k) {
    case DistinguisherKind::Kld: return "kld";
    case DistinguisherKind::Mia: return "mia";
    case DistinguisherKind::ExactMatch: return "exact-match";
  }
  return "unknown";
}

inline std::optional<DistinguisherKind> parse_distinguisher(std::string_view s) {
  if (s == "kld") return DistinguisherKind::Kld;
  if (s == "mia") return DistinguisherKind::Mia;
  if (s == "exact-match") return DistinguisherKind::ExactMatch;
  return std::nullopt;
}

struct ScorePair {
  double first = 0.0;
  double second = 0.0;
  DistinguisherKind kind = DistinguisherKind::Kld;
};

inline constexpr double kDefaultKldVariance = 0.1;

// ---------------------------------------------------------------------------
// KLDScore
// ---------------------------------------------------------------------------

/// Σ over forget examples of KL(M(x̃) ‖ M_orig(x̃)) with x̃ = x + N(0, variance).
/// The perturbation of each example is keyed by (noise stream, example id),
/// so both candidates see identical inputs regardless of call order.
template <typename Infer>
double kld_score_with(const ModelState& original, Infer&& candidate, const Dataset& forget, double variance,
                      const RngStream& noise) {
  if (!is_classifier(original.scheme)) throw Error(ErrorKind::NotClassifier, "KLDScore needs class probabilities");
  if (forget.dims() != original.arch.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "forget examples do not match the model input");
  }
  double total = 0.0;
  Vector x(forget.dims());
  for (std::size_t r = 0; r < forget.size(); ++r) {
    RngStream example_noise = noise.derive("kld-noise", static_cast<std::uint64_t>(forget.ids[r]));
    const Vector eps = gaussian_vector(example_noise, forget.dims(), 0.0, variance);
    const auto row = forget.features.row(r);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = row[j] + eps[j];
    const Vector p = candidate(std::span<const double>(x));
    const Vector q = infer(original, x);
    total += kl_divergence(p, q);
  }
  return total;
}

inline double kld_score(const ModelState& original, const ModelState& candidate, const Dataset& forget,
                        double variance, const RngStream& noise) {
  if (candidate.arch.input_dim() != original.arch.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "candidate and original models differ in input dimension");
  }
  return kld_score_with(
      original, [&](std::span<const double> x) { return infer(candidate, x); }, forget, variance, noise);
}

inline double kld_score(const ModelState& original, InferenceOracle& candidate, const Dataset& forget,
                        double variance, const RngStream& noise) {
  if (candidate.input_dim() != original.arch.input_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "oracle and original models differ in input dimension");
  }
  return kld_score_with(
      original, [&](std::span<const double> x) { return candidate.query(x); }, forget, variance, noise);
}

// ---------------------------------------------------------------------------
// MIAScore: shadow-model logistic attack
// ---------------------------------------------------------------------------

/// Per-example attack features: descending class probabilities, the
/// cross-entropy loss of the true label, and a correctness bit.
inline Vector attack_features(std::span<const double> probs, std::size_t label) {
  Vector f(probs.begin(), probs.end());
  std::sort(f.begin(), f.end(), std::greater<>());
  const double py = label < probs.size() ? probs[label] : 0.0;
  f.push_back(-std::log(std::max(py, kKlFloor)));
  f.push_back(argmax(probs) == label ? 1.0 : 0.0);
  return f;
}

struct AttackModel {
  Vector weights;  // one per feature, then the bias
  Vector feature_mean;
  Vector feature_scale;
  std::size_t shadow_count = 0;
  double held_out_accuracy = 0.0;

  double membership_probability(std::span<const double> features) const {
    if (features.size() != feature_mean.size()) {
      throw Error(ErrorKind::DimensionMismatch, "attack features do not match the trained attack");
    }
    double z = weights.back();
    for (std::size_t i = 0; i < features.size(); ++i)
      z += weights[i] * (features[i] - feature_mean[i]) / feature_scale[i];
    return 1.0 / (1.0 + std::exp(-z));
  }
};

/// Logistic regression of membership labels on standardized features,
/// full-batch gradient descent from zero.
inline AttackModel fit_attack(const std::vector<Vector>& features, const std::vector<int>& members,
                              std::size_t iterations = 400, double lr = 0.5, double l2 = 1e-4) {
  if (features.empty()) throw Error(ErrorKind::InsufficientPopulation, "no attack training pairs");
  const std::size_t nf = features.front().size();
  const double n = static_cast<double>(features.size());
  AttackModel a;
  a.feature_mean.assign(nf, 0.0);
  a.feature_scale.assign(nf, 0.0);
  for (const auto& f : features)
    for (std::size_t i = 0; i < nf; ++i) a.feature_mean[i] += f[i] / n;
  for (const auto& f : features)
    for (std::size_t i = 0; i < nf; ++i) a.feature_scale[i] += (f[i] - a.feature_mean[i]) * (f[i] - a.feature_mean[i]) / n;
  for (auto& s : a.feature_scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;

  std::vector<Vector> z(features.size(), Vector(nf));
  for (std::size_t r = 0; r < features.size(); ++r)
    for (std::size_t i = 0; i < nf; ++i) z[r][i] = (features[r][i] - a.feature_mean[i]) / a.feature_scale[i];

  a.weights.assign(nf + 1, 0.0);
  Vector grad(nf + 1);
  for (std::size_t it = 0; it < iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t r = 0; r < z.size(); ++r) {
      double s = a.weights[nf];
      for (std::size_t i = 0; i < nf; ++i) s += a.weights[i] * z[r][i];
      const double err = 1.0 / (1.0 + std::exp(-s)) - static_cast<double>(members[r]);
      for (std::size_t i = 0; i < nf; ++i) grad[i] += err * z[r][i] / n;
      grad[nf] += err / n;
    }
    for (std::size_t i = 0; i < nf; ++i) grad[i] += l2 * a.weights[i];
    for (std::size_t i = 0; i <= nf; ++i) a.weights[i] -= lr * grad[i];
  }
  return a;
}

inline double attack_accuracy(const AttackModel& a, const std::vector<Vector>& features, const std::vector<int>& members) {
  if (features.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < features.size(); ++r) {
    const bool guess = a.membership_probability(features[r]) >= 0.5;
    if (guess == (members[r] == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(features.size());
}

/// Shadow-model attack: each shadow trains on a random half of the
/// population; (features, in/out) pairs from every shadow train the attack,
/// with a 20% hold-out used to report its accuracy.
inline AttackModel train_attack_model(SchemeId scheme, const Architecture& arch, const SchemeConfig& cfg,
                                      const Dataset& population, std::size_t shadow_count, RngStream rng,
                                      std::size_t security_parameter = 0) {
  if (shadow_count == 0 || population.size() < 4) {
    throw Error(ErrorKind::InsufficientPopulation, std::to_string(population.size()) + " population examples for " +
                                                       std::to_string(shadow_count) + " shadows");
  }
  std::vector<Vector> features;
  std::vector<int> members;
  for (std::size_t s = 0; s < shadow_count; ++s) {
    RngStream srng = rng.derive("shadow", s);
    IdList ids = population.ids;
    RngStream split_rng = srng.derive("split");
    split_rng.shuffle(ids);
    const std::size_t half = ids.size() / 2;
    IdList in(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(half));
    std::sort(in.begin(), in.end());
    const Dataset in_data = subset(population, in);
    ModelState m = init(scheme, arch, security_parameter, srng.derive("init"), cfg.k);
    m = learn(std::move(m), in_data, cfg, srng.derive("learn"), false).state;
    for (std::size_t r = 0; r < population.size(); ++r) {
      const Vector p = infer(m, population.features.row(r));
      features.push_back(attack_features(p, population.label_of(r)));
      members.push_back(std::binary_search(in.begin(), in.end(), population.ids[r]) ? 1 : 0);
    }
  }
  std::vector<std::size_t> order(features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream holdout = rng.derive("holdout");
  holdout.shuffle(order);
  const std::size_t n_fit = order.size() - order.size() / 5;
  std::vector<Vector> fit_f, test_f;
  std::vector<int> fit_m, test_m;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& f = i < n_fit ? fit_f : test_f;
    auto& m = i < n_fit ? fit_m : test_m;
    f.push_back(features[order[i]]);
    m.push_back(members[order[i]]);
  }
  AttackModel a = fit_attack(fit_f, fit_m);
  a.shadow_count = shadow_count;
  a.held_out_accuracy = attack_accuracy(a, test_f, test_m);
  return a;
}

template <typename Infer>
double mia_score_with(Infer&& candidate, const Dataset& forget, const AttackModel& attack) {
  if (forget.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < forget.size(); ++r) {
    const Vector p = candidate(forget.features.row(r));
    total += attack.membership_probability(attack_features(p, forget.label_of(r)));
  }
  return total / static_cast<double>(forget.size());
}

/// Mean attack membership probability over the forget examples.
inline double mia_score(const ModelState& m, const Dataset& forget, const AttackModel& attack) {
  if (forget.dims() != m.arch.input_dim()) throw Error(ErrorKind::DimensionMismatch, "forget dims mismatch");
  return mia_score_with([&](std::span<const double> x) { return infer(m, x); }, forget, attack);
}

inline double mia_score(InferenceOracle& m, const Dataset& forget, const AttackModel& attack) {
  if (forget.dims() != m.input_dim()) throw Error(ErrorKind::DimensionMismatch, "forget dims mismatch");
  return mia_score_with([&](std::span<const double> x) { return m.query(x); }, forget, attack);
}

// ---------------------------------------------------------------------------
// Decision rules
// ---------------------------------------------------------------------------

enum class Position { First, Second };

struct DecisionRule {
  enum class Kind { LowerIsUnlearned, HigherIsUnlearned, Threshold };
  Kind kind = Kind::LowerIsUnlearned;
  double threshold = 0.0;
  bool threshold_lower_is_unlearned = true;
  double median_unlearned = 0.0;
  double median_control = 0.0;
  std::size_t samples = 0;
  bool degenerate = false;  // medians tied; fell back to lower-is-unlearned
};

inline const char* to_string(DecisionRule::Kind k) {
  switch (k) {
    case DecisionRule::Kind::LowerIsUnlearned: return "lower-is-unlearned";
    case DecisionRule::Kind::HigherIsUnlearned: return "higher-is-unlearned";
    case DecisionRule::Kind::Threshold: return "threshold";
  }
  return "unknown";
}

/// Which presented position holds the unlearned model. Ties go to First.
inline Position decide(const DecisionRule& rule, const ScorePair& s) {
  auto by_direction = [&](bool lower) {
    if (s.first == s.second) return Position::First;
    const bool first_lower = s.first < s.second;
    return first_lower == lower ? Position::First : Position::Second;
  };
  switch (rule.kind) {
    case DecisionRule::Kind::LowerIsUnlearned: return by_direction(true);
    case DecisionRule::Kind::HigherIsUnlearned: return by_direction(false);
    case DecisionRule::Kind::Threshold: {
      const bool lower = rule.threshold_lower_is_unlearned;
      const bool a = lower ? s.first < rule.threshold : s.first > rule.threshold;
      const bool b = lower ? s.second < rule.threshold : s.second > rule.threshold;
      if (a != b) return a ? Position::First : Position::Second;
      return by_direction(lower);
    }
  }
  return Position::First;
}

inline constexpr double kDegenerateMedianGap = 1e-12;

/// Scores a candidate model as the adversary would; the stream argument
/// supplies any randomness the scorer needs (e.g. DP oracle noise).
using ModelScorer = std::function<double(const ModelState& candidate, RngStream stream)>;

/// Adversary self-simulation: runs Unlearn on M_orig (fresh streams when
/// the method is randomized) and retrains controls on the retain set, then
/// orients the rule by the gap between the two score medians.
inline DecisionRule calibrate_rule(const ModelScorer& score, const TrainedOriginal& original, const SchemeConfig& scfg,
                                   const UnlearnerConfig& ucfg, const Dataset& train, const IdList& forget_ids,
                                   std::size_t calibration_trials, RngStream rng) {
  if (calibration_trials < 8) throw Error(ErrorKind::ConfigError, "calibration needs at least 8 trials");
  const IdList retain = set_difference_ids(train.ids, forget_ids);
  std::vector<double> unlearned_scores, control_scores;
  std::optional<ModelState> deterministic;
  for (std::size_t t = 0; t < calibration_trials; ++t) {
    RngStream trng = rng.derive("calibration", t);
    const ModelState* u = nullptr;
    ModelState fresh;
    if (ucfg.randomized()) {
      fresh = unlearn(ucfg, original, train, forget_ids, scfg, trng.derive("unlearn")).state;
      u = &fresh;
    } else {
      if (!deterministic) deterministic = unlearn(ucfg, original, train, forget_ids, scfg, trng.derive("unlearn")).state;
      u = &*deterministic;
    }
    unlearned_scores.push_back(score(*u, trng.derive("score-unlearned")));
    const ModelState control = unlearn_retrain(original.state.scheme, original.state.arch,
                                               original.state.security_parameter, train, retain, scfg,
                                               trng.derive("control")).state;
    control_scores.push_back(score(control, trng.derive("score-control")));
  }
  DecisionRule rule;
  rule.samples = calibration_trials;
  rule.median_unlearned = median(unlearned_scores);
  rule.median_control = median(control_scores);
  rule.threshold = 0.5 * (rule.median_unlearned + rule.median_control);
  if (std::fabs(rule.median_control - rule.median_unlearned) <= kDegenerateMedianGap) {
    rule.kind = DecisionRule::Kind::LowerIsUnlearned;
    rule.degenerate = true;
  } else {
    rule.kind = rule.median_control > rule.median_unlearned ? DecisionRule::Kind::LowerIsUnlearned
                                                            : DecisionRule::Kind::HigherIsUnlearned;
  }
  rule.threshold_lower_is_unlearned = rule.kind == DecisionRule::Kind::LowerIsUnlearned;
  return rule;
}

// ---------------------------------------------------------------------------
// Exact-match replay
// ---------------------------------------------------------------------------

enum class Guess { First, Second, Abstain };

/// White-box replay: recompute Unlearn(M_orig, D_f) and look for the
/// candidate that equals it bit for bit. Randomized methods abstain.
inline Guess exact_match_guess(const TrainedOriginal& original, const ModelState& first, const ModelState& second,
                               const UnlearnerConfig& ucfg, const Dataset& train, const IdList& forget_ids,
                               const SchemeConfig& scfg) {
  if (ucfg.randomized()) return Guess::Abstain;
  const ModelState replay = unlearn(ucfg, original, train, forget_ids, scfg, RngStream(0, 0)).state;
  const bool a = same_model(replay, first);
  const bool b = same_model(replay, second);
  if (a == b) return Guess::Abstain;
  return a ? Guess::First : Guess::Second;
}

}  // namespace arena
