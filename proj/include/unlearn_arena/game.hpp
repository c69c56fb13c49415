#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "unlearn_arena/datasets.hpp"
#include "unlearn_arena/distinguishers.hpp"
#include "unlearn_arena/error.hpp"
#include "unlearn_arena/numerics.hpp"
#include "unlearn_arena/oracle.hpp"
#include "unlearn_arena/rng.hpp"
#include "unlearn_arena/schemes.hpp"
#include "unlearn_arena/unlearners.hpp"

namespace arena {

enum class GameMode { WhiteBox, BlackBox };

inline const char* to_string(GameMode m) { return m == GameMode::WhiteBox ? "white-box" : "black-box"; }

struct DatasetSpec {
  bool regression = false;
  std::size_t classes = 10;
  std::size_t dims = 8;
  double spread = 0.5;
  double noise_sd = 0.1;
  std::size_t train = 1000;
  std::size_t test = 500;
  std::size_t population = 1000;
};

struct ForgetSpec {
  ForgetStrategy strategy = ForgetStrategy::RandomSubset;
  std::size_t size = 30;
  std::size_t forget_class = 0;
};

struct GameConfig {
  GameMode mode = GameMode::WhiteBox;
  SchemeId scheme = SchemeId::Mlp;
  std::vector<std::size_t> hidden = {32, 32};
  SchemeConfig scheme_cfg;
  UnlearnerConfig unlearner;
  DistinguisherKind distinguisher = DistinguisherKind::Kld;
  double noise_variance = kDefaultKldVariance;
  std::size_t calibration_trials = 8;
  std::size_t shadow_count = 8;
  DatasetSpec dataset;
  ForgetSpec forget;
  std::size_t trials = 128;
  std::size_t security_parameter = 32;
  double utility_gap = 0.05;
  std::size_t query_budget = 10000;
  std::uint64_t master_seed = 1;
  std::size_t threads = 1;
};

/// Rejects configurations the game cannot run; messages name the field.
inline void validate(const GameConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::ConfigError, field + ": " + why);
  };
  if (c.trials < 1) fail("trials", "must be at least 1");
  if (!(c.utility_gap > 0.0)) fail("utility_gap", "must be positive");
  if (c.threads < 1) fail("threads", "must be at least 1");
  if (c.forget.strategy == ForgetStrategy::RandomSubset) {
    if (c.forget.size == 0) fail("forget_size", "must be at least 1");
    if (c.forget.size >= c.dataset.train) fail("forget_size", "must be smaller than the training set");
  }
  if (c.dataset.train == 0 || c.dataset.test == 0) fail("train_size", "train and test sizes must be positive");
  if (c.dataset.regression != (c.scheme == SchemeId::LinearRegression)) {
    fail("dataset", "linreg pairs with the regression dataset, classifiers with blobs");
  }
  if (c.distinguisher != DistinguisherKind::ExactMatch && !is_classifier(c.scheme)) {
    fail("distinguisher", "kld and mia need a classifier scheme");
  }
  if (c.distinguisher == DistinguisherKind::ExactMatch && c.mode == GameMode::BlackBox) {
    fail("distinguisher", "exact-match needs white-box access");
  }
  if (c.distinguisher != DistinguisherKind::ExactMatch && c.calibration_trials < 8) {
    fail("calibration_trials", "must be at least 8");
  }
  if (c.distinguisher == DistinguisherKind::Mia && c.shadow_count < 1) fail("shadow_count", "must be at least 1");
  if (!(c.noise_variance >= 0.0)) fail("noise_variance", "must be non-negative");
  if (c.unlearner.newton_sigma < 0.0) fail("newton_sigma", "must be non-negative");
  if (c.unlearner.newton_noise_scale < 0.0) fail("newton_noise_scale", "must be non-negative");
  if (!(c.unlearner.ssd_alpha > 0.0)) fail("ssd_alpha", "must be positive");
  if (!(c.unlearner.ssd_lambda > 0.0)) fail("ssd_lambda", "must be positive");
  if (c.unlearner.method == UnlearnMethod::DpOracle && !(c.unlearner.dp_epsilon > 0.0)) {
    fail("dp_epsilon", "must be positive");
  }
  if (c.scheme_cfg.epochs < 1 && (c.scheme == SchemeId::Mlp || c.scheme == SchemeId::Logistic)) {
    fail("epochs", "must be at least 1");
  }
  if (c.scheme_cfg.batch_size < 1) fail("batch_size", "must be at least 1");
  if (c.scheme_cfg.k < 1) fail("k", "must be at least 1");
  if (c.scheme_cfg.ridge < 0.0) fail("ridge", "must be non-negative");
}

/// Shared, immutable inputs of every trial: the adversary's dataset and
/// splits, plus the MIA attack trained on the population split.
struct Arena {
  Dataset all;
  SplitPlan split;
  Dataset train;
  Dataset test;
  Dataset population;
  Architecture arch;
  std::optional<AttackModel> attack;
};

inline Arena build_arena(const GameConfig& c) {
  validate(c);
  const RngStream master(c.master_seed, 0);
  Arena a;
  const DatasetSpec& d = c.dataset;
  const std::size_t total = d.train + d.test + d.population;
  if (d.regression) {
    a.all = make_regression(total, d.dims, d.noise_sd, master.derive("dataset")).data;
  } else {
    const std::size_t per_class = (total + d.classes - 1) / d.classes;
    a.all = make_blobs(d.classes, per_class, d.dims, d.spread, master.derive("dataset"));
  }
  a.split = make_split(a.all, d.train, d.test, d.population, master.derive("split"));
  a.train = subset(a.all, a.split.train_ids);
  a.test = subset(a.all, a.split.test_ids);
  a.population = subset(a.all, a.split.population_ids);
  a.arch = make_architecture(c.scheme, d.dims, d.regression ? 0 : d.classes, c.hidden);
  if (c.distinguisher == DistinguisherKind::Mia) {
    a.attack = train_attack_model(c.scheme, a.arch, c.scheme_cfg, a.population, c.shadow_count,
                                  master.derive("attack"), c.security_parameter);
  }
  return a;
}

struct TrialRecord {
  std::size_t index = 0;
  int bit = 0;
  int guess = 0;
  bool win = false;
  bool abstained = false;
  bool aborted = false;
  std::string abort_reason;
  ScorePair scores;
  double score_unlearned = 0.0;
  double score_control = 0.0;
  std::string rule;
  std::size_t forget_size = 0;
  double util_orig = 0.0;
  double util_control = 0.0;
  double util_unlearned = 0.0;
  std::uint64_t cost_learn = 0;
  std::uint64_t cost_unlearn = 0;
  std::uint64_t cost_retrain = 0;
  bool utility_gap_ok = true;
  bool cost_ok = true;
};

struct ConstraintFlags {
  bool utility_gap_ok = true;
  bool cost_ok = true;
};

/// Anti-trivial-solution checks on one trial.
inline ConstraintFlags check_constraints(const TrialRecord& r, double utility_gap) {
  ConstraintFlags f;
  f.utility_gap_ok = std::fabs(r.util_orig - r.util_control) < utility_gap;
  f.cost_ok = r.cost_unlearn < r.cost_retrain;
  return f;
}

namespace detail {

inline ModelScorer make_scorer(const GameConfig& c, const Arena& a, const ModelState& original, const Dataset& forget,
                               const RngStream& noise) {
  const bool private_oracle = c.mode == GameMode::BlackBox && c.unlearner.method == UnlearnMethod::DpOracle;
  return [&c, &a, &original, &forget, noise, private_oracle](const ModelState& m, RngStream stream) {
    if (private_oracle) {
      InferenceOracle o = wrap_dp_oracle(m, c.unlearner.dp_epsilon, c.unlearner.dp_delta, c.query_budget, stream);
      return c.distinguisher == DistinguisherKind::Kld ? kld_score(original, o, forget, c.noise_variance, noise)
                                                      : mia_score(o, forget, *a.attack);
    }
    return c.distinguisher == DistinguisherKind::Kld ? kld_score(original, m, forget, c.noise_variance, noise)
                                                    : mia_score(m, forget, *a.attack);
  };
}

}  // namespace detail

/// One round of the unlearning game, steps 1-7, under the trial's own streams.
inline TrialRecord run_trial(const GameConfig& c, const Arena& a, std::size_t trial_index, const RngStream& master) {
  TrialRecord rec;
  rec.index = trial_index;
  const RngStream trial = master.derive("trial", trial_index);
  const RngStream challenger = trial.derive("challenger");
  const RngStream adversary = trial.derive("adversary");
  try {
    // Step 3: original model.
    TrainedOriginal orig;
    {
      ModelState m0 = init(c.scheme, a.arch, c.security_parameter, challenger.derive("orig-init"), c.scheme_cfg.k);
      const bool keep = c.unlearner.method == UnlearnMethod::Amnesiac;
      LearnResult lr = learn(std::move(m0), a.train, c.scheme_cfg, challenger.derive("orig-learn"), keep);
      orig.state = std::move(lr.state);
      orig.transcript = std::move(lr.transcript);
      orig.cost = lr.cost;
    }
    // Step 4: adversary picks the forget set.
    const ForgetSelection sel = select_forget(a.train, a.train.ids, c.forget.strategy, c.forget.size,
                                              adversary.derive("forget"), c.forget.forget_class);
    rec.forget_size = sel.size();
    const IdList retain = set_difference_ids(a.train.ids, sel.forget_ids);
    const Dataset forget = subset(a.train, sel.forget_ids);

    // Step 5: unlearned and control models.
    UnlearnResult unl = unlearn(c.unlearner, orig, a.train, sel.forget_ids, c.scheme_cfg, challenger.derive("unlearn"));
    LearnResult control = unlearn_retrain(c.scheme, a.arch, c.security_parameter, a.train, retain, c.scheme_cfg,
                                          challenger.derive("control"));

    // Step 6: hidden bit. b = 1 presents [M_u, M_c], b = 0 presents [M_c, M_u].
    RngStream bit_rng = challenger.derive("bit");
    rec.bit = static_cast<int>(bit_rng.below(2));
    const ModelState& first = rec.bit == 1 ? unl.state : control.state;
    const ModelState& second = rec.bit == 1 ? control.state : unl.state;

    // Step 7: adversary's guess.
    Position pos = Position::First;
    if (c.distinguisher == DistinguisherKind::ExactMatch) {
      const Guess g = exact_match_guess(orig, first, second, c.unlearner, a.train, sel.forget_ids, c.scheme_cfg);
      rec.rule = "exact-match";
      if (g == Guess::Abstain) {
        rec.abstained = true;
        RngStream coin = adversary.derive("coin");
        pos = coin.below(2) == 1 ? Position::First : Position::Second;
      } else {
        pos = g == Guess::First ? Position::First : Position::Second;
      }
      rec.scores = {same_model(first, unl.state) ? 1.0 : 0.0, same_model(second, unl.state) ? 1.0 : 0.0,
                    c.distinguisher};
    } else {
      const RngStream noise = adversary.derive("kld-noise");
      const ModelScorer scorer = detail::make_scorer(c, a, orig.state, forget, noise);
      const DecisionRule rule = calibrate_rule(scorer, orig, c.scheme_cfg, c.unlearner, a.train, sel.forget_ids,
                                               c.calibration_trials, adversary.derive("calibration"));
      rec.rule = to_string(rule.kind);
      if (rule.degenerate) rec.rule += "(degenerate)";
      double s_first = 0.0;
      double s_second = 0.0;
      if (c.mode == GameMode::WhiteBox) {
        s_first = scorer(first, RngStream(0, 0));
        s_second = scorer(second, RngStream(0, 0));
      } else {
        const bool dp = c.unlearner.method == UnlearnMethod::DpOracle;
        auto wrap = [&](const ModelState& m, const char* label) {
          return dp ? wrap_dp_oracle(m, c.unlearner.dp_epsilon, c.unlearner.dp_delta, c.query_budget,
                                     challenger.derive(label))
                    : wrap_oracle(m, c.query_budget);
        };
        InferenceOracle o1 = wrap(first, "oracle-first");
        InferenceOracle o2 = wrap(second, "oracle-second");
        if (c.distinguisher == DistinguisherKind::Kld) {
          s_first = kld_score(orig.state, o1, forget, c.noise_variance, noise);
          s_second = kld_score(orig.state, o2, forget, c.noise_variance, noise);
        } else {
          s_first = mia_score(o1, forget, *a.attack);
          s_second = mia_score(o2, forget, *a.attack);
        }
      }
      rec.scores = {s_first, s_second, c.distinguisher};
      pos = decide(rule, rec.scores);
    }
    rec.score_unlearned = rec.bit == 1 ? rec.scores.first : rec.scores.second;
    rec.score_control = rec.bit == 1 ? rec.scores.second : rec.scores.first;
    rec.guess = pos == Position::First ? 1 : 0;
    rec.win = rec.guess == rec.bit;

    rec.util_orig = utility(orig.state, a.test);
    rec.util_control = utility(control.state, a.test);
    rec.util_unlearned = utility(unl.state, a.test);
    rec.cost_learn = orig.cost.work_units;
    rec.cost_unlearn = unl.cost.work_units;
    rec.cost_retrain = control.cost.work_units;
    const ConstraintFlags flags = check_constraints(rec, c.utility_gap);
    rec.utility_gap_ok = flags.utility_gap_ok;
    rec.cost_ok = flags.cost_ok;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SingularDowndate && e.kind() != ErrorKind::NotPositiveDefinite) throw;
    rec.aborted = true;
    rec.abort_reason = e.what();
  }
  return rec;
}

struct GameReport {
  GameConfig config;
  std::size_t wins = 0;
  std::size_t trials = 0;   // completed (non-aborted) trials
  std::size_t aborted = 0;
  std::size_t abstained = 0;
  double success_rate = 0.0;
  CredibleInterval interval;
  bool significant = false;
  std::size_t utility_gap_failures = 0;
  std::size_t cost_failures = 0;
  double flag_failure_rate = 0.0;
  bool invalid_game = false;
  double attack_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrialRecord> records;
};

inline constexpr double kInvalidGameFailureRate = 0.10;

/// Aggregates already-executed trial records into a report.
inline GameReport summarize(const GameConfig& c, std::vector<TrialRecord> records) {
  GameReport rep;
  rep.config = c;
  for (const auto& r : records) {
    if (r.aborted) {
      ++rep.aborted;
      continue;
    }
    ++rep.trials;
    if (r.win) ++rep.wins;
    if (r.abstained) ++rep.abstained;
    if (!r.utility_gap_ok) ++rep.utility_gap_failures;
    if (!r.cost_ok) ++rep.cost_failures;
  }
  if (rep.trials == 0) throw Error(ErrorKind::AllTrialsAborted, records.empty() ? "no trials" : records.front().abort_reason);
  std::size_t flagged = 0;
  for (const auto& r : records)
    if (!r.aborted && (!r.utility_gap_ok || !r.cost_ok)) ++flagged;
  rep.success_rate = static_cast<double>(rep.wins) / static_cast<double>(rep.trials);
  rep.interval = jeffreys_interval(rep.wins, rep.trials, 0.95);
  rep.significant = !rep.interval.contains(0.5);
  rep.flag_failure_rate = static_cast<double>(flagged) / static_cast<double>(rep.trials);
  rep.invalid_game = rep.flag_failure_rate > kInvalidGameFailureRate;
  rep.records = std::move(records);
  return rep;
}

/// N independent trials, optionally on several threads; the result does not
/// depend on the thread count.
inline GameReport run_game(const GameConfig& c) {
  const Arena a = build_arena(c);
  const RngStream master(c.master_seed, 1);
  std::vector<TrialRecord> records(c.trials);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= c.trials) return;
      try {
        records[i] = run_trial(c, a, i, master);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = c.trials;
        return;
      }
    }
  };
  const std::size_t n_threads = std::min(c.threads, c.trials);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  GameReport rep = summarize(c, std::move(records));
  if (a.attack) rep.attack_accuracy = a.attack->held_out_accuracy;
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const GameConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(c.mode);
  j["scheme"] = to_string(c.scheme);
  j["hidden"] = c.hidden;
  j["epochs"] = c.scheme_cfg.epochs;
  j["batch_size"] = c.scheme_cfg.batch_size;
  j["learning_rate"] = c.scheme_cfg.learning_rate;
  j["weight_decay"] = c.scheme_cfg.weight_decay;
  j["momentum"] = c.scheme_cfg.momentum;
  j["k"] = c.scheme_cfg.k;
  j["ridge"] = c.scheme_cfg.ridge;
  j["sigma_objective_perturbation"] = c.scheme_cfg.sigma_objective_perturbation;
  j["method"] = to_string(c.unlearner.method);
  j["ssd_alpha"] = c.unlearner.ssd_alpha;
  j["ssd_lambda"] = c.unlearner.ssd_lambda;
  j["bad_teacher_steps"] = c.unlearner.bad_teacher_steps;
  j["bad_teacher_lr"] = c.unlearner.bad_teacher_lr;
  j["bad_teacher_batch"] = c.unlearner.bad_teacher_batch;
  j["bad_teacher_retain_sample"] = c.unlearner.bad_teacher_retain_sample;
  j["newton_ridge"] = c.unlearner.newton_ridge;
  j["newton_sigma"] = c.unlearner.newton_sigma;
  j["newton_noise_scale"] = c.unlearner.newton_noise_scale;
  j["dp_epsilon"] = c.unlearner.dp_epsilon;
  j["dp_delta"] = c.unlearner.dp_delta;
  j["distinguisher"] = to_string(c.distinguisher);
  j["noise_variance"] = c.noise_variance;
  j["calibration_trials"] = c.calibration_trials;
  j["shadow_count"] = c.shadow_count;
  j["dataset"] = c.dataset.regression ? "regression" : "blobs";
  j["classes"] = c.dataset.classes;
  j["dims"] = c.dataset.dims;
  j["spread"] = c.dataset.spread;
  j["noise_sd"] = c.dataset.noise_sd;
  j["train_size"] = c.dataset.train;
  j["test_size"] = c.dataset.test;
  j["population_size"] = c.dataset.population;
  j["forget_strategy"] = c.forget.strategy == ForgetStrategy::RandomSubset ? "random" : "classwise";
  j["forget_size"] = c.forget.size;
  j["forget_class"] = c.forget.forget_class;
  j["trials"] = c.trials;
  j["security_parameter"] = c.security_parameter;
  j["utility_gap"] = c.utility_gap;
  j["query_budget"] = c.query_budget;
  j["master_seed"] = c.master_seed;
  return j;
}

inline nlohmann::ordered_json to_json(const TrialRecord& r) {
  nlohmann::ordered_json j;
  j["trial"] = r.index;
  j["aborted"] = r.aborted;
  if (r.aborted) {
    j["abort_reason"] = r.abort_reason;
    return j;
  }
  j["bit"] = r.bit;
  j["guess"] = r.guess;
  j["win"] = r.win;
  j["abstained"] = r.abstained;
  j["rule"] = r.rule;
  j["score_first"] = r.scores.first;
  j["score_second"] = r.scores.second;
  j["score_unlearned"] = r.score_unlearned;
  j["score_control"] = r.score_control;
  j["forget_size"] = r.forget_size;
  j["util_orig"] = r.util_orig;
  j["util_control"] = r.util_control;
  j["util_unlearned"] = r.util_unlearned;
  j["cost_learn"] = r.cost_learn;
  j["cost_unlearn"] = r.cost_unlearn;
  j["cost_retrain"] = r.cost_retrain;
  j["utility_gap_ok"] = r.utility_gap_ok;
  j["cost_ok"] = r.cost_ok;
  return j;
}

inline nlohmann::ordered_json summary_json(const GameReport& r) {
  nlohmann::ordered_json j;
  j["config"] = to_json(r.config);
  j["trials"] = r.trials;
  j["wins"] = r.wins;
  j["aborted"] = r.aborted;
  j["abstained"] = r.abstained;
  j["success_rate"] = r.success_rate;
  j["ci_lo"] = r.interval.lo;
  j["ci_hi"] = r.interval.hi;
  j["ci_level"] = r.interval.level;
  j["significant"] = r.significant;
  j["utility_gap_failures"] = r.utility_gap_failures;
  j["cost_failures"] = r.cost_failures;
  j["flag_failure_rate"] = r.flag_failure_rate;
  j["invalid_game"] = r.invalid_game;
  if (!std::isnan(r.attack_accuracy)) j["attack_accuracy"] = r.attack_accuracy;
  return j;
}

/// Line-delimited trial records followed by one summary line.
inline std::string serialize_report(const GameReport& r) {
  std::string out;
  for (const auto& rec : r.records) out += to_json(rec).dump() + "\n";
  nlohmann::ordered_json s;
  s["summary"] = summary_json(r);
  out += s.dump() + "\n";
  return out;
}

}  // namespace arena
