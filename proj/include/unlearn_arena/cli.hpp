#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "unlearn_arena/config.hpp"
#include "unlearn_arena/datasets.hpp"
#include "unlearn_arena/error.hpp"
#include "unlearn_arena/game.hpp"
#include "unlearn_arena/oracle.hpp"
#include "unlearn_arena/schemes.hpp"
#include "unlearn_arena/unlearners.hpp"

namespace arena {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitProperty = 2 };

inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::ConfigError:
    case ErrorKind::MixedSchemaVersions:
    case ErrorKind::Io:
    case ErrorKind::ForgetTooLarge:
    case ErrorKind::EmptyClass:
    case ErrorKind::NotConvexScheme:
    case ErrorKind::NotParametric:
    case ErrorKind::InvalidCounts:
      return kExitConfig;
    default:
      return kExitProperty;
  }
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsSchemaLine = "# unlearn-arena results v1";
inline constexpr const char* kResultsHeader =
    "experiment_id,method,distinguisher,mode,forget_size,sigma,trials,wins,success_rate,ci_lo,ci_hi,significant,"
    "mean_kld_unlearned,mean_kld_control,util_orig,util_control,util_unlearned,cost_unlearn,cost_retrain,seed";

/// One summary line per game. The kld columns hold the mean distinguisher
/// score of each model (KLDScore, MIAScore or the exact-match indicator).
struct ResultRow {
  std::string experiment_id;
  std::string method;
  std::string distinguisher;
  std::string mode;
  std::size_t forget_size = 0;
  double sigma = 0.0;
  std::size_t trials = 0;
  std::size_t wins = 0;
  double success_rate = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 1.0;
  bool significant = false;
  double mean_kld_unlearned = 0.0;
  double mean_kld_control = 0.0;
  double util_orig = 0.0;
  double util_control = 0.0;
  double util_unlearned = 0.0;
  double cost_unlearn = 0.0;
  double cost_retrain = 0.0;
  std::uint64_t seed = 0;
};

inline ResultRow make_row(const std::string& experiment_id, const GameReport& r) {
  ResultRow row;
  row.experiment_id = experiment_id;
  row.method = to_string(r.config.unlearner.method);
  row.distinguisher = to_string(r.config.distinguisher);
  row.mode = to_string(r.config.mode);
  row.sigma = r.config.unlearner.newton_sigma;
  row.trials = r.trials;
  row.wins = r.wins;
  row.success_rate = r.success_rate;
  row.ci_lo = r.interval.lo;
  row.ci_hi = r.interval.hi;
  row.significant = r.significant;
  row.seed = r.config.master_seed;
  std::size_t n = 0;
  double forget = 0.0;
  for (const auto& t : r.records) {
    if (t.aborted) continue;
    ++n;
    forget += static_cast<double>(t.forget_size);
    row.mean_kld_unlearned += t.score_unlearned;
    row.mean_kld_control += t.score_control;
    row.util_orig += t.util_orig;
    row.util_control += t.util_control;
    row.util_unlearned += t.util_unlearned;
    row.cost_unlearn += static_cast<double>(t.cost_unlearn);
    row.cost_retrain += static_cast<double>(t.cost_retrain);
  }
  const double dn = static_cast<double>(n);
  row.forget_size = static_cast<std::size_t>(std::llround(forget / dn));
  for (double* v : {&row.mean_kld_unlearned, &row.mean_kld_control, &row.util_orig, &row.util_control,
                    &row.util_unlearned, &row.cost_unlearn, &row.cost_retrain})
    *v /= dn;
  return row;
}

inline std::string format_row(const ResultRow& r) {
  std::ostringstream out;
  out << r.experiment_id << ',' << r.method << ',' << r.distinguisher << ',' << r.mode << ',' << r.forget_size << ','
      << format_double(r.sigma) << ',' << r.trials << ',' << r.wins << ',' << format_double(r.success_rate) << ','
      << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << ',' << (r.significant ? 1 : 0) << ','
      << format_double(r.mean_kld_unlearned) << ',' << format_double(r.mean_kld_control) << ','
      << format_double(r.util_orig) << ',' << format_double(r.util_control) << ','
      << format_double(r.util_unlearned) << ',' << format_double(r.cost_unlearn) << ','
      << format_double(r.cost_retrain) << ',' << r.seed;
  return out.str();
}

inline void write_results(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultsSchemaLine << '\n' << kResultsHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

namespace detail {

inline double parse_field_double(const std::string& v, const std::string& origin) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorKind::Io, origin + ": malformed number '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_field_count(const std::string& v, const std::string& origin) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorKind::Io, origin + ": malformed count '" + v + "'");
  }
  return out;
}

}  // namespace detail

/// Reads a results file; any header other than the current version is a
/// MixedSchemaVersions error so rows of different layouts are never merged.
inline std::vector<ResultRow> read_results(std::istream& in, const std::string& origin) {
  std::string schema, header;
  std::getline(in, schema);
  std::getline(in, header);
  if (schema != kResultsSchemaLine || header != kResultsHeader) {
    throw Error(ErrorKind::MixedSchemaVersions, origin + ": header '" + schema + "' is not '" + kResultsSchemaLine + "'");
  }
  std::vector<ResultRow> rows;
  std::string line;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 20) throw Error(ErrorKind::Io, where + ": expected 20 fields, got " + std::to_string(f.size()));
    ResultRow r;
    r.experiment_id = f[0];
    r.method = f[1];
    r.distinguisher = f[2];
    r.mode = f[3];
    r.forget_size = detail::parse_field_count(f[4], where);
    r.sigma = detail::parse_field_double(f[5], where);
    r.trials = detail::parse_field_count(f[6], where);
    r.wins = detail::parse_field_count(f[7], where);
    r.success_rate = detail::parse_field_double(f[8], where);
    r.ci_lo = detail::parse_field_double(f[9], where);
    r.ci_hi = detail::parse_field_double(f[10], where);
    r.significant = f[11] == "1";
    r.mean_kld_unlearned = detail::parse_field_double(f[12], where);
    r.mean_kld_control = detail::parse_field_double(f[13], where);
    r.util_orig = detail::parse_field_double(f[14], where);
    r.util_control = detail::parse_field_double(f[15], where);
    r.util_unlearned = detail::parse_field_double(f[16], where);
    r.cost_unlearn = detail::parse_field_double(f[17], where);
    r.cost_retrain = detail::parse_field_double(f[18], where);
    r.seed = detail::parse_field_count(f[19], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Pools rows of the same configuration point. Intervals are recomputed from
/// the summed win counts; the other means are weighted by trial count.
inline std::vector<ResultRow> merge_rows(const std::vector<ResultRow>& rows) {
  std::vector<ResultRow> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : rows) {
    const std::string key = r.method + '|' + r.distinguisher + '|' + r.mode + '|' + std::to_string(r.forget_size) +
                            '|' + format_double(r.sigma);
    auto [it, fresh] = slot.emplace(key, out.size());
    if (fresh) {
      out.push_back(r);
      continue;
    }
    ResultRow& m = out[it->second];
    const double a = static_cast<double>(m.trials), b = static_cast<double>(r.trials);
    auto pool = [&](double& x, double y) { x = (x * a + y * b) / (a + b); };
    pool(m.mean_kld_unlearned, r.mean_kld_unlearned);
    pool(m.mean_kld_control, r.mean_kld_control);
    pool(m.util_orig, r.util_orig);
    pool(m.util_control, r.util_control);
    pool(m.util_unlearned, r.util_unlearned);
    pool(m.cost_unlearn, r.cost_unlearn);
    pool(m.cost_retrain, r.cost_retrain);
    m.trials += r.trials;
    m.wins += r.wins;
  }
  for (auto& m : out) {
    const CredibleInterval ci = jeffreys_interval(m.wins, m.trials, 0.95);
    m.success_rate = m.trials ? static_cast<double>(m.wins) / static_cast<double>(m.trials) : 0.0;
    m.ci_lo = ci.lo;
    m.ci_hi = ci.hi;
    m.significant = !ci.contains(0.5);
  }
  return out;
}

// ---------------------------------------------------------------------------
// File output
// ---------------------------------------------------------------------------

namespace detail {

/// Shortest text that reads back to the same double; used in identifiers.
inline std::string short_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir + ": " + ec.message());
  return std::filesystem::path(dir);
}

inline std::string trial_lines(const std::string& experiment_id, const GameReport& r) {
  std::string out;
  for (const auto& rec : r.records) {
    nlohmann::ordered_json j;
    j["experiment"] = experiment_id;
    const nlohmann::ordered_json body = to_json(rec);
    for (const auto& [k, v] : body.items()) j[k] = v;
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json s;
  s["experiment"] = experiment_id;
  s["summary"] = summary_json(r);
  out += s.dump() + "\n";
  return out;
}

inline std::string results_text(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  write_results(out, rows);
  return out.str();
}

inline std::string majority_rule(const GameReport& r) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : r.records)
    if (!t.aborted) ++counts[t.rule];
  std::string best;
  std::size_t n = 0;
  for (const auto& [rule, c] : counts)
    if (c > n) best = rule, n = c;
  return best;
}

inline std::vector<double> kept_scores(const GameReport& r, bool unlearned) {
  std::vector<double> v;
  for (const auto& t : r.records)
    if (!t.aborted) v.push_back(unlearned ? t.score_unlearned : t.score_control);
  return v;
}

}  // namespace detail

inline std::string human_summary(const std::string& experiment_id, const GameReport& r) {
  std::ostringstream out;
  out << "experiment " << experiment_id << "\n"
      << "  " << to_string(r.config.unlearner.method) << " vs " << to_string(r.config.distinguisher) << " ("
      << to_string(r.config.mode) << "), scheme " << to_string(r.config.scheme) << ", forget "
      << (r.config.forget.strategy == ForgetStrategy::Classwise ? "class " + std::to_string(r.config.forget.forget_class)
                                                                 : std::to_string(r.config.forget.size))
      << ", seed " << r.config.master_seed << "\n"
      << "  wins " << r.wins << "/" << r.trials << " (aborted " << r.aborted << ", abstained " << r.abstained
      << ")\n"
      << "  success rate " << format_double(r.success_rate) << ", 95% Jeffreys interval [" << format_double(r.interval.lo)
      << ", " << format_double(r.interval.hi) << "], " << (r.significant ? "significant" : "not significant")
      << "\n"
      << "  constraint failures: utility gap " << r.utility_gap_failures << ", cost " << r.cost_failures
      << (r.invalid_game ? " -> INVALID GAME" : "") << "\n";
  if (!std::isnan(r.attack_accuracy)) out << "  attack held-out accuracy " << format_double(r.attack_accuracy) << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// One game: results.csv, trials.jsonl and summary.txt in the output dir.
inline int cmd_game(const ExperimentConfig& e, std::ostream& log) {
  validate(e);
  const GameReport r = run_game(e.game);
  const auto dir = detail::prepare_dir(e.output.dir);
  const std::string id = e.output.experiment_id;
  detail::write_file(dir / "results.csv", detail::results_text({make_row(id, r)}));
  detail::write_file(dir / "trials.jsonl", detail::trial_lines(id, r));
  const std::string summary = human_summary(id, r);
  detail::write_file(dir / "summary.txt", summary);
  log << summary;
  return r.invalid_game ? kExitProperty : kExitOk;
}

/// One game per (method, distinguisher, forget size).
inline int cmd_sweep_forget(const ExperimentConfig& e, std::ostream& log) {
  validate(e);
  std::vector<GameConfig> points;
  std::vector<std::string> ids;
  for (UnlearnMethod m : e.sweep.methods)
    for (DistinguisherKind d : e.sweep.distinguishers)
      for (std::size_t f : e.sweep.forget_sizes) {
        GameConfig g = e.game;
        g.unlearner.method = m;
        g.distinguisher = d;
        g.forget.strategy = ForgetStrategy::RandomSubset;
        g.forget.size = f;
        validate(g);
        points.push_back(g);
        ids.push_back(e.output.experiment_id + "/" + to_string(m) + "/" + to_string(d) + "/f" + std::to_string(f));
      }
  std::vector<ResultRow> rows;
  std::string trials;
  std::string plot = "series,forget_size,success_rate,ci_lo,ci_hi,wins,trials\n";
  bool invalid = false;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const GameReport r = run_game(points[i]);
    invalid = invalid || r.invalid_game;
    rows.push_back(make_row(ids[i], r));
    trials += detail::trial_lines(ids[i], r);
    const ResultRow& row = rows.back();
    plot += row.method + "/" + row.distinguisher + "," + std::to_string(points[i].forget.size) + "," +
            format_double(row.success_rate) + "," + format_double(row.ci_lo) + "," + format_double(row.ci_hi) + "," +
            std::to_string(row.wins) + "," + std::to_string(row.trials) + "\n";
    log << ids[i] << ": " << row.wins << "/" << row.trials << (r.invalid_game ? " (invalid game)" : "") << "\n";
  }
  const auto dir = detail::prepare_dir(e.output.dir);
  detail::write_file(dir / "results.csv", detail::results_text(rows));
  detail::write_file(dir / "trials.jsonl", trials);
  detail::write_file(dir / "plot_forget_size.csv", plot);
  return invalid ? kExitProperty : kExitOk;
}

/// One newton-removal game per σ. Every point shares the master seed, so the
/// original and control models are identical across the grid.
inline int cmd_sweep_sigma(const ExperimentConfig& e, std::ostream& log) {
  validate(e);
  if (e.game.unlearner.method != UnlearnMethod::NewtonRemoval) {
    throw Error(ErrorKind::ConfigError, "[unlearner] method: sweep-sigma needs newton-removal");
  }
  if (e.game.distinguisher == DistinguisherKind::ExactMatch) {
    throw Error(ErrorKind::ConfigError, "[distinguisher] kind: sweep-sigma needs a scoring distinguisher");
  }
  std::vector<ResultRow> rows;
  std::string trials;
  std::string plot =
      "sigma,mean_kld_unlearned,mean_kld_control,median_kld_unlearned,median_kld_control,rule,success_rate\n";
  bool invalid = false;
  for (double sigma : e.sweep.sigmas) {
    GameConfig g = e.game;
    g.unlearner.newton_sigma = sigma;
    const std::string id = e.output.experiment_id + "/sigma=" + detail::short_double(sigma);
    const GameReport r = run_game(g);
    invalid = invalid || r.invalid_game;
    rows.push_back(make_row(id, r));
    trials += detail::trial_lines(id, r);
    const ResultRow& row = rows.back();
    plot += format_double(sigma) + "," + format_double(row.mean_kld_unlearned) + "," +
            format_double(row.mean_kld_control) + "," + format_double(median(detail::kept_scores(r, true))) + "," +
            format_double(median(detail::kept_scores(r, false))) + "," + detail::majority_rule(r) + "," +
            format_double(row.success_rate) + "\n";
    log << id << ": " << row.wins << "/" << row.trials << ", rule " << detail::majority_rule(r) << "\n";
  }
  const auto dir = detail::prepare_dir(e.output.dir);
  detail::write_file(dir / "results.csv", detail::results_text(rows));
  detail::write_file(dir / "trials.jsonl", trials);
  detail::write_file(dir / "plot_sigma.csv", plot);
  return invalid ? kExitProperty : kExitOk;
}

struct DpCollapsePoint {
  double epsilon = 0.0;
  double median_accuracy = 0.0;
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
};

struct DpCollapseReport {
  double unwrapped_accuracy = 0.0;
  double baseline = 0.0;
  std::vector<DpCollapsePoint> points;
};

/// Oracle accuracy of one trained desk classifier under each ε, over
/// `dp_queries` held-out population points per repeat.
inline DpCollapseReport run_dp_collapse(const ExperimentConfig& e) {
  GameConfig g = e.game;
  g.distinguisher = DistinguisherKind::Kld;
  validate(e);
  if (!is_parametric_classifier(g.scheme)) {
    throw Error(ErrorKind::NotParametric, "[scheme] scheme: the DP oracle needs logistic or mlp");
  }
  const Arena a = build_arena(g);
  const RngStream master(g.master_seed, 2);
  ModelState m = init(g.scheme, a.arch, g.security_parameter, master.derive("init"), g.scheme_cfg.k);
  m = learn(std::move(m), a.train, g.scheme_cfg, master.derive("learn"), false).state;

  const Dataset& queries = a.population.size() ? a.population : a.test;
  const std::size_t n = e.sweep.dp_queries;
  auto accuracy = [&](auto&& answer) {
    std::size_t correct = 0;
    for (std::size_t q = 0; q < n; ++q) {
      const std::size_t row = q % queries.size();
      if (argmax(answer(queries.features.row(row))) == queries.label_of(row)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
  };
  DpCollapseReport rep;
  rep.baseline = 1.0 / static_cast<double>(g.dataset.classes);
  rep.unwrapped_accuracy = accuracy([&](std::span<const double> x) { return infer(m, x); });
  for (std::size_t i = 0; i < e.sweep.dp_epsilons.size(); ++i) {
    DpCollapsePoint p;
    p.epsilon = e.sweep.dp_epsilons[i];
    std::vector<double> acc;
    for (std::size_t r = 0; r < e.sweep.dp_repeats; ++r) {
      InferenceOracle o = wrap_dp_oracle(m, p.epsilon, g.unlearner.dp_delta, n, master.derive("dp", i).derive("repeat", r));
      acc.push_back(accuracy([&](std::span<const double> x) { return o.query(x); }));
    }
    p.median_accuracy = median(acc);
    p.min_accuracy = *std::min_element(acc.begin(), acc.end());
    p.max_accuracy = *std::max_element(acc.begin(), acc.end());
    rep.points.push_back(p);
  }
  return rep;
}

inline int cmd_demo_dp_collapse(const ExperimentConfig& e, std::ostream& log) {
  const DpCollapseReport rep = run_dp_collapse(e);
  std::string plot = "epsilon,median_accuracy,min_accuracy,max_accuracy,unwrapped_accuracy,baseline\n";
  for (const auto& p : rep.points) {
    plot += format_double(p.epsilon) + "," + format_double(p.median_accuracy) + "," + format_double(p.min_accuracy) +
            "," + format_double(p.max_accuracy) + "," + format_double(rep.unwrapped_accuracy) + "," +
            format_double(rep.baseline) + "\n";
  }
  const auto dir = detail::prepare_dir(e.output.dir);
  detail::write_file(dir / "plot_dp_collapse.csv", plot);
  log << "unwrapped accuracy " << format_double(rep.unwrapped_accuracy) << ", baseline 1/C "
      << format_double(rep.baseline) << "\n";
  for (const auto& p : rep.points) {
    log << "  epsilon " << format_double(p.epsilon) << ": median oracle accuracy " << format_double(p.median_accuracy)
        << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Perfect-unlearning identity suite
// ---------------------------------------------------------------------------

struct VerifyOptions {
  std::size_t instances = 100;
  std::size_t rows = 200;
  std::size_t dims = 5;
  double ridge = 0.0;
  std::uint64_t seed = 1;
  bool skip_moment_downdate = false;  // fault injection for mutation checks
};

struct VerifyCase {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline double relative_error(const Vector& got, const Vector& want) {
  double scale = 0.0, diff = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    scale = std::max(scale, std::fabs(want[i]));
    diff = std::max(diff, std::fabs(got[i] - want[i]));
  }
  return diff / std::max(scale, 1e-300);
}

inline ModelState linreg_fit(const Dataset& d, double ridge) {
  const Architecture arch = make_architecture(SchemeId::LinearRegression, d.dims(), 0, {});
  ModelState m = init(SchemeId::LinearRegression, arch, 0, RngStream(0, 0));
  SchemeConfig cfg;
  cfg.ridge = ridge;
  return learn(std::move(m), d, cfg, RngStream(0, 0), false).state;
}

inline Vector linreg_unlearn(const ModelState& orig, const Dataset& d, const IdList& forget, bool fault) {
  UnlearnResult r = unlearn_linreg_downdate(orig, d, forget);
  if (!fault) return r.state.parameters;
  return matvec(*r.state.gram_inverse, orig.moment);
}

}  // namespace detail

inline std::vector<VerifyCase> run_verify_perfect(const VerifyOptions& o) {
  std::vector<VerifyCase> cases;
  const RngStream master(o.seed, 3);

  {  // k-NN deletion equals retraining on the retain set, bit for bit.
    VerifyCase c{"knn-delete-bitwise", true, ""};
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < o.instances; ++i) {
      const RngStream s = master.derive("knn", i);
      const Dataset d = make_blobs(3, (o.rows + 2) / 3, o.dims, 1.0, s.derive("data"));
      const Architecture arch = make_architecture(SchemeId::Knn, d.dims(), 3, {});
      const ModelState full = learn(init(SchemeId::Knn, arch, 0, RngStream(0, 0), 3), d, {}, RngStream(0, 0)).state;
      const ForgetSelection f =
          select_forget(d, d.ids, ForgetStrategy::RandomSubset, 1 + i % 20, s.derive("forget"));
      const ModelState deleted = unlearn_knn_delete(full, f.forget_ids).state;
      const Dataset retained = subset(d, set_difference_ids(d.ids, f.forget_ids));
      const ModelState retrained =
          learn(init(SchemeId::Knn, arch, 0, RngStream(0, 0), 3), retained, {}, RngStream(0, 0)).state;
      if (!same_model(deleted, retrained)) ++mismatches;
    }
    c.pass = mismatches == 0;
    c.detail = "instances=" + std::to_string(o.instances) + " mismatches=" + std::to_string(mismatches);
    cases.push_back(c);
  }

  {  // Sherman-Morrison downdates equal the retrain solve.
    VerifyCase c{"linreg-downdate", true, ""};
    double worst = 0.0;
    for (std::size_t i = 0; i < o.instances; ++i) {
      const RngStream s = master.derive("linreg", i);
      const Dataset d = make_regression(o.rows, o.dims, 0.1, s.derive("data")).data;
      const ForgetSelection f = select_forget(d, d.ids, ForgetStrategy::RandomSubset, 1 + i % 20, s.derive("forget"));
      const ModelState orig = detail::linreg_fit(d, o.ridge);
      const Vector got = detail::linreg_unlearn(orig, d, f.forget_ids, o.skip_moment_downdate);
      const Vector want = detail::linreg_fit(subset(d, set_difference_ids(d.ids, f.forget_ids)), o.ridge).parameters;
      worst = std::max(worst, detail::relative_error(got, want));
    }
    c.pass = worst <= 1e-8;
    c.detail = "instances=" + std::to_string(o.instances) + " max_rel_error=" + format_double(worst);
    cases.push_back(c);
  }

  {  // Removing rows until the Gram matrix loses rank.
    VerifyCase c{"singular-downdate", true, ""};
    const Dataset d = make_regression(o.dims + 1, o.dims, 0.1, master.derive("singular")).data;
    const IdList forget = {d.ids[0], d.ids[1]};
    const ModelState orig = detail::linreg_fit(d, o.ridge);
    if (o.ridge > 0.0) {
      const Vector got = detail::linreg_unlearn(orig, d, forget, o.skip_moment_downdate);
      const Vector want = detail::linreg_fit(subset(d, set_difference_ids(d.ids, forget)), o.ridge).parameters;
      const double err = detail::relative_error(got, want);
      c.pass = err <= 1e-8;
      c.detail = "ridge=" + format_double(o.ridge) + " rel_error=" + format_double(err);
    } else {
      try {
        detail::linreg_unlearn(orig, d, forget, false);
        c.pass = false;
        c.detail = "expected SingularDowndate, downdate succeeded";
      } catch (const Error& e) {
        c.pass = e.kind() == ErrorKind::SingularDowndate;
        c.detail = std::string("raised ") + to_string(e.kind());
      }
    }
    cases.push_back(c);
  }

  {  // Fitting on fewer rows than dimensions.
    VerifyCase c{"degenerate-gram", true, ""};
    const Dataset d = make_regression(o.dims + 1, o.dims, 0.1, master.derive("degenerate")).data;
    const Dataset small = subset(d, IdList(d.ids.begin(), d.ids.begin() + static_cast<std::ptrdiff_t>(o.dims)));
    try {
      detail::linreg_fit(small, o.ridge);
      c.pass = o.ridge > 0.0;
      c.detail = c.pass ? "ridge=" + format_double(o.ridge) + " fit succeeded" : "expected DegenerateGram, fit succeeded";
    } catch (const Error& e) {
      c.pass = o.ridge == 0.0 && e.kind() == ErrorKind::DegenerateGram;
      c.detail = std::string("raised ") + to_string(e.kind());
    }
    cases.push_back(c);
  }
  return cases;
}

inline int cmd_verify_perfect(const VerifyOptions& o, std::ostream& log) {
  bool ok = true;
  for (const auto& c : run_verify_perfect(o)) {
    log << (c.pass ? "PASS " : "FAIL ") << c.name << " " << c.detail << "\n";
    ok = ok && c.pass;
  }
  return ok ? kExitOk : kExitProperty;
}

// ---------------------------------------------------------------------------
// Report aggregation
// ---------------------------------------------------------------------------

/// Every results.csv below `dir`, in sorted path order.
inline std::vector<std::filesystem::path> find_results(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorKind::Io, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> found;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "results.csv") found.push_back(entry.path());
  }
  std::sort(found.begin(), found.end());
  return found;
}

/// Merges every results.csv below `dir` into aggregate.csv plus two plot
/// tables: success rate by forget size, and mean score by σ.
inline int cmd_report(const std::string& dir, std::ostream& log) {
  const auto files = find_results(dir);
  if (files.empty()) throw Error(ErrorKind::Io, "no results.csv found under " + dir);
  std::vector<ResultRow> rows;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + f.string());
    const std::string rel = std::filesystem::relative(f, dir).generic_string();
    auto part = read_results(in, rel);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::vector<ResultRow> merged = merge_rows(rows);
  std::string fig2 = "series,forget_size,success_rate,ci_lo,ci_hi,wins,trials\n";
  std::string fig3 = "sigma,mean_kld_unlearned,mean_kld_control,success_rate\n";
  for (const auto& r : merged) {
    fig2 += r.method + "/" + r.distinguisher + "/" + r.mode + "," + std::to_string(r.forget_size) + "," +
            format_double(r.success_rate) + "," + format_double(r.ci_lo) + "," + format_double(r.ci_hi) + "," +
            std::to_string(r.wins) + "," + std::to_string(r.trials) + "\n";
    if (r.method == to_string(UnlearnMethod::NewtonRemoval)) {
      fig3 += format_double(r.sigma) + "," + format_double(r.mean_kld_unlearned) + "," +
              format_double(r.mean_kld_control) + "," + format_double(r.success_rate) + "\n";
    }
  }
  const std::filesystem::path out(dir);
  detail::write_file(out / "aggregate.csv", detail::results_text(merged));
  detail::write_file(out / "plot_fig2.csv", fig2);
  detail::write_file(out / "plot_fig3.csv", fig3);
  log << "merged " << rows.size() << " rows from " << files.size() << " files into " << merged.size() << " rows\n";
  return kExitOk;
}

}  // namespace arena
