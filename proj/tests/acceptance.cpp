// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [criterion numbers...]; no arguments runs all nine.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unlearn_arena/cli.hpp"

using namespace arena;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail += (detail.empty() ? "" : "; ") + std::string(ok ? "" : "FAILED ") + what;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::size_t worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

ExperimentConfig load_config(const std::string& name) {
  const fs::path p = fs::path(UNLEARN_ARENA_CONFIG_DIR) / name;
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + p.string());
  return parse_config(in, p.string());
}

std::string rule_direction(const std::string& rule) { return rule.substr(0, rule.find('(')); }

// ---------------------------------------------------------------------------
// 1. Perfect-unlearning oracle equivalence
// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  VerifyOptions v;
  v.instances = 100;
  v.rows = 200;
  v.dims = 5;
  const auto cases = run_verify_perfect(v);
  const double elapsed = seconds_since(t0);
  for (const auto& c : cases) {
    if (c.name == "knn-delete-bitwise" || c.name == "linreg-downdate") o.check(c.pass, c.name + " " + c.detail);
  }
  o.check(elapsed < 5.0, "runtime " + fmt(elapsed, 3) + " s < 5 s");
  return o;
}

// ---------------------------------------------------------------------------
// 2. Replay distinguisher
// ---------------------------------------------------------------------------

Outcome criterion2() {
  Outcome o;
  const auto t0 = Clock::now();
  struct Case {
    SchemeId scheme;
    UnlearnMethod method;
  };
  // Newton removal needs the convex logistic scheme; it raises NotConvexScheme on the MLP.
  const Case cases[] = {{SchemeId::Mlp, UnlearnMethod::Ssd},
                        {SchemeId::Mlp, UnlearnMethod::Amnesiac},
                        {SchemeId::Logistic, UnlearnMethod::NewtonRemoval},
                        {SchemeId::Mlp, UnlearnMethod::BadTeacher}};
  for (const auto& c : cases) {
    GameConfig g;
    g.scheme = c.scheme;
    g.unlearner.method = c.method;
    g.distinguisher = DistinguisherKind::ExactMatch;
    g.trials = 128;
    g.threads = worker_threads();
    const GameReport r = run_game(g);
    const std::string name = std::string(to_string(c.scheme)) + "/" + to_string(c.method);
    if (c.method == UnlearnMethod::BadTeacher) {
      o.check(r.abstained == r.trials && r.trials == 128, name + " abstained " + std::to_string(r.abstained) + "/128");
    } else {
      o.check(r.wins >= 127 && r.abstained == 0 && r.aborted == 0,
              name + " wins " + std::to_string(r.wins) + "/" + std::to_string(r.trials) + " abstained " +
                  std::to_string(r.abstained));
    }
  }
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 600.0, "runtime " + fmt(elapsed, 4) + " s < 600 s");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Perfect-unlearning null
// ---------------------------------------------------------------------------

Outcome criterion3() {
  Outcome o;
  std::size_t failures = 0;
  std::string seeds;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    GameConfig g;
    g.scheme = SchemeId::Knn;
    g.unlearner.method = UnlearnMethod::KnnDelete;
    g.distinguisher = DistinguisherKind::Kld;
    g.trials = 256;
    g.master_seed = seed;
    g.threads = worker_threads();
    const GameReport r = run_game(g);
    if (!r.interval.contains(0.5)) {
      ++failures;
      seeds += " " + std::to_string(seed);
    }
  }
  o.check(failures <= 2, std::to_string(failures) + "/20 seeds exclude 0.5" + (seeds.empty() ? "" : " (seeds" + seeds + ")"));
  return o;
}

// ---------------------------------------------------------------------------
// 4. Heuristic unlearners are distinguishable
// ---------------------------------------------------------------------------

Outcome criterion4() {
  Outcome o;
  const auto t0 = Clock::now();
  auto play = [](UnlearnMethod m, DistinguisherKind d, std::size_t forget) {
    GameConfig g;
    g.unlearner.method = m;
    g.distinguisher = d;
    g.forget.size = forget;
    g.trials = 128;
    g.threads = worker_threads();
    return run_game(g);
  };
  for (UnlearnMethod m : {UnlearnMethod::Amnesiac, UnlearnMethod::BadTeacher}) {
    for (DistinguisherKind d : {DistinguisherKind::Kld, DistinguisherKind::Mia}) {
      const GameReport r = play(m, d, 30);
      o.check(r.significant && !r.invalid_game,
              std::string(to_string(m)) + "/" + to_string(d) + " " + std::to_string(r.wins) + "/" +
                  std::to_string(r.trials) + " CI [" + fmt(r.interval.lo, 4) + "," + fmt(r.interval.hi, 4) + "]");
    }
  }
  for (UnlearnMethod m : {UnlearnMethod::Amnesiac, UnlearnMethod::BadTeacher, UnlearnMethod::Ssd}) {
    const GameReport small = play(m, DistinguisherKind::Kld, 3);
    const GameReport large = play(m, DistinguisherKind::Kld, 300);
    o.check(large.success_rate >= small.success_rate - 0.05,
            std::string(to_string(m)) + " trend " + fmt(small.success_rate, 4) + " at 3 -> " +
                fmt(large.success_rate, 4) + " at 300");
  }
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 1800.0, "runtime " + fmt(elapsed, 4) + " s < 1800 s");
  return o;
}

// ---------------------------------------------------------------------------
// 5. Sigma-sweep shape
// ---------------------------------------------------------------------------

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

Outcome criterion5() {
  Outcome o;
  const auto t0 = Clock::now();
  ExperimentConfig e = load_config("sweep_sigma.ini");
  e.game.trials = 16;
  e.game.threads = worker_threads();
  validate(e);
  std::vector<double> sigmas = e.sweep.sigmas, unlearned, control;
  std::vector<std::string> rules;
  for (double s : sigmas) {
    GameConfig g = e.game;
    g.unlearner.newton_sigma = s;
    const GameReport r = run_game(g);
    unlearned.push_back(median(detail::kept_scores(r, true)));
    control.push_back(median(detail::kept_scores(r, false)));
    rules.push_back(rule_direction(detail::majority_rule(r)));
  }
  std::string series;
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    series += (i ? " " : "") + fmt(sigmas[i], 2) + ":" + fmt(unlearned[i], 4) + "/" + rules[i];
  const double rho = spearman(sigmas, unlearned);
  bool strict = true;
  for (std::size_t i = 1; i < unlearned.size(); ++i) strict = strict && unlearned[i] > unlearned[i - 1];
  o.check(rho == 1.0 && strict, "Spearman " + fmt(rho) + " over " + series);
  const auto [lo, hi] = std::minmax_element(control.begin(), control.end());
  const double rel = (*hi - *lo) / std::max(std::fabs(*hi), 1e-300);
  o.check(rel <= 1e-9, "control median " + fmt(*lo, 6) + " varies by relative " + fmt(rel, 3));
  o.check(rules.front() != rules.back(), "rule " + rules.front() + " at low sigma, " + rules.back() + " at high sigma");
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 600.0, "runtime " + fmt(elapsed, 4) + " s < 600 s");
  return o;
}

// ---------------------------------------------------------------------------
// 6. DP utility collapse
// ---------------------------------------------------------------------------

Outcome criterion6() {
  Outcome o;
  const auto t0 = Clock::now();
  ExperimentConfig e = load_config("dp_collapse.ini");
  e.sweep.dp_epsilons = {std::log1p(std::ldexp(1.0, -32)), 1e2};
  e.sweep.dp_queries = 1000;
  const DpCollapseReport r = run_dp_collapse(e);
  const DpCollapsePoint& tiny = r.points[0];
  const DpCollapsePoint& large = r.points[1];
  o.check(std::fabs(tiny.min_accuracy - r.baseline) <= 0.05 && std::fabs(tiny.max_accuracy - r.baseline) <= 0.05,
          "eps=ln(1+2^-32) accuracy in [" + fmt(tiny.min_accuracy, 4) + "," + fmt(tiny.max_accuracy, 4) +
              "] vs 1/C " + fmt(r.baseline, 3));
  o.check(std::fabs(large.min_accuracy - r.unwrapped_accuracy) <= 0.02 &&
              std::fabs(large.max_accuracy - r.unwrapped_accuracy) <= 0.02,
          "eps=100 accuracy in [" + fmt(large.min_accuracy, 4) + "," + fmt(large.max_accuracy, 4) + "] vs unwrapped " +
              fmt(r.unwrapped_accuracy, 4));
  const double elapsed = seconds_since(t0);
  o.check(elapsed < 60.0, "runtime " + fmt(elapsed, 3) + " s < 60 s");
  return o;
}

// ---------------------------------------------------------------------------
// 7. Jeffreys interval against brute-force integration
// ---------------------------------------------------------------------------

// Beta(a, b) with a = k + 1/2, b = n - k + 1/2. Substituting x = sin²θ turns
// the density into 2 sin^{2k}θ cos^{2(n-k)}θ dθ on [0, π/2], which is smooth,
// so composite Simpson integration converges without endpoint singularities.
struct BruteBeta {
  std::vector<double> theta, cdf;

  BruteBeta(std::size_t k, std::size_t n, std::size_t panels = 400000) {
    const double h = (M_PI / 2.0) / static_cast<double>(panels);
    auto f = [&](double t) {
      return std::pow(std::sin(t), 2.0 * static_cast<double>(k)) * std::pow(std::cos(t), 2.0 * static_cast<double>(n - k));
    };
    theta.resize(panels + 1);
    cdf.resize(panels + 1);
    cdf[0] = 0.0;
    theta[0] = 0.0;
    for (std::size_t i = 0; i < panels; ++i) {
      const double a = h * static_cast<double>(i);
      theta[i + 1] = a + h;
      cdf[i + 1] = cdf[i] + h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h));
    }
    const double total = cdf.back();
    for (auto& c : cdf) c /= total;
  }

  double quantile(double p) const {
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), p);
    const std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf.begin(), 1));
    const double w = (p - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
    const double t = theta[i - 1] + w * (theta[i] - theta[i - 1]);
    const double s = std::sin(t);
    return s * s;
  }
};

Outcome criterion7() {
  Outcome o;
  const std::pair<std::size_t, std::size_t> fixtures[] = {{64, 128}, {96, 128}, {128, 128}, {0, 0}};
  for (auto [k, n] : fixtures) {
    const CredibleInterval ci = jeffreys_interval(k, n, 0.95);
    const BruteBeta b(k, n);
    const double lo = b.quantile(0.025), hi = b.quantile(0.975);
    const double err = std::max(std::fabs(ci.lo - lo), std::fabs(ci.hi - hi));
    o.check(err <= 1e-6, std::to_string(k) + "/" + std::to_string(n) + " [" + fmt(ci.lo, 9) + "," + fmt(ci.hi, 9) +
                             "] err " + fmt(err, 2));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 8. Numerics property suite
// ---------------------------------------------------------------------------

Outcome criterion8() {
  Outcome o;
  RngStream rng(8, 8);
  double worst_inverse = 0.0, worst_residual = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(7));
    Matrix b(n, n);
    for (auto& v : b.data()) v = rng.normal();
    Matrix reduced = matmul(transpose(b), b);
    for (std::size_t i = 0; i < n; ++i) reduced(i, i) += static_cast<double>(n);
    Vector u(n);
    for (auto& v : u) v = rng.normal();
    Matrix a = reduced;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) += u[i] * u[j];
    const Matrix down = sherman_morrison_downdate(invert_spd(a), u);
    worst_inverse = std::max(worst_inverse, max_abs_diff(down, invert_spd(reduced)));
    worst_residual = std::max(worst_residual, max_abs_diff(matmul(reduced, down), Matrix::identity(n)));
  }
  o.check(worst_inverse <= 1e-7 && worst_residual <= 1e-7,
          "downdate vs direct inverse " + fmt(worst_inverse, 2) + ", residual " + fmt(worst_residual, 2));

  double min_kl = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(9));
    Vector p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sp += (p[i] = -std::log(rng.uniform()));
      sq += (q[i] = -std::log(rng.uniform()));
    }
    for (std::size_t i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    min_kl = std::min(min_kl, kl_divergence(p, q));
  }
  o.check(min_kl >= 0.0, "KL minimum over 10000 pairs " + fmt(min_kl, 3));

  double worst_norm = 0.0;
  for (int t = 0; t < 10000; ++t) {
    Vector z(2 + rng.below(20));
    for (auto& v : z) v = 50.0 * rng.normal();
    const Vector s = softmax(z);
    worst_norm = std::max(worst_norm, std::fabs(std::accumulate(s.begin(), s.end(), 0.0) - 1.0));
  }
  o.check(worst_norm <= 1e-12, "softmax normalization error " + fmt(worst_norm, 2));
  return o;
}

// ---------------------------------------------------------------------------
// 9. CLI determinism
// ---------------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& stdout_file) {
  const std::string cmd = std::string(UNLEARN_ARENA_BIN) + " " + args + " >" + stdout_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every file below `a` must exist below `b` with identical bytes, and vice versa.
bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& root : {a, b})
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) names.insert(fs::relative(e.path(), root).generic_string());
  for (const auto& n : names) {
    if (!fs::exists(a / n) || !fs::exists(b / n) || slurp(a / n) != slurp(b / n)) {
      why = n;
      return false;
    }
  }
  return !names.empty();
}

Outcome criterion9() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "unlearn_arena_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string small_game = R"([unlearner]
method = amnesiac
[distinguisher]
kind = mia
shadow_count = 2
[game]
trials = 3
forget_size = 10
[sweep]
methods = amnesiac, ssd
distinguishers = kld
forget_sizes = 3, 10
dp_epsilons = 100, 0.01
dp_repeats = 2
dp_queries = 200
)";
  const std::string sigma_game = R"([scheme]
scheme = logistic
epochs = 5
[unlearner]
method = newton-removal
[distinguisher]
kind = kld
[game]
trials = 4
train_size = 300
test_size = 200
population_size = 0
[sweep]
sigmas = 1e-4, 1e-1
)";
  std::ofstream(root / "small.ini") << small_game;
  std::ofstream(root / "sigma.ini") << sigma_game;
  struct Command {
    std::string name, args;
  };
  const Command commands[] = {
      {"game", "game " + (root / "small.ini").string()},
      {"sweep-forget", "sweep-forget " + (root / "small.ini").string()},
      {"sweep-sigma", "sweep-sigma " + (root / "sigma.ini").string()},
      {"demo-dp-collapse", "demo-dp-collapse " + (root / "small.ini").string()},
  };
  for (const auto& c : commands) {
    int rc[3];
    const char* runs[] = {"r1", "r2", "threads"};
    for (int i = 0; i < 3; ++i) {
      const fs::path out = root / c.name / runs[i];
      fs::create_directories(out);
      rc[i] = run_cli(c.args + " --out " + (out / "files").string() + (i == 2 ? " --threads 4" : ""), out / "stdout.txt");
    }
    std::string why;
    const bool rerun = same_tree(root / c.name / "r1", root / c.name / "r2", why);
    std::string why_threads;
    const bool threaded = same_tree(root / c.name / "r1", root / c.name / "threads", why_threads);
    o.check(rc[0] == 0 && rc[1] == 0 && rc[2] == 0 && rerun && threaded,
            c.name + " exit " + std::to_string(rc[0]) + (rerun ? "" : ", rerun differs in " + why) +
                (threaded ? "" : ", threaded run differs in " + why_threads));
  }
  {
    int rc[2];
    for (int i = 0; i < 2; ++i) rc[i] = run_cli("verify-perfect --instances 20", root / ("verify" + std::to_string(i) + ".txt"));
    o.check(rc[0] == 0 && rc[1] == 0 && slurp(root / "verify0.txt") == slurp(root / "verify1.txt"), "verify-perfect");
  }
  {
    // report over the sweep outputs, twice into separate copies.
    for (const char* copy : {"rep1", "rep2"}) {
      fs::create_directories(root / copy);
      fs::copy(root / "sweep-forget" / "r1" / "files", root / copy / "sweep", fs::copy_options::recursive);
      fs::copy(root / "game" / "r1" / "files", root / copy / "game", fs::copy_options::recursive);
    }
    const int a = run_cli("report " + (root / "rep1").string(), root / "report1.txt");
    const int b = run_cli("report " + (root / "rep2").string(), root / "report2.txt");
    std::string why;
    o.check(a == 0 && b == 0 && same_tree(root / "rep1", root / "rep2", why), "report" + (why.empty() ? "" : " differs in " + why));
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"perfect-unlearning oracle equivalence", criterion1},
      {"replay distinguisher", criterion2},
      {"perfect-unlearning null", criterion3},
      {"heuristic unlearners distinguishable", criterion4},
      {"sigma-sweep shape", criterion5},
      {"DP utility collapse", criterion6},
      {"Jeffreys interval oracle", criterion7},
      {"numerics property suite", criterion8},
      {"CLI determinism", criterion9},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first << ", "
              << fmt(seconds_since(t0), 4) << " s): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
