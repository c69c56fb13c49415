#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "unlearn_arena/cli.hpp"

using namespace arena;
namespace fs = std::filesystem;

namespace {

// results.csv of the tiny k-NN game below, frozen from the first run.
constexpr const char* kGoldenKnnResults =
    "# unlearn-arena results v1\n"
    "experiment_id,method,distinguisher,mode,forget_size,sigma,trials,wins,success_rate,ci_lo,ci_hi,significant,mean_kld_unlearned,mean_kld_control,util_orig,util_control,util_unlearned,cost_unlearn,cost_retrain,seed\n"
    "tiny,knn-delete,kld,white-box,10,0,8,4,0.5,0.1989656112564262,0.8010343887435738,0,17.269388197455342,17.269388197455342,0.9800000000000002,0.98125000000000018,0.98125000000000018,10,190,5\n";

const char* kTinyKnn = R"([scheme]
scheme = knn
k = 1
[unlearner]
method = knn-delete
[distinguisher]
kind = kld
[game]
trials = 8
forget_size = 10
train_size = 200
test_size = 100
population_size = 0
master_seed = 5
[output]
experiment_id = tiny
)";

ErrorKind kind_of(const std::function<void()>& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Io;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unlearn_arena_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(UNLEARN_ARENA_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "config.ini";
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

ResultRow row(const std::string& id, std::size_t trials, std::size_t wins) {
  ResultRow r;
  r.experiment_id = id;
  r.method = "amnesiac";
  r.distinguisher = "kld";
  r.mode = "white-box";
  r.forget_size = 30;
  r.trials = trials;
  r.wins = wins;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

TEST(Config, DefaultsWithEmptySections) {
  const ExperimentConfig e = parse_config_string("[game]\n");
  EXPECT_EQ(e.game.trials, 128u);
  EXPECT_EQ(e.game.forget.size, 30u);
  EXPECT_EQ(e.game.scheme, SchemeId::Mlp);
  EXPECT_EQ(e.output.dir, "results");
}

TEST(Config, ParsesEverySection) {
  const ExperimentConfig e = parse_config_string(R"(; comment
[scheme]
scheme = logistic
epochs = 5
[unlearner]
method = newton-removal
newton_ridge = 0.001
[distinguisher]
kind = kld
noise_variance = 0.2
[game]
mode = black-box
trials = 16
master_seed = 9
threads = 2
[sweep]
sigmas = 1e-5, 1e-3
forget_sizes = 3, 30
[output]
dir = out
experiment_id = x
)");
  EXPECT_EQ(e.game.scheme, SchemeId::Logistic);
  EXPECT_EQ(e.game.scheme_cfg.epochs, 5u);
  EXPECT_EQ(e.game.unlearner.method, UnlearnMethod::NewtonRemoval);
  EXPECT_DOUBLE_EQ(e.game.unlearner.newton_ridge, 0.001);
  EXPECT_DOUBLE_EQ(e.game.noise_variance, 0.2);
  EXPECT_EQ(e.game.mode, GameMode::BlackBox);
  EXPECT_EQ(e.game.trials, 16u);
  EXPECT_EQ(e.game.master_seed, 9u);
  EXPECT_EQ(e.game.threads, 2u);
  EXPECT_EQ(e.sweep.sigmas, (std::vector<double>{1e-5, 1e-3}));
  EXPECT_EQ(e.sweep.forget_sizes, (std::vector<std::size_t>{3, 30}));
  EXPECT_EQ(e.output.dir, "out");
  EXPECT_EQ(e.output.experiment_id, "x");
}

TEST(Config, UnknownKeyIsRejected) {
  std::string msg;
  EXPECT_EQ(kind_of([] { parse_config_string("[game]\ntrails = 4\n"); }, &msg), ErrorKind::ConfigError);
  EXPECT_NE(msg.find("trails"), std::string::npos);
  EXPECT_EQ(kind_of([] { parse_config_string("[gmae]\ntrials = 4\n"); }), ErrorKind::ConfigError);
}

TEST(Config, NegativeTrialsNamesTheField) {
  std::string msg;
  EXPECT_EQ(kind_of([] { parse_config_string("[game]\ntrials = -5\n"); }, &msg), ErrorKind::ConfigError);
  EXPECT_NE(msg.find("trials"), std::string::npos);
}

TEST(Config, ForgetSizeZeroIsRejected) {
  std::string msg;
  EXPECT_EQ(kind_of([] { validate(parse_config_string("[game]\nforget_size = 0\n")); }, &msg), ErrorKind::ConfigError);
  EXPECT_NE(msg.find("forget_size"), std::string::npos);
}

TEST(Config, BadEnumValues) {
  EXPECT_EQ(kind_of([] { parse_config_string("[unlearner]\nmethod = forgetful\n"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] { parse_config_string("[scheme]\nscheme = resnet\n"); }), ErrorKind::ConfigError);
  EXPECT_EQ(kind_of([] { parse_config_string("[game]\nutility_gap = lots\n"); }), ErrorKind::ConfigError);
}

TEST(Config, SeedOverrideFromEnvironment) {
  ExperimentConfig e = parse_config_string("[game]\nmaster_seed = 3\n");
  ::setenv("UNLEARN_ARENA_SEED", "77", 1);
  apply_seed_override(e);
  EXPECT_EQ(e.game.master_seed, 77u);
  ::setenv("UNLEARN_ARENA_SEED", "-1", 1);
  EXPECT_EQ(kind_of([&] { apply_seed_override(e); }), ErrorKind::ConfigError);
  ::unsetenv("UNLEARN_ARENA_SEED");
  e.game.master_seed = 3;
  apply_seed_override(e);
  EXPECT_EQ(e.game.master_seed, 3u);
}

TEST(ExitCodes, ConfigVersusProperty) {
  EXPECT_EQ(exit_code_for(Error(ErrorKind::ConfigError, "")), kExitConfig);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::MixedSchemaVersions, "")), kExitConfig);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::ForgetTooLarge, "")), kExitConfig);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::AllTrialsAborted, "")), kExitProperty);
  EXPECT_EQ(exit_code_for(Error(ErrorKind::SingularDowndate, "")), kExitProperty);
}

// ---------------------------------------------------------------------------
// Results files
// ---------------------------------------------------------------------------

TEST(Results, HeaderBytesAreExact) {
  std::ostringstream out;
  write_results(out, {});
  EXPECT_EQ(out.str(),
            "# unlearn-arena results v1\n"
            "experiment_id,method,distinguisher,mode,forget_size,sigma,trials,wins,success_rate,ci_lo,ci_hi,"
            "significant,mean_kld_unlearned,mean_kld_control,util_orig,util_control,util_unlearned,cost_unlearn,"
            "cost_retrain,seed\n");
}

TEST(Results, RoundTripKeepsSeventeenDigits) {
  ResultRow r = row("a", 3, 1);
  r.success_rate = 1.0 / 3.0;
  r.sigma = 1e-5;
  r.mean_kld_unlearned = 0.1 + 0.2;
  std::stringstream s;
  write_results(s, {r});
  const auto back = read_results(s, "mem");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].success_rate, r.success_rate);
  EXPECT_EQ(back[0].sigma, r.sigma);
  EXPECT_EQ(back[0].mean_kld_unlearned, r.mean_kld_unlearned);
  EXPECT_NE(format_row(r).find("0.33333333333333331"), std::string::npos);
}

TEST(Results, MixedSchemaVersionsRejected) {
  std::istringstream s("# unlearn-arena results v0\nexperiment_id,method\n");
  EXPECT_EQ(kind_of([&] { read_results(s, "old.csv"); }), ErrorKind::MixedSchemaVersions);
}

TEST(Results, MergeEqualsPooledInterval) {
  const auto merged = merge_rows({row("a", 64, 50), row("b", 64, 40)});
  ASSERT_EQ(merged.size(), 1u);
  const CredibleInterval pooled = jeffreys_interval(90, 128, 0.95);
  EXPECT_EQ(merged[0].trials, 128u);
  EXPECT_EQ(merged[0].wins, 90u);
  EXPECT_DOUBLE_EQ(merged[0].ci_lo, pooled.lo);
  EXPECT_DOUBLE_EQ(merged[0].ci_hi, pooled.hi);
  EXPECT_TRUE(merged[0].significant);
}

TEST(Results, MergeKeepsDistinctPointsApart) {
  ResultRow other = row("b", 64, 40);
  other.forget_size = 3;
  EXPECT_EQ(merge_rows({row("a", 64, 50), other}).size(), 2u);
}

// ---------------------------------------------------------------------------
// Commands in process
// ---------------------------------------------------------------------------

TEST(Report, EmptyDirectoryIsAnError) {
  const fs::path dir = scratch_dir("empty");
  std::ostringstream log;
  EXPECT_EQ(kind_of([&] { cmd_report(dir.string(), log); }), ErrorKind::Io);
}

TEST(Report, MixedVersionsAcrossFiles) {
  const fs::path dir = scratch_dir("mixed");
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  std::ofstream(dir / "a" / "results.csv") << detail::results_text({row("a", 64, 50)});
  std::ofstream(dir / "b" / "results.csv") << "# unlearn-arena results v0\nold\n";
  std::ostringstream log;
  EXPECT_EQ(kind_of([&] { cmd_report(dir.string(), log); }), ErrorKind::MixedSchemaVersions);
}

TEST(Report, MergesSplitRuns) {
  const fs::path dir = scratch_dir("merge");
  fs::create_directories(dir / "run1");
  fs::create_directories(dir / "run2");
  {
    std::ofstream a(dir / "run1" / "results.csv");
    write_results(a, {row("r1", 64, 50)});
    std::ofstream b(dir / "run2" / "results.csv");
    write_results(b, {row("r2", 64, 40)});
  }
  std::ostringstream log;
  EXPECT_EQ(cmd_report(dir.string(), log), kExitOk);
  std::ifstream agg(dir / "aggregate.csv");
  const auto rows = read_results(agg, "aggregate.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].trials, 128u);
  EXPECT_TRUE(fs::exists(dir / "plot_fig2.csv"));
  EXPECT_TRUE(fs::exists(dir / "plot_fig3.csv"));
}

TEST(VerifyPerfect, PassesAndCatchesInjectedFault) {
  VerifyOptions o;
  o.instances = 20;
  for (const auto& c : run_verify_perfect(o)) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
  o.skip_moment_downdate = true;
  bool any_fail = false;
  for (const auto& c : run_verify_perfect(o)) any_fail |= !c.pass;
  EXPECT_TRUE(any_fail);
}

// ---------------------------------------------------------------------------
// Binary
// ---------------------------------------------------------------------------

TEST(Cli, GameOutputsAreGoldenAndRepeatable) {
  const fs::path dir = scratch_dir("golden");
  const fs::path cfg = write_config(dir, kTinyKnn);
  ASSERT_EQ(run_cli("game " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("game " + cfg.string() + " --out " + (dir / "b").string() + " --threads 4"), 0);
  for (const char* f : {"results.csv", "trials.jsonl", "summary.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_EQ(slurp(dir / "a" / "results.csv"), kGoldenKnnResults);
}

TEST(Cli, TrialsFlagAndSeedEnvOverride) {
  const fs::path dir = scratch_dir("override");
  const fs::path cfg = write_config(dir, kTinyKnn);
  ASSERT_EQ(run_cli("game " + cfg.string() + " --trials 3 --out " + (dir / "a").string()), 0);
  std::ifstream a(dir / "a" / "results.csv");
  EXPECT_EQ(read_results(a, "a").at(0).trials, 3u);
  ASSERT_EQ(run_cli("game " + cfg.string() + " --out " + (dir / "b").string()), 0);
  ::setenv("UNLEARN_ARENA_SEED", "6", 1);
  const int rc = run_cli("game " + cfg.string() + " --out " + (dir / "c").string());
  ::unsetenv("UNLEARN_ARENA_SEED");
  ASSERT_EQ(rc, 0);
  std::ifstream c(dir / "c" / "results.csv");
  EXPECT_EQ(read_results(c, "c").at(0).seed, 6u);
  EXPECT_NE(slurp(dir / "b" / "trials.jsonl"), slurp(dir / "c" / "trials.jsonl"));
}

TEST(Cli, ConfigErrorsExitOne) {
  const fs::path dir = scratch_dir("bad");
  EXPECT_EQ(run_cli("game " + write_config(dir, "[game]\ntrials = -5\n").string()), 1);
  EXPECT_EQ(run_cli("game " + write_config(dir, "[game]\ncolour = red\n").string()), 1);
  EXPECT_EQ(run_cli("game " + (dir / "missing.ini").string()), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("report " + scratch_dir("bad_report").string()), 1);
}

TEST(Cli, InjectedFaultExitsTwo) {
  EXPECT_EQ(run_cli("verify-perfect --instances 5"), 0);
  EXPECT_EQ(run_cli("verify-perfect --instances 5 --inject-fault"), 2);
}
