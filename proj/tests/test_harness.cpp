#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "abpt/config.hpp"
#include "abpt/gradcheck.hpp"
#include "abpt/harness.hpp"

namespace {

using namespace abpt;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("abpt_test_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- configuration ----

TEST(ConfigFile, DefaultsFollowAlgorithmTaskAndScale) {
  const RunConfig abpt_race = default_config(Algorithm::kAbpt, TaskKind::kRacing, Scale::kPaper);
  EXPECT_EQ(abpt_race.train.lr, 0.01);
  EXPECT_TRUE(abpt_race.train.lr_decay);
  EXPECT_EQ(abpt_race.train.horizon, 96);
  EXPECT_EQ(abpt_race.train.buffer_capacity, 50000);
  EXPECT_EQ(abpt_race.train.num_envs, 100);

  const RunConfig bptt_race = default_config(Algorithm::kBptt, TaskKind::kRacing, Scale::kPaper);
  EXPECT_EQ(bptt_race.train.horizon, 512);
  EXPECT_EQ(bptt_race.train.lr, 0.002);
  EXPECT_EQ(default_config(Algorithm::kBptt, TaskKind::kLanding, Scale::kPaper).train.lr, 0.005);
  EXPECT_EQ(default_config(Algorithm::kShac, TaskKind::kRacing, Scale::kPaper).train.lr, 0.002);
  EXPECT_FALSE(default_config(Algorithm::kAbpt, TaskKind::kLanding, Scale::kPaper).train.lr_decay);
  EXPECT_TRUE(default_config(Algorithm::kAbpt, TaskKind::kTracking, Scale::kPaper).train.lr_decay);
  EXPECT_EQ(default_config(Algorithm::kAbpt, TaskKind::kLanding, Scale::kPaper, false).train.lr, 0.002);

  const RunConfig desk = default_config(Algorithm::kAbpt, TaskKind::kHovering, Scale::kDesk);
  EXPECT_EQ(desk.train.num_envs, 16);
  EXPECT_EQ(desk.train.horizon, 96);
  EXPECT_EQ(desk.train.hidden, (std::vector<int>{64, 64}));
  EXPECT_EQ(desk.train.total_steps, 200000);
  EXPECT_EQ(default_config(Algorithm::kBptt, TaskKind::kHovering, Scale::kDesk).train.horizon, 64);
}

TEST(ConfigFile, PrecedenceCliOverFileOverDefault) {
  const std::string file = R"({"algo": "shac", "task": "landing", "seeds": [5, 6], "out": "from_file",
                              "train": {"lr": 0.003}})";
  const RunConfig f = resolve_config(file, {});
  EXPECT_EQ(f.train.algo, Algorithm::kShac);
  EXPECT_EQ(f.train.task.kind, TaskKind::kLanding);
  EXPECT_EQ(f.seeds, (std::vector<std::uint64_t>{5, 6}));
  EXPECT_EQ(f.out, "from_file");
  EXPECT_EQ(f.train.lr, 0.003);
  EXPECT_EQ(f.train.critic_lr, 0.003);  // follows lr unless given
  EXPECT_EQ(f.train.seed, 5u);
  EXPECT_EQ(f.train.task.crash_penalty, TaskSpec::defaults(TaskKind::kLanding).crash_penalty);

  CliOverrides cli;
  cli.algo = Algorithm::kBptt;
  cli.seed = 9;
  cli.out = "from_cli";
  const RunConfig c = resolve_config(file, cli);
  EXPECT_EQ(c.train.algo, Algorithm::kBptt);
  EXPECT_EQ(c.train.horizon, 64);  // bptt desk default, not shac's
  EXPECT_EQ(c.train.task.kind, TaskKind::kLanding);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{9}));
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.out, "from_cli");
  EXPECT_EQ(c.train.lr, 0.003);

  const RunConfig d = resolve_config("", {});
  EXPECT_EQ(d.train.algo, Algorithm::kAbpt);
  EXPECT_EQ(d.train.task.kind, TaskKind::kHovering);
  EXPECT_EQ(d.scale, Scale::kDesk);
}

TEST(ConfigFile, NestedOverridesKeepSiblingDefaults) {
  const RunConfig c = resolve_config(R"({"task": {"kind": "racing", "weights": {"k5": 3.0}}})", {});
  EXPECT_EQ(c.train.task.weights.k5, 3.0);
  EXPECT_EQ(c.train.task.weights.k1, RewardWeights{}.k1);
  EXPECT_EQ(c.train.task.gates.size(), 4u);
}

TEST(ConfigFile, ErrorsCarryFieldAndLine) {
  try {
    resolve_config("{\n  \"train\": {\n    \"lr\": -2\n  }\n}", {});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.lr");
    EXPECT_EQ(e.line(), 3);
  }
  try {
    resolve_config("{\n  \"train\": {\n    \"horizn\": 8\n  }\n}", {});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.horizn");
    EXPECT_EQ(e.line(), 3);
  }
  try {
    resolve_config("{\n  \"algo\": \"abpt\",\n  \"seed\": 1,,\n}", {});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(resolve_config(R"({"algo": "ppo"})", {}), ConfigError);
  EXPECT_THROW(resolve_config(R"({"train": {"hidden": "big"}})", {}), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent/config.json", {}), ConfigError);
}

TEST(ConfigFile, JsonRoundTripAndHash) {
  RunConfig c = default_config(Algorithm::kAbpt, TaskKind::kRacing, Scale::kDesk);
  c.seeds = {1, 2, 3};
  c.train.lr = 0.1 + 0.2;
  c.train.task.detached.velocity = true;
  const RunConfig back = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(back.train.lr, 0.1 + 0.2);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  RunConfig d = c;
  d.train.tau = 0.006;
  EXPECT_NE(config_hash(d), config_hash(c));
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

// ---- run files ----

TEST(RunCsv, RoundTripIsBitwise) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 100.0);
  std::vector<IterationRecord> recs;
  for (long i = 0; i < 50; ++i) {
    IterationRecord r;
    r.iter = i;
    r.steps = (i + 1) * 512;
    r.wall_s = std::abs(g(rng));
    r.eval_reward = g(rng);
    r.eval_success = 0.1 * (i % 11);
    r.actor_obj = g(rng) * 1e-12;
    r.critic_loss = g(rng) * 1e9;
    r.kappa = 0.2;
    r.grad_norm = 1.0 / 3.0;
    recs.push_back(r);
  }
  recs[7].actor_obj = std::nan("");
  const std::string text = run_csv_string(recs);
  EXPECT_EQ(text.substr(0, text.find('\n')), kRunCsvHeader);
  const auto back = parse_run_csv(text);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].iter, recs[i].iter);
    EXPECT_EQ(back[i].steps, recs[i].steps);
    EXPECT_EQ(back[i].wall_s, recs[i].wall_s);
    EXPECT_EQ(back[i].eval_reward, recs[i].eval_reward);
    EXPECT_EQ(back[i].critic_loss, recs[i].critic_loss);
    EXPECT_EQ(back[i].grad_norm, recs[i].grad_norm);
    if (i != 7) {
      EXPECT_EQ(back[i].actor_obj, recs[i].actor_obj);
    }
  }
  EXPECT_TRUE(std::isnan(back[7].actor_obj));
  EXPECT_EQ(run_csv_string(back), text);
  EXPECT_THROW(parse_run_csv("iter,steps\n1,2\n"), std::runtime_error);
  EXPECT_THROW(read_run_csv("/nonexistent/run.csv"), IoError);
}

RunConfig quick(Algorithm algo, std::vector<std::uint64_t> seeds, const fs::path& out) {
  RunConfig rc = default_config(algo, TaskKind::kHovering, Scale::kDesk);
  rc.train.num_envs = 4;
  rc.train.horizon = 8;
  rc.train.hidden = {16, 16};
  rc.train.total_steps = 4 * 8 * 5;
  rc.train.critic_steps = 2;
  rc.train.eval_every = 2;
  rc.train.eval_envs = 4;
  rc.seeds = std::move(seeds);
  rc.out = out.string();
  rc.checkpoint_every = 2;
  return rc;
}

TEST(Campaign, WritesRunFilesAndRerunsFromManifest) {
  TempDir tmp;
  const RunConfig rc = quick(Algorithm::kAbpt, {3, 4}, tmp.path() / "camp");
  const auto results = run_campaign(rc);
  ASSERT_EQ(results.size(), 2u);
  const fs::path d3 = tmp.path() / "camp" / "seed_3";
  for (const char* f : {"run.csv", "manifest.json", "checkpoint_2.json", "checkpoint_4.json", "checkpoint_final.json"})
    EXPECT_TRUE(fs::exists(d3 / f)) << f;

  const Manifest m = read_manifest(d3 / "manifest.json");
  EXPECT_EQ(m.seed, 3u);
  EXPECT_EQ(m.config.seeds, (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(m.config_hash, config_hash(m.config));
  EXPECT_EQ(m.version, build_version());
  EXPECT_FALSE(m.aborted);

  // Replaying the manifest reproduces the log bit for bit.
  RunConfig again = m.config;
  again.out = (tmp.path() / "rerun").string();
  run_campaign(again, nullptr, true);
  EXPECT_EQ(slurp(tmp.path() / "rerun" / "checkpoint_final.json"), slurp(d3 / "checkpoint_final.json"));
  const auto a = read_run_csv(d3 / "run.csv");
  const auto b = read_run_csv(tmp.path() / "rerun" / "run.csv");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].eval_reward, b[i].eval_reward);
    EXPECT_EQ(a[i].actor_obj, b[i].actor_obj);
  }

  const auto ckpt = load_checkpoint((d3 / "checkpoint_final.json").string());
  EXPECT_EQ(ckpt.step, static_cast<long>(a.size()));
}

TEST(Campaign, BadManifestsAndUnwritableDirs) {
  TempDir tmp;
  std::ofstream(tmp.path() / "m.json") << R"({"format": "something-else"})";
  EXPECT_THROW(read_manifest(tmp.path() / "m.json"), ConfigError);
  EXPECT_THROW(read_manifest(tmp.path() / "missing.json"), IoError);
  std::ofstream(tmp.path() / "file") << "x";
  RunConfig rc = quick(Algorithm::kBptt, {0}, tmp.path() / "file" / "sub");
  EXPECT_THROW(run_campaign(rc), IoError);
}

// ---- comparison ----

LoadedRun synthetic(const std::string& algo, std::vector<std::pair<long, double>> pts, double wall_per_step) {
  LoadedRun r;
  r.algo = algo;
  r.task = "hovering";
  long i = 0;
  for (auto [s, y] : pts) {
    IterationRecord rec;
    rec.iter = i++;
    rec.steps = s;
    rec.wall_s = static_cast<double>(s) * wall_per_step;
    rec.eval_reward = y;
    r.records.push_back(rec);
  }
  return r;
}

TEST(Compare, SingleRunCollapsesToItsCurve) {
  const LoadedRun r = synthetic("abpt", {{100, 1.0}, {200, 3.0}, {300, 2.0}}, 0.01);
  const Comparison c = compare_runs({r}, 5);
  ASSERT_EQ(c.algos.size(), 1u);
  const Band& b = c.algos[0].by_steps;
  EXPECT_EQ(b.x, (std::vector<double>{100, 200, 300}));
  EXPECT_EQ(b.mean, (std::vector<double>{1.0, 3.0, 2.0}));
  EXPECT_EQ(b.lo, b.mean);
  EXPECT_EQ(b.hi, b.mean);
  EXPECT_EQ(c.algos[0].final_mean, 2.0);
  EXPECT_EQ(c.algos[0].by_wall.x.size(), 5u);
  EXPECT_NEAR(c.algos[0].by_wall.mean[2], 3.0, 1e-12);  // wall 2.0 lands on the second point
}

TEST(Compare, IdenticalRunsGiveZeroWidthBand) {
  const LoadedRun r = synthetic("shac", {{100, -4.0}, {250, 1.5}}, 0.02);
  const Comparison c = compare_runs({r, r, r});
  const Band& b = c.algos[0].by_steps;
  for (std::size_t i = 0; i < b.x.size(); ++i) {
    EXPECT_EQ(b.hi[i] - b.lo[i], 0.0);
    EXPECT_EQ(b.mean[i], b.lo[i]);
  }
  EXPECT_EQ(c.algos[0].runs, 3);
}

TEST(Compare, BandsAreExtremaOfTheRawRuns) {
  // Same logging grid, so every band point is a raw CSV value.
  const LoadedRun a = synthetic("abpt", {{100, 1.0}, {200, 5.0}, {300, 2.0}}, 0.01);
  const LoadedRun b = synthetic("abpt", {{100, 3.0}, {200, -1.0}, {300, 4.0}}, 0.012);
  const LoadedRun s = synthetic("bptt", {{100, 0.0}, {300, 9.0}}, 0.001);
  const Comparison c = compare_runs({a, s, b});
  ASSERT_EQ(c.algos.size(), 2u);
  EXPECT_EQ(c.algos[0].algo, "abpt");
  const Band& band = c.algos[0].by_steps;
  const std::vector<double> lo{1.0, -1.0, 2.0}, hi{3.0, 5.0, 4.0}, mean{2.0, 2.0, 3.0};
  EXPECT_EQ(band.lo, lo);
  EXPECT_EQ(band.hi, hi);
  EXPECT_EQ(band.mean, mean);
  EXPECT_EQ(c.algos[0].final_min, 2.0);
  EXPECT_EQ(c.algos[0].final_max, 4.0);
  // bptt interpolated linearly at its own grid only.
  EXPECT_EQ(c.algos[1].by_steps.x, (std::vector<double>{100, 300}));
}

TEST(Compare, MisalignedGridsInterpolateAndHold) {
  const LoadedRun a = synthetic("abpt", {{100, 0.0}, {300, 2.0}}, 0.01);
  const LoadedRun b = synthetic("abpt", {{200, 10.0}, {400, 10.0}}, 0.01);
  const Band band = compare_runs({a, b}).algos[0].by_steps;
  EXPECT_EQ(band.x, (std::vector<double>{100, 200, 300, 400}));
  // At 100, b holds its first value; at 400, a holds its last.
  EXPECT_EQ(band.lo, (std::vector<double>{0.0, 1.0, 2.0, 2.0}));
  EXPECT_EQ(band.hi, (std::vector<double>{10.0, 10.0, 10.0, 10.0}));
}

TEST(Compare, RejectsMixedTasksAndWritesOutputs) {
  LoadedRun a = synthetic("abpt", {{100, 1.0}}, 0.01);
  LoadedRun b = a;
  b.task = "landing";
  EXPECT_THROW(compare_runs({a, b}), std::runtime_error);
  EXPECT_THROW(compare_runs({}), std::runtime_error);

  TempDir tmp;
  const Comparison c = compare_runs({synthetic("abpt", {{100, 1.0}, {200, 2.0}}, 0.01)});
  write_comparison(c, tmp.path() / "cmp");
  for (const char* f : {"compare_steps.csv", "compare_wall.csv", "compare.svg", "final.txt"})
    EXPECT_TRUE(fs::exists(tmp.path() / "cmp" / f)) << f;
  EXPECT_NE(comparison_svg(c).find("<svg"), std::string::npos);
  EXPECT_NE(comparison_table(c).find("abpt"), std::string::npos);
}

// ---- detach experiment ----

TrainConfig detach_base() {
  TrainConfig c;
  c.num_envs = 4;
  c.horizon = 8;
  c.hidden = {16, 16};
  c.total_steps = 4 * 8 * 6;
  c.critic_steps = 2;
  c.seed = 2;
  return c;
}

TEST(Detach, ResidualStartsAtZeroAndGrows) {
  const DetachResult r = detach_experiment(detach_base());
  ASSERT_EQ(r.iter.size(), 7u);  // init plus six iterations
  EXPECT_EQ(r.with_zero_step[0], 0.0);
  EXPECT_EQ(r.without_zero_step[0], 0.0);
  EXPECT_EQ(r.steps[0], 0);
  EXPECT_GT(r.with_zero_step.back(), 0.0);
  EXPECT_GT(r.without_zero_step.back(), 0.0);
}

TEST(Detach, UnweightedTermGivesZeroResidual) {
  // With k1 = 0, detaching the position term cuts nothing: both runs match exactly.
  TrainConfig c = detach_base();
  c.task.weights.k1 = 0.0;
  const DetachResult r = detach_experiment(c);
  for (double x : r.with_zero_step) EXPECT_EQ(x, 0.0);
  for (double x : r.without_zero_step) EXPECT_EQ(x, 0.0);
}

TEST(Detach, RequiresHoveringAbpt) {
  TrainConfig c = detach_base();
  c.algo = Algorithm::kShac;
  EXPECT_THROW(detach_experiment(c), std::invalid_argument);
  c = detach_base();
  c.task = TaskSpec::defaults(TaskKind::kLanding);
  EXPECT_THROW(detach_experiment(c), std::invalid_argument);
}

TEST(GradCheckSuite, EveryTargetPasses) {
  for (const std::string& t : grad_check_targets()) {
    const GradCheckReport r = run_grad_check(t);
    EXPECT_TRUE(r.ok()) << t << " worst " << r.max_error();
    EXPECT_FALSE(r.lines.empty()) << t;
  }
}

}  // namespace
