// abpt: train, compare, detach-experiment, grad-check.
//
// Exit codes: 0 ok, 1 training aborted or grad-check tolerance breach,
// 2 bad configuration or arguments, 3 file system failure.
#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "abpt/config.hpp"
#include "abpt/gradcheck.hpp"
#include "abpt/harness.hpp"

namespace {

using namespace abpt;

constexpr int kExitAborted = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string algo;
  std::string task;
  std::string out;
  bool desk = false;
  bool paper = false;
};

CliOverrides overrides(const CommonArgs& a) {
  CliOverrides o;
  try {
    if (!a.algo.empty()) o.algo = parse_algorithm(a.algo);
    if (!a.task.empty()) o.task = parse_task(a.task);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(a.algo.empty() ? "--task" : "--algo", e.what());
  }
  if (a.desk && a.paper) throw ConfigError("--desk-scale", "conflicts with --paper-scale");
  if (a.desk) o.scale = Scale::kDesk;
  if (a.paper) o.scale = Scale::kPaper;
  o.seed = a.seed;
  if (!a.out.empty()) o.out = a.out;
  return o;
}

RunConfig resolve(const CommonArgs& a) {
  const CliOverrides o = overrides(a);
  return a.config.empty() ? resolve_config("", o) : load_config_file(a.config, o);
}

int cmd_train(const CommonArgs& a, const std::string& manifest, bool quiet) {
  RunConfig rc;
  if (!manifest.empty()) {
    Manifest m = read_manifest(manifest);
    rc = m.config;
    rc.out = a.out.empty() ? (fs::path(manifest).parent_path() / "rerun").string() : a.out;
    if (m.config_hash != config_hash(m.config))
      std::cerr << "warning: manifest config hash " << m.config_hash << " does not match its config\n";
  } else {
    rc = resolve(a);
  }
  std::ostream* progress = quiet ? nullptr : &std::cout;
  const auto results = run_campaign(rc, progress, !manifest.empty());
  int code = 0;
  for (const RunResult& r : results) {
    if (r.log.aborted) {
      std::cerr << r.dir.string() << ": aborted: " << r.log.abort_reason << "\n";
      code = kExitAborted;
    } else if (!quiet) {
      std::cout << "wrote " << r.dir.string() << "\n";
    }
  }
  return code;
}

std::vector<fs::path> expand_run_dirs(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const std::string& s : args) {
    const fs::path p(s);
    if (fs::exists(p / "manifest.json")) {
      out.push_back(p);
      continue;
    }
    std::vector<fs::path> seeds;
    if (fs::is_directory(p))
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) seeds.push_back(e.path());
    if (seeds.empty()) throw IoError(s + ": no run.csv/manifest.json found");
    std::sort(seeds.begin(), seeds.end());
    out.insert(out.end(), seeds.begin(), seeds.end());
  }
  return out;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<LoadedRun> runs;
  for (const fs::path& d : expand_run_dirs(dirs)) runs.push_back(load_run(d));
  const Comparison c = compare_runs(runs);
  write_comparison(c, out);
  std::cout << comparison_table(c);
  std::cout << "curves: " << (fs::path(out) / "compare_steps.csv").string() << ", "
            << (fs::path(out) / "compare_wall.csv").string() << ", " << (fs::path(out) / "compare.svg").string()
            << "\n";
  return 0;
}

int cmd_detach(const CommonArgs& a) {
  CommonArgs args = a;
  if (args.task.empty()) args.task = "hovering";
  if (args.algo.empty()) args.algo = "abpt";
  RunConfig rc = resolve(args);
  if (args.config.empty()) {
    rc.train.horizon = kDetachHorizon;
    rc.train.total_steps = kDetachSteps;
  }
  if (rc.train.task.kind != TaskKind::kHovering) throw ConfigError("task", "detach experiment runs on hovering");
  if (rc.train.algo != Algorithm::kAbpt) throw ConfigError("algo", "detach experiment needs abpt");
  const fs::path root(rc.out);
  int below = 0;
  for (std::uint64_t s : rc.seeds) {
    TrainConfig tc = rc.train;
    tc.seed = s;
    const DetachResult r = detach_experiment(tc, rc.train.task.detached);
    const fs::path dir = root / ("seed_" + std::to_string(s));
    fs::create_directories(dir);
    write_detach_csv(dir / "detach.csv", r);
    const bool ok = r.mean_tail_with() < r.mean_tail_without();
    below += ok;
    std::cout << "seed " << s << "  tail residual with J0 " << std::setprecision(6) << r.mean_tail_with()
              << "  without J0 " << r.mean_tail_without() << (ok ? "  (with < without)" : "  (with >= without)")
              << "\n";
  }
  std::cout << below << "/" << rc.seeds.size() << " seeds with the J0 residual below\n";
  return 0;
}

int cmd_grad_check(const std::string& target, std::uint64_t seed) {
  const auto& targets = grad_check_targets();
  std::vector<std::string> run;
  if (target == "all") {
    run = targets;
  } else if (std::find(targets.begin(), targets.end(), target) != targets.end()) {
    run = {target};
  } else {
    std::cerr << "unknown grad-check target '" << target << "'; expected one of:";
    for (const auto& t : targets) std::cerr << " " << t;
    std::cerr << " all\n";
    return kExitConfig;
  }
  bool ok = true;
  for (const std::string& t : run) {
    const GradCheckReport r = run_grad_check(t, seed);
    std::cout << "[" << t << "]\n";
    for (const CheckLine& l : r.lines) {
      std::printf("  %-52s max rel err %.3e  (tol %.0e)  %s\n", l.name.c_str(), l.max_rel_error, l.tolerance,
                  l.ok() ? "ok" : "FAIL");
      if (!l.ok()) std::cerr << "tolerance breach: " << t << ": " << l.name << "\n";
    }
    ok = ok && r.ok();
  }
  return ok ? 0 : kExitAborted;
}

void add_common(CLI::App* app, CommonArgs& a, bool with_algo_task) {
  app->add_option("--config", a.config, "JSON config file");
  app->add_option("--seed", a.seed, "single seed, replaces the config's seed list");
  if (with_algo_task) {
    app->add_option("--algo", a.algo, "abpt, shac or bptt");
    app->add_option("--task", a.task, "hovering, tracking, landing or racing");
  }
  app->add_option("--out", a.out, "output directory");
  app->add_flag("--desk-scale", a.desk, "16 envs, 2x64 networks, 200k steps, BPTT horizon 64");
  app->add_flag("--paper-scale", a.paper, "published hyperparameters");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Actor-critic training through a differentiable quadrotor simulator"};
  app.require_subcommand(1);

  CommonArgs train_args;
  std::string manifest;
  bool quiet = false;
  CLI::App* train = app.add_subcommand("train", "train one or more seeds");
  add_common(train, train_args, true);
  train->add_option("--manifest", manifest, "rerun exactly the run recorded in this manifest.json");
  train->add_flag("--quiet", quiet, "no progress output");

  std::vector<std::string> dirs;
  std::string compare_out = "compare";
  CLI::App* compare = app.add_subcommand("compare", "aggregate runs into curves, bands and a final table");
  compare->add_option("runs", dirs, "run directories or campaign directories")->required();
  compare->add_option("--out", compare_out, "output directory");

  CommonArgs detach_args;
  CLI::App* detach = app.add_subcommand("detach-experiment", "parameter residuals under detached rewards; N = 32 and 50k steps unless --config");
  add_common(detach, detach_args, false);

  std::string target;
  std::uint64_t gc_seed = 1;
  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference suites");
  grad->add_option("target", target, "autodiff-prims, dynamics, rewards, actor, critic, objectives or all")->required();
  grad->add_option("--seed", gc_seed, "seed for the random probe points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args, manifest, quiet);
    if (*compare) return cmd_compare(dirs, compare_out);
    if (*detach) return cmd_detach(detach_args);
    if (*grad) return cmd_grad_check(target, gc_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAborted;
  }
  return 0;
}
