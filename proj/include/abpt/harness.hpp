#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "abpt/config.hpp"
#include "abpt/trainer.hpp"

namespace abpt {

namespace fs = std::filesystem;

// File system failures; the CLI maps these to exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kRunCsvHeader = "iter,steps,wall_s,eval_reward,eval_success,actor_obj,critic_loss,kappa,grad_norm";

// Doubles are written in shortest round-trip form so that a read returns the
// logged values bit for bit.
void write_run_csv(const fs::path& path, const std::vector<IterationRecord>& records);
std::string run_csv_string(const std::vector<IterationRecord>& records);
// Throws IoError if the file cannot be read, std::runtime_error on a bad header or row.
std::vector<IterationRecord> read_run_csv(const fs::path& path);
std::vector<IterationRecord> parse_run_csv(const std::string& text);

struct Manifest {
  RunConfig config;  // seeds holds only this run's seed
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string version;
  bool aborted = false;
  std::string abort_reason;
};

std::string build_version();
nlohmann::ordered_json manifest_json(const Manifest& m);
void write_manifest(const fs::path& path, const Manifest& m);
// Re-validates the embedded config; throws ConfigError or IoError.
Manifest read_manifest(const fs::path& path);

struct RunResult {
  fs::path dir;
  TrainLog log;
};

// One seed: trains and writes run.csv, manifest.json and checkpoints into dir.
RunResult run_single(const RunConfig& config, std::uint64_t seed, const fs::path& dir, std::ostream* progress = nullptr);
// Every seed of config.seeds into <out>/seed_<S>/, or straight into <out> for a single seed
// when `flat` is set.
std::vector<RunResult> run_campaign(const RunConfig& config, std::ostream* progress = nullptr, bool flat = false);

// ---- comparison ----

struct LoadedRun {
  fs::path dir;
  std::string algo;
  std::string task;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> records;
};

LoadedRun load_run(const fs::path& dir);

struct Band {
  std::vector<double> x;
  std::vector<double> mean, lo, hi;
};

struct AlgoCurves {
  std::string algo;
  int runs = 0;
  Band by_steps;
  Band by_wall;
  double final_mean = 0.0, final_min = 0.0, final_max = 0.0;
  double final_success = 0.0;
};

struct Comparison {
  std::string task;
  std::vector<AlgoCurves> algos;
};

// Curves are aligned on the union of logged step counts and on a uniform
// wall-time grid over the span every run covers, linearly interpolated and
// held flat past either end. Throws std::runtime_error on mixed tasks.
Comparison compare_runs(const std::vector<LoadedRun>& runs, int wall_points = 100);
void write_comparison(const Comparison& c, const fs::path& out_dir);
std::string comparison_table(const Comparison& c);
std::string comparison_svg(const Comparison& c);

// ---- detach experiment ----

struct DetachResult {
  std::vector<long> iter;
  std::vector<long> steps;
  std::vector<double> with_zero_step;     // |theta_full - theta_detached|, both with J^0
  std::vector<double> without_zero_step;  // same pair trained without J^0
  double mean_tail_with() const;          // mean over the final half of iterations
  double mean_tail_without() const;
};

// Four runs from one initialization and noise seed: {full, detached rewards}
// x {with, without J^0}. `detached` selects the reward terms to cut; when it
// selects nothing the position term is used.
inline constexpr int kDetachHorizon = 32;
inline constexpr long kDetachSteps = 50000;

DetachResult detach_experiment(const TrainConfig& base, DetachedTerms detached = {});
void write_detach_csv(const fs::path& path, const DetachResult& r);

}  // namespace abpt
