#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "abpt/trainer.hpp"

// Run configuration files.
//
// A config is one JSON object; every key is optional and unknown keys are
// rejected. Defaults depend on (algo, task, scale), so those three are
// resolved first (CLI flag, then file, then abpt/hovering/desk) and the
// remaining file keys are applied on top of the matching defaults.
//
//   {
//     "algo": "abpt", "scale": "desk", "seeds": [0, 1, 2], "out": "runs/hover",
//     "checkpoint_every": 50,
//     "task": {"kind": "hovering", "weights": {"k2": 0.2}, "episode_cap": 256, ...},
//     "model": {"mass": 1.0, ...},
//     "train": {"lr": 0.01, "horizon": 96, "hidden": [64, 64], ...},
//     "ablation": {"use_zero_step": true, "use_entropy": true, "use_state_replay": true}
//   }
//
// docs/config.md lists every key.
namespace abpt {

enum class Scale { kDesk, kPaper };

std::string_view scale_name(Scale scale);
Scale parse_scale(std::string_view name);

struct RunConfig {
  TrainConfig train;
  Scale scale = Scale::kDesk;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "runs";
  int checkpoint_every = 0;  // iterations between checkpoints; 0 keeps only the final one
};

// Bad configuration: `field` is a dotted key path ("train.lr") or empty, and
// `line` is the 1-based line in the source text when known (0 otherwise).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message, int line = 0);
  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_;
};

// Hyperparameters for one (algorithm, task) pair. Paper scale follows the
// published tables; desk scale overlays 16 envs, 2x64 networks and 200k
// steps, and shortens only BPTT's horizon (to 64).
RunConfig default_config(Algorithm algo, TaskKind task, Scale scale, bool use_entropy = true);

// Explicit values from the command line; unset fields defer to the file.
struct CliOverrides {
  std::optional<Algorithm> algo;
  std::optional<TaskKind> task;
  std::optional<Scale> scale;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

// CLI > file > default. `file_text` may be empty (no config file).
RunConfig resolve_config(const std::string& file_text, const CliOverrides& cli);
RunConfig load_config_file(const std::string& path, const CliOverrides& cli);

// Full resolved config, every key present; parse(to_json(c)) == c.
nlohmann::ordered_json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

// Also throws ConfigError when the resolved values fail TrainConfig::validate.
void validate_config(const RunConfig& config);

// FNV-1a 64 over the canonical JSON dump of the resolved config, as 16 hex digits.
std::string config_hash(const RunConfig& config);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace abpt
