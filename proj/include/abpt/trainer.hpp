#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abpt/dynamics.hpp"
#include "abpt/nets.hpp"
#include "abpt/rollout.hpp"
#include "abpt/tasks.hpp"

namespace abpt {

enum class Algorithm { kAbpt, kShac, kBptt };

std::string_view algorithm_name(Algorithm algo);
Algorithm parse_algorithm(std::string_view name);

// Components that can be removed from ABPT one at a time.
struct Ablation {
  bool use_zero_step = true;
  bool use_entropy = true;
  bool use_state_replay = true;
  bool operator==(const Ablation&) const = default;
};

struct TrainConfig {
  Algorithm algo = Algorithm::kAbpt;
  TaskSpec task = TaskSpec::defaults(TaskKind::kHovering);
  QuadModel model;

  int num_envs = 16;
  int horizon = 32;
  long total_steps = 200000;
  std::vector<int> hidden{64, 64};

  double lr = 0.01;
  double critic_lr = 0.01;
  bool lr_decay = false;
  double gamma = 0.99;
  double lambda = 0.95;
  double tau = 0.005;
  int critic_steps = 10;
  double weight_decay = 1e-5;
  double grad_clip = 1.0;
  long buffer_capacity = 1000000;
  double p_fresh = 0.2;
  double init_log_std = -1.0;  // initial bias of the actor's log-std head

  double init_kappa = 0.2;
  double kappa_lr = 0.005;
  double target_entropy = -4.0;

  Ablation ablation;

  int eval_every = 10;  // iterations between evaluations
  int eval_envs = 16;
  std::uint64_t eval_seed = 7;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  // Flags actually in force: SHAC and BPTT run without any ABPT component.
  Ablation effective_ablation() const;
  bool uses_critic() const { return algo != Algorithm::kBptt; }
  long steps_per_iteration() const { return static_cast<long>(num_envs) * horizon; }
};

// Linear decay from lr to 0.1 lr over total_steps when enabled.
double learning_rate_schedule(const TrainConfig& config, long step);

// Ring buffer of visited states used only to initialize episodes.
class StateReplayBuffer {
 public:
  struct Entry {
    QuadState state;
    EnvProgress progress;
  };

  explicit StateReplayBuffer(std::size_t capacity);

  // Throws std::invalid_argument for a state that violates QuadState invariants.
  void push(const QuadState& state, const EnvProgress& progress = {});
  // Uniform with replacement; throws std::logic_error when empty.
  Entry sample(std::mt19937_64& rng) const;
  std::vector<Entry> sample(int n, std::mt19937_64& rng) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  const Entry& at(std::size_t i) const { return entries_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::vector<Entry> entries_;
};

struct EvalResult {
  double mean_reward = 0.0;           // undiscounted episode reward
  double success_rate = 0.0;          // task-defined, see evaluate_policy
  double mean_final_pos_error = 0.0;  // distance to the task target at episode end
  double mean_gates = 0.0;            // racing only
};

// Maps (state values, observation values) to actions in (-1, 1).
using PolicyFn = std::function<Tensor(const Tensor& states, const Tensor& obs)>;

// Runs one episode per initial state until it ends or hits the episode cap.
// Success: hovering and tracking, final position error below 0.15 m and 0.3 m
// without a crash; landing, touchdown on the pad; racing, mean gates passed.
EvalResult evaluate_policy(const PolicyFn& policy, const TaskSpec& task, const QuadModel& model,
                           std::span<const QuadState> initial);
// Deterministic actor tanh(mean) from eval_envs seeded initial states.
EvalResult evaluate(const Mlp& actor, const TaskSpec& task, const QuadModel& model, int episodes,
                    std::uint64_t seed);

struct IterationRecord {
  long iter = 0;
  long steps = 0;
  double wall_s = 0.0;
  double eval_reward = 0.0;
  double eval_success = 0.0;
  double actor_obj = 0.0;
  double critic_loss = 0.0;
  double kappa = 0.0;
  double grad_norm = 0.0;
  bool evaluated = false;  // eval columns were refreshed this iteration
  double eval_pos_error = 0.0;
};

struct TrainLog {
  std::vector<IterationRecord> records;
  long actor_updates = 0;
  long critic_updates = 0;
  long target_computations = 0;
  int nonfinite_events = 0;
  bool aborted = false;
  std::string abort_reason;
};

using IterationCallback = std::function<void(const IterationRecord&, const ActorCriticParams&)>;

class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  // Starts from the given networks instead of a seeded initialization.
  Trainer(TrainConfig config, ActorCriticParams init);

  // Trains until total_steps; the callback sees every iteration after its update.
  TrainLog run(const IterationCallback& callback = {});

  const TrainConfig& config() const { return config_; }
  const ActorCriticParams& params() const { return params_; }
  const StateReplayBuffer& buffer() const { return buffer_; }
  // Fraction of episode initializations drawn from the buffer so far.
  double buffer_init_fraction() const;

 private:
  std::pair<QuadState, EnvProgress> initial_state();
  void reset_envs();
  IterationRecord iterate(TrainLog& log);
  EvalResult evaluate_now() const;

  TrainConfig config_;
  ActorCriticParams params_;
  StateReplayBuffer buffer_;
  std::mt19937_64 noise_rng_;
  std::mt19937_64 init_rng_;
  double lr_scale_ = 1.0;
  long steps_ = 0;
  long iter_ = 0;
  long inits_ = 0;
  long buffer_inits_ = 0;
  std::vector<QuadState> env_states_;
  std::vector<EnvProgress> env_progress_;
};

// Builds the initial networks exactly as Trainer(config) does.
ActorCriticParams initial_params(const TrainConfig& config);

TrainLog train(const TrainConfig& config, const IterationCallback& callback = {});

}  // namespace abpt
