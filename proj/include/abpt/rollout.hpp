#pragma once

#include <functional>
#include <random>
#include <vector>

#include "abpt/autodiff.hpp"
#include "abpt/dynamics.hpp"
#include "abpt/nets.hpp"
#include "abpt/tasks.hpp"

namespace abpt {

// Differentiable record of one truncated window for B environments.
// Index k runs over steps; states/obs/actions/log_probs have N+1 entries, the
// last being the bootstrap sample at the window's final state.
struct RolloutBatch {
  int num_envs = 0;
  int horizon = 0;
  double gamma = 0.99;

  std::vector<ad::Var> states;     // (B x 13), post-reset state at step k
  std::vector<ad::Var> obs;        // (B x obs_dim)
  std::vector<ad::Var> actions;    // (B x 4)
  std::vector<ad::Var> log_probs;  // (B x 1)
  std::vector<ad::Var> rewards;    // N entries, (B x 1): reward of transition k
  std::vector<Tensor> noise;       // eps used at step k
  Tensor done;                     // (B x N), 1 where transition k ended the episode
  Tensor success;                  // (B x N)
  std::vector<std::vector<EnvProgress>> progress;  // N+1 snapshots matching states
};

// Supplies a replacement initial state for environment `env` after it ends.
using ResetFn = std::function<std::pair<QuadState, EnvProgress>(int env)>;

struct RolloutSpec {
  const TaskSpec* task = nullptr;
  const QuadModel* model = nullptr;
  int horizon = 1;
  double gamma = 0.99;
};

// observe -> sample action -> step -> reward -> done, N times, on init's tape.
// Episodes that end inside the window restart from reset(env); the restart
// state is a constant, so no gradient crosses the boundary. `progress` is
// updated in place to the state after the window.
RolloutBatch rollout(const BoundMlp& actor, ad::Var init_states, std::vector<EnvProgress>& progress,
                     const RolloutSpec& spec, std::mt19937_64& rng, const ResetFn& reset);

// Standard normal (rows x cols) noise.
Tensor sample_noise(int rows, int cols, std::mt19937_64& rng);

}  // namespace abpt
