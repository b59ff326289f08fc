#include "abpt/rollout.hpp"

#include <stdexcept>

namespace abpt {

using ad::Var;

Tensor sample_noise(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& x : t.data()) x = normal(rng);
  return t;
}

RolloutBatch rollout(const BoundMlp& actor, Var init_states, std::vector<EnvProgress>& progress,
                     const RolloutSpec& spec, std::mt19937_64& rng, const ResetFn& reset) {
  if (spec.task == nullptr || spec.model == nullptr) throw std::invalid_argument("rollout: task and model are required");
  if (spec.horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
  const int envs = init_states.rows();
  if (static_cast<int>(progress.size()) != envs) throw std::invalid_argument("rollout: progress size mismatch");
  const int act_dim = actor.sizes.back() / 2;
  ad::Tape& tape = *init_states.tape();

  RolloutBatch b;
  b.num_envs = envs;
  b.horizon = spec.horizon;
  b.gamma = spec.gamma;
  b.done = Tensor(envs, spec.horizon);
  b.success = Tensor(envs, spec.horizon);

  auto sample_action = [&](Var state) {
    Var obs = observe(*spec.task, state, progress);
    Tensor eps = sample_noise(envs, act_dim, rng);
    ActorOutput a = actor_forward(actor, obs, eps);
    b.states.push_back(state);
    b.obs.push_back(obs);
    b.actions.push_back(a.action);
    b.log_probs.push_back(a.log_prob);
    b.noise.push_back(std::move(eps));
    b.progress.push_back(progress);
    return a.action;
  };

  Var state = init_states;
  for (int k = 0; k < spec.horizon; ++k) {
    Var action = sample_action(state);
    Var next = step(state, action, *spec.model);
    Transition tr = transition(*spec.task, state, next, progress);
    b.rewards.push_back(tr.reward);

    bool any_done = false;
    for (int i = 0; i < envs; ++i) {
      b.done(i, k) = tr.done[static_cast<std::size_t>(i)];
      b.success(i, k) = tr.success[static_cast<std::size_t>(i)];
      any_done = any_done || tr.done[static_cast<std::size_t>(i)];
    }
    if (any_done) {
      if (!reset) throw std::logic_error("rollout: episode ended but no reset function was given");
      Tensor mask(envs, 1);
      Tensor fresh(envs, kStateDim);
      for (int i = 0; i < envs; ++i) {
        if (!tr.done[static_cast<std::size_t>(i)]) continue;
        auto [s, p] = reset(i);
        Tensor row = pack_states(std::span<const QuadState>(&s, 1));
        std::copy(row.data().begin(), row.data().end(), fresh.row(i).begin());
        progress[static_cast<std::size_t>(i)] = p;
        mask(i, 0) = 1.0;
      }
      next = ad::where(mask, tape.constant(std::move(fresh)), next);
    }
    state = next;
  }
  sample_action(state);
  return b;
}

}  // namespace abpt
