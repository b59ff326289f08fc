#pragma once

#include <functional>
#include <vector>

#include "abpt/autodiff.hpp"
#include "abpt/nets.hpp"
#include "abpt/rollout.hpp"

// Return estimators and actor/critic objectives over a RolloutBatch.
//
// Done handling inside a window: the first done at step j ends the running
// sub-trajectory, cutting both reward accumulation and the bootstrap; step
// j+1 starts a fresh sub-trajectory that is accounted for independently.
namespace abpt {

// Plain values for the target computations, which carry no gradient.
struct ReturnData {
  double gamma = 0.99;
  Tensor rewards;  // (B x N)
  Tensor done;     // (B x N)
  Tensor values;   // (B x N+1), target-critic value of the state at step k

  int num_envs() const { return rewards.rows(); }
  int horizon() const { return rewards.cols(); }
  void validate() const;
};

// G_t^k per environment: k discounted rewards from t plus (1-d) gamma^k V(s_{t+k}).
// Throws std::out_of_range unless 0 <= t, 1 <= k, t + k <= N.
std::vector<double> k_step_return(const ReturnData& data, int t, int k);

// Exponentially weighted mixture of k-step returns for every (env, t); (B x N).
Tensor td_lambda_targets(const ReturnData& data, double lambda);

// Value estimate used by the actor objectives, evaluated on the live tape for
// the action sampled at that state.
using TapeValueFn = std::function<ad::Var(ad::Var obs, ad::Var action, ad::Var log_prob)>;

// Discount coefficient of reward k for each env, restarting after dones.
Tensor reward_coefficients(const Tensor& done, double gamma);

// J^N per environment (B x 1): discounted window rewards plus the bootstrap
// value at the final state for environments whose last sub-trajectory is alive.
ad::Var n_step_objective(const RolloutBatch& batch, const TapeValueFn& terminal_value);
// J^0 per environment (B x 1): value of each sub-trajectory's initial state.
ad::Var zero_step_objective(const RolloutBatch& batch, const TapeValueFn& value);
// (1 / 2B) sum_i (J^N_i + J^0_i). Without the zero-step term: (1 / B) sum_i J^N_i.
ad::Var abpt_objective(const RolloutBatch& batch, const TapeValueFn& value, bool use_zero_step = true);
// (1 / B) sum_i J^N_i with a plain Q terminal value.
ad::Var shac_objective(const RolloutBatch& batch, const TapeValueFn& q_value);
// (1 / B) sum_i of discounted window rewards, no bootstrap.
ad::Var bptt_objective(const RolloutBatch& batch);

// Mean squared error between Q(s, a_visited) and the fixed targets; rows of
// obs, actions and targets line up.
ad::Var critic_loss(const BoundMlp& critic, const Tensor& obs, const Tensor& actions, const Tensor& targets);

}  // namespace abpt
