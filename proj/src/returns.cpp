#include "abpt/returns.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace abpt {

using ad::Var;

void ReturnData::validate() const {
  const int b = rewards.rows();
  const int n = rewards.cols();
  if (b < 1 || n < 1) throw std::invalid_argument("ReturnData: empty batch");
  if (done.rows() != b || done.cols() != n)
    throw std::invalid_argument("ReturnData: done is " + done.shape_string() + ", expected " + shape_string(b, n));
  if (values.rows() != b || values.cols() != n + 1)
    throw std::invalid_argument("ReturnData: values is " + values.shape_string() + ", expected " +
                                shape_string(b, n + 1));
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("ReturnData: gamma must be in [0, 1]");
}

std::vector<double> k_step_return(const ReturnData& data, int t, int k) {
  data.validate();
  const int n = data.horizon();
  if (t < 0 || k < 1 || t + k > n)
    throw std::out_of_range("k_step_return: t=" + std::to_string(t) + ", k=" + std::to_string(k) +
                            " outside a window of " + std::to_string(n));
  std::vector<double> out(static_cast<std::size_t>(data.num_envs()));
  for (int i = 0; i < data.num_envs(); ++i) {
    double g = 0.0;
    double disc = 1.0;
    bool ended = false;
    for (int l = 0; l < k; ++l) {
      g += disc * data.rewards(i, t + l);
      disc *= data.gamma;
      if (data.done(i, t + l) != 0.0) {
        ended = true;
        break;
      }
    }
    if (!ended) g += disc * data.values(i, t + k);
    out[static_cast<std::size_t>(i)] = g;
  }
  return out;
}

Tensor td_lambda_targets(const ReturnData& data, double lambda) {
  data.validate();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("td_lambda_targets: lambda must be in [0, 1]");
  const int b = data.num_envs();
  const int n = data.horizon();
  Tensor out(b, n);
  for (int i = 0; i < b; ++i) {
    // Backward recursion of the weighted k-step sum:
    //   V~_t = r_t + gamma (1 - d_t) [(1 - lambda) V_{t+1} + lambda V~_{t+1}],  V~_N := V_N.
    double next = data.values(i, n);
    for (int t = n - 1; t >= 0; --t) {
      const double alive = data.done(i, t) != 0.0 ? 0.0 : 1.0;
      const double mix = (t == n - 1) ? data.values(i, n) : (1.0 - lambda) * data.values(i, t + 1) + lambda * next;
      next = data.rewards(i, t) + data.gamma * alive * mix;
      out(i, t) = next;
    }
  }
  return out;
}

Tensor reward_coefficients(const Tensor& done, double gamma) {
  Tensor coef(done.rows(), done.cols());
  for (int i = 0; i < done.rows(); ++i) {
    double disc = 1.0;
    for (int k = 0; k < done.cols(); ++k) {
      coef(i, k) = disc;
      disc = done(i, k) != 0.0 ? 1.0 : disc * gamma;
    }
  }
  return coef;
}

namespace {

void check_batch(const RolloutBatch& batch) {
  const auto n = static_cast<std::size_t>(batch.horizon);
  if (batch.horizon < 1 || batch.num_envs < 1) throw std::invalid_argument("RolloutBatch: empty batch");
  if (batch.rewards.size() != n || batch.obs.size() != n + 1 || batch.actions.size() != n + 1 ||
      batch.log_probs.size() != n + 1)
    throw std::invalid_argument("RolloutBatch: inconsistent sequence lengths");
  if (batch.done.rows() != batch.num_envs || batch.done.cols() != batch.horizon)
    throw std::invalid_argument("RolloutBatch: done is " + batch.done.shape_string());
}

Var value_at(const RolloutBatch& batch, const TapeValueFn& fn, int k) {
  const auto idx = static_cast<std::size_t>(k);
  Var v = fn(batch.obs[idx], batch.actions[idx], batch.log_probs[idx]);
  if (v.rows() != batch.num_envs || v.cols() != 1)
    throw ad::ShapeError("value function returned " + v.value().shape_string() + ", expected " +
                         shape_string(batch.num_envs, 1));
  return v;
}

// Discounted window rewards per environment, restarting at sub-trajectory starts.
Var discounted_rewards(const RolloutBatch& batch) {
  Var r = ad::concat(std::span<const Var>(batch.rewards));
  ad::Tape& tape = *r.tape();
  return ad::row_sum(r * tape.constant(reward_coefficients(batch.done, batch.gamma)));
}

}  // namespace

Var n_step_objective(const RolloutBatch& batch, const TapeValueFn& terminal_value) {
  check_batch(batch);
  const int b = batch.num_envs;
  const int n = batch.horizon;
  Var rewards = discounted_rewards(batch);
  ad::Tape& tape = *rewards.tape();

  Tensor boot(b, 1);
  bool any_alive = false;
  for (int i = 0; i < b; ++i) {
    if (batch.done(i, n - 1) != 0.0) continue;
    int start = 0;
    for (int k = 0; k < n - 1; ++k)
      if (batch.done(i, k) != 0.0) start = k + 1;
    boot(i, 0) = std::pow(batch.gamma, n - start);
    any_alive = true;
  }
  if (!any_alive) return rewards;
  return rewards + tape.constant(std::move(boot)) * value_at(batch, terminal_value, n);
}

Var zero_step_objective(const RolloutBatch& batch, const TapeValueFn& value) {
  check_batch(batch);
  const int b = batch.num_envs;
  Var total = value_at(batch, value, 0);
  ad::Tape& tape = *total.tape();
  for (int k = 1; k < batch.horizon; ++k) {
    Tensor mask(b, 1);
    bool any = false;
    for (int i = 0; i < b; ++i) {
      if (batch.done(i, k - 1) != 0.0) {
        mask(i, 0) = 1.0;
        any = true;
      }
    }
    if (any) total = total + tape.constant(std::move(mask)) * value_at(batch, value, k);
  }
  return total;
}

Var abpt_objective(const RolloutBatch& batch, const TapeValueFn& value, bool use_zero_step) {
  Var jn = n_step_objective(batch, value);
  if (!use_zero_step) return ad::mean(jn);
  Var j0 = zero_step_objective(batch, value);
  return 0.5 * ad::mean(jn + j0);
}

Var shac_objective(const RolloutBatch& batch, const TapeValueFn& q_value) {
  return ad::mean(n_step_objective(batch, q_value));
}

Var bptt_objective(const RolloutBatch& batch) {
  check_batch(batch);
  return ad::mean(discounted_rewards(batch));
}

Var critic_loss(const BoundMlp& critic, const Tensor& obs, const Tensor& actions, const Tensor& targets) {
  if (obs.rows() != actions.rows() || obs.rows() != targets.rows() || targets.cols() != 1)
    throw ad::ShapeError("critic_loss: obs " + obs.shape_string() + ", actions " + actions.shape_string() +
                         ", targets " + targets.shape_string());
  ad::Tape& tape = *critic.params.front().tape();
  Var q = critic_q(critic, tape.constant(obs), tape.constant(actions));
  return ad::mean(ad::square(q - tape.constant(targets)));
}

}  // namespace abpt
