#include "abpt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "abpt/returns.hpp"

namespace abpt {

using ad::Var;

std::string_view algorithm_name(Algorithm algo) {
  switch (algo) {
    case Algorithm::kAbpt: return "abpt";
    case Algorithm::kShac: return "shac";
    case Algorithm::kBptt: return "bptt";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "abpt") return Algorithm::kAbpt;
  if (name == "shac") return Algorithm::kShac;
  if (name == "bptt") return Algorithm::kBptt;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) + "' (expected abpt, shac or bptt)");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw std::invalid_argument(std::string(field) + ": " + what);
  };
  need(num_envs >= 1, "num_envs", "must be >= 1");
  need(horizon >= 1, "horizon", "must be >= 1");
  need(total_steps >= 0, "total_steps", "must be >= 0");
  need(!hidden.empty(), "hidden", "needs at least one layer");
  for (int h : hidden) need(h >= 1, "hidden", "layer sizes must be >= 1");
  need(lr > 0.0 && std::isfinite(lr), "lr", "must be positive");
  need(critic_lr > 0.0 && std::isfinite(critic_lr), "critic_lr", "must be positive");
  need(gamma >= 0.0 && gamma <= 1.0, "gamma", "must be in [0, 1]");
  need(lambda >= 0.0 && lambda <= 1.0, "lambda", "must be in [0, 1]");
  need(tau >= 0.0 && tau <= 1.0, "tau", "must be in [0, 1]");
  need(critic_steps >= 1, "critic_steps", "must be >= 1");
  need(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  need(grad_clip >= 0.0, "grad_clip", "must be >= 0 (0 disables clipping)");
  need(buffer_capacity >= 1, "buffer_capacity", "must be >= 1");
  need(p_fresh >= 0.0 && p_fresh <= 1.0, "p_fresh", "must be in [0, 1]");
  need(init_log_std >= kLogStdMin && init_log_std <= kLogStdMax, "init_log_std", "outside the log-std clamp range");
  need(init_kappa > 0.0, "init_kappa", "must be positive");
  need(kappa_lr >= 0.0, "kappa_lr", "must be >= 0");
  need(eval_every >= 1, "eval_every", "must be >= 1");
  need(eval_envs >= 1, "eval_envs", "must be >= 1");
  model.validate();
  task.validate(horizon);
}

Ablation TrainConfig::effective_ablation() const {
  if (algo == Algorithm::kAbpt) return ablation;
  return {false, false, false};
}

double learning_rate_schedule(const TrainConfig& config, long step) {
  if (step < 0) throw std::invalid_argument("learning_rate_schedule: step must be >= 0");
  if (!config.lr_decay || config.total_steps <= 0) return config.lr;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(config.total_steps));
  return config.lr * (1.0 - 0.9 * frac);
}

// ---- replay buffer ----

StateReplayBuffer::StateReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("StateReplayBuffer: capacity must be >= 1");
}

void StateReplayBuffer::push(const QuadState& state, const EnvProgress& progress) {
  if (!state.valid(1e-6)) throw std::invalid_argument("StateReplayBuffer: refusing an invalid state");
  if (entries_.size() < capacity_) {
    entries_.push_back({state, progress});
  } else {
    entries_[cursor_] = {state, progress};
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

StateReplayBuffer::Entry StateReplayBuffer::sample(std::mt19937_64& rng) const {
  if (entries_.empty()) throw std::logic_error("StateReplayBuffer: sample from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
  return entries_[pick(rng)];
}

std::vector<StateReplayBuffer::Entry> StateReplayBuffer::sample(int n, std::mt19937_64& rng) const {
  std::vector<Entry> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) out.push_back(sample(rng));
  return out;
}

// ---- evaluation ----

namespace {

std::array<double, 3> target_of(const TaskSpec& task, const EnvProgress& progress) {
  switch (task.kind) {
    case TaskKind::kTracking: return task.waypoint(progress.target_index);
    case TaskKind::kRacing: return task.gates[static_cast<std::size_t>(progress.target_index) % task.gates.size()].center;
    default: return task.target_position;
  }
}

double distance_to(const std::array<double, 3>& a, std::span<const double> state_row) {
  return std::hypot(state_row[kPos] - a[0], state_row[kPos + 1] - a[1], state_row[kPos + 2] - a[2]);
}

}  // namespace

EvalResult evaluate_policy(const PolicyFn& policy, const TaskSpec& task, const QuadModel& model,
                           std::span<const QuadState> initial) {
  const int n = static_cast<int>(initial.size());
  if (n == 0) throw std::invalid_argument("evaluate_policy: no initial states");
  Tensor state = pack_states(initial);
  const Tensor parked = state;
  std::vector<EnvProgress> progress(static_cast<std::size_t>(n));
  std::vector<double> total(static_cast<std::size_t>(n), 0.0);
  std::vector<double> final_err(static_cast<std::size_t>(n), 0.0);
  std::vector<std::uint8_t> active(static_cast<std::size_t>(n), 1);
  std::vector<std::uint8_t> succeeded(static_cast<std::size_t>(n), 0);
  std::vector<std::uint8_t> crashed(static_cast<std::size_t>(n), 0);

  for (int k = 0; k < task.episode_cap; ++k) {
    if (std::none_of(active.begin(), active.end(), [](std::uint8_t a) { return a != 0; })) break;
    ad::Tape tape;
    Var s = tape.constant(state);
    Var obs = observe(task, s, progress);
    Tensor action = policy(state, obs.value());
    Var next = step(s, tape.constant(std::move(action)), model);
    std::vector<EnvProgress> before = progress;
    Transition tr = transition(task, s, next, progress);
    Tensor next_values = next.value();
    for (int i = 0; i < n; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      if (!active[ii]) {
        // Finished episodes idle at a safe state so the batch stays finite.
        progress[ii] = before[ii];
        std::copy(parked.row(i).begin(), parked.row(i).end(), next_values.row(i).begin());
        continue;
      }
      total[ii] += tr.reward.value()(i, 0);
      final_err[ii] = distance_to(target_of(task, progress[ii]), next_values.row(i));
      if (tr.done[ii]) {
        active[ii] = 0;
        succeeded[ii] = tr.success[ii];
        crashed[ii] = !tr.success[ii] && progress[ii].steps < task.episode_cap;
        std::copy(parked.row(i).begin(), parked.row(i).end(), next_values.row(i).begin());
      }
    }
    state = std::move(next_values);
  }

  EvalResult r;
  for (int i = 0; i < n; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    r.mean_reward += total[ii] / n;
    r.mean_final_pos_error += final_err[ii] / n;
    r.mean_gates += static_cast<double>(progress[ii].gates_passed) / n;
    double ok = 0.0;
    switch (task.kind) {
      case TaskKind::kHovering: ok = !crashed[ii] && final_err[ii] < 0.15; break;
      case TaskKind::kTracking: ok = !crashed[ii] && final_err[ii] < 0.3; break;
      case TaskKind::kLanding: ok = succeeded[ii]; break;
      case TaskKind::kRacing: ok = progress[ii].gates_passed; break;
    }
    r.success_rate += ok / n;
  }
  return r;
}

EvalResult evaluate(const Mlp& actor, const TaskSpec& task, const QuadModel& model, int episodes,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<QuadState> init = sample_initial_states(task, episodes, rng);
  PolicyFn policy = [&actor](const Tensor&, const Tensor& obs) { return actor_mean_action(actor, obs); };
  return evaluate_policy(policy, task, model, init);
}

// ---- trainer ----

ActorCriticParams initial_params(const TrainConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int obs = config.task.obs_dim();

  std::vector<int> actor_sizes{obs};
  actor_sizes.insert(actor_sizes.end(), config.hidden.begin(), config.hidden.end());
  actor_sizes.push_back(2 * kActionDim);
  std::vector<int> critic_sizes{obs + kActionDim};
  critic_sizes.insert(critic_sizes.end(), config.hidden.begin(), config.hidden.end());
  critic_sizes.push_back(1);

  ActorCriticParams p;
  p.actor = Mlp::create(actor_sizes, rng);
  Tensor& head_bias = p.actor.params.back();
  for (int c = kActionDim; c < 2 * kActionDim; ++c) head_bias(0, c) = config.init_log_std;
  if (config.uses_critic()) {
    p.critic = Mlp::create(critic_sizes, rng, std::sqrt(2.0));
    p.target_critic = p.critic;
  }
  p.temperature.log_kappa = std::log(config.init_kappa);
  p.temperature.lr = config.kappa_lr;
  p.temperature.target_entropy = config.target_entropy;
  p.actor_opt.weight_decay = config.weight_decay;
  p.critic_opt.weight_decay = config.weight_decay;
  return p;
}

Trainer::Trainer(TrainConfig config) : Trainer(config, initial_params(config)) {}

Trainer::Trainer(TrainConfig config, ActorCriticParams init)
    : config_(std::move(config)),
      params_(std::move(init)),
      buffer_(static_cast<std::size_t>(std::max<long>(1, config_.buffer_capacity))) {
  config_.validate();
  if (config_.uses_critic() != params_.critic.has_value())
    throw std::invalid_argument("Trainer: critic presence does not match the algorithm");
  if (params_.actor.input_dim() != config_.task.obs_dim() || params_.actor.output_dim() != 2 * kActionDim)
    throw std::invalid_argument("Trainer: actor shape does not match the task");
  // Distinct streams so that rollout noise does not depend on how many
  // initial states were drawn.
  std::seed_seq noise_seq{config_.seed, std::uint64_t{0x6e6f697365}};
  std::seed_seq init_seq{config_.seed, std::uint64_t{0x696e6974}};
  noise_rng_.seed(noise_seq);
  init_rng_.seed(init_seq);
  reset_envs();
}

double Trainer::buffer_init_fraction() const {
  return inits_ == 0 ? 0.0 : static_cast<double>(buffer_inits_) / static_cast<double>(inits_);
}

std::pair<QuadState, EnvProgress> Trainer::initial_state() {
  ++inits_;
  const bool replay = config_.effective_ablation().use_state_replay;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (replay && !buffer_.empty() && unit(init_rng_) >= config_.p_fresh) {
    ++buffer_inits_;
    StateReplayBuffer::Entry e = buffer_.sample(init_rng_);
    EnvProgress p;
    p.target_index = e.progress.target_index;
    return {e.state, p};
  }
  return {sample_initial_states(config_.task, 1, init_rng_).front(), EnvProgress{}};
}

void Trainer::reset_envs() {
  env_states_.clear();
  env_progress_.clear();
  for (int i = 0; i < config_.num_envs; ++i) {
    auto [s, p] = initial_state();
    env_states_.push_back(s);
    env_progress_.push_back(p);
  }
}

EvalResult Trainer::evaluate_now() const {
  return evaluate(params_.actor, config_.task, config_.model, config_.eval_envs, config_.eval_seed);
}

IterationRecord Trainer::iterate(TrainLog& log) {
  const Ablation abl = config_.effective_ablation();
  const double lr = learning_rate_schedule(config_, steps_) * lr_scale_;
  const double critic_lr = lr * config_.critic_lr / config_.lr;
  const double kappa = abl.use_entropy ? params_.temperature.kappa() : 0.0;
  const int n = config_.horizon;
  const int b = config_.num_envs;

  // Every window starts from a fresh minibatch of initial states; without
  // state replay the environments carry over, cut from the previous tape.
  if (abl.use_state_replay) reset_envs();

  IterationRecord rec;
  rec.kappa = kappa;

  ad::Tape tape;
  BoundMlp actor = bind(tape, params_.actor, true);
  std::optional<BoundMlp> target;
  if (params_.target_critic) target = bind(tape, *params_.target_critic, false);

  RolloutSpec spec{&config_.task, &config_.model, n, config_.gamma};
  std::vector<EnvProgress> progress = env_progress_;
  ResetFn reset = [this](int) { return initial_state(); };

  bool finite = true;
  std::string failure;
  RolloutBatch batch;
  Var objective;
  try {
    batch = rollout(actor, tape.constant(pack_states(env_states_)), progress, spec, noise_rng_, reset);
    switch (config_.algo) {
      case Algorithm::kBptt: objective = bptt_objective(batch); break;
      case Algorithm::kShac: {
        TapeValueFn q = [&](Var obs, Var action, Var) { return critic_q(*target, obs, action); };
        objective = shac_objective(batch, q);
        break;
      }
      case Algorithm::kAbpt: {
        TapeValueFn v = [&](Var obs, Var action, Var log_prob) {
          Var q = critic_q(*target, obs, action);
          return kappa != 0.0 ? q - kappa * log_prob : q;
        };
        objective = abpt_objective(batch, v, abl.use_zero_step);
        break;
      }
    }
    rec.actor_obj = objective.value().item();
    finite = std::isfinite(rec.actor_obj);
    if (!finite) failure = "non-finite actor objective";
  } catch (const std::domain_error& e) {
    finite = false;
    failure = e.what();
  }

  ParamList grads;
  if (finite) {
    tape.backward(objective);
    grads = gradients(actor);
    for (Tensor& g : grads)
      for (double& x : g.data()) x = -x;  // ascent on J as descent on -J
    finite = all_finite(grads);
    if (!finite) failure = "non-finite actor gradient";
  }

  if (!finite) {
    ++log.nonfinite_events;
    if (log.nonfinite_events >= 2) {
      log.aborted = true;
      log.abort_reason = "iteration " + std::to_string(iter_) + ": " + failure + " (second occurrence)";
    } else {
      lr_scale_ *= 0.5;
    }
    reset_envs();
    steps_ += config_.steps_per_iteration();
    rec.steps = steps_;
    rec.actor_obj = std::nan("");
    return rec;
  }

  rec.grad_norm = clip_global_norm(grads, config_.grad_clip);
  params_.actor_opt.step(params_.actor.params, grads, lr);
  ++log.actor_updates;

  if (config_.uses_critic()) {
    // Targets from the frozen target critic and the updated actor, computed once.
    Tensor obs_all(b * (n + 1), batch.obs.front().cols());
    Tensor act_all(b * n, kActionDim);
    for (int k = 0; k <= n; ++k) {
      const Tensor& o = batch.obs[static_cast<std::size_t>(k)].value();
      for (int i = 0; i < b; ++i) {
        std::copy(o.row(i).begin(), o.row(i).end(), obs_all.row(k * b + i).begin());
        if (k < n) {
          const Tensor& a = batch.actions[static_cast<std::size_t>(k)].value();
          std::copy(a.row(i).begin(), a.row(i).end(), act_all.row(k * b + i).begin());
        }
      }
    }
    ReturnData data;
    data.gamma = config_.gamma;
    data.rewards = Tensor(b, n);
    data.done = batch.done;
    data.values = Tensor(b, n + 1);
    {
      ad::Tape vt;
      BoundMlp vcritic = bind(vt, *params_.target_critic, false);
      BoundMlp vactor = bind(vt, params_.actor, false);
      Tensor eps = sample_noise(b * (n + 1), kActionDim, noise_rng_);
      Var v = state_value(vcritic, vactor, kappa, vt.constant(obs_all), std::span<const Tensor>(&eps, 1));
      for (int k = 0; k <= n; ++k)
        for (int i = 0; i < b; ++i) data.values(i, k) = v.value()(k * b + i, 0);
    }
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < b; ++i) data.rewards(i, k) = batch.rewards[static_cast<std::size_t>(k)].value()(i, 0);
    Tensor targets_bn = td_lambda_targets(data, config_.lambda);
    ++log.target_computations;

    Tensor obs_visited(b * n, obs_all.cols());
    std::copy(obs_all.data().begin(), obs_all.data().begin() + static_cast<long>(obs_visited.size()),
              obs_visited.data().begin());
    Tensor targets(b * n, 1);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < b; ++i) targets(k * b + i, 0) = targets_bn(i, k);

    for (int c = 0; c < config_.critic_steps; ++c) {
      ad::Tape ct;
      BoundMlp critic = bind(ct, *params_.critic, true);
      Var loss = critic_loss(critic, obs_visited, act_all, targets);
      ct.backward(loss);
      ParamList cg = gradients(critic);
      if (!all_finite(cg)) break;
      if (c == 0) rec.critic_loss = loss.value().item();
      params_.critic_opt.step(params_.critic->params, cg, critic_lr);
      soft_update(params_.target_critic->params, params_.critic->params, config_.tau);
      ++log.critic_updates;
    }
  }

  if (abl.use_entropy) {
    double mean_logp = 0.0;
    for (int k = 0; k < n; ++k) mean_logp += ad::mean(batch.log_probs[static_cast<std::size_t>(k)]).value().item();
    params_.temperature.update(mean_logp / n);
  }

  if (abl.use_state_replay) {
    for (int k = 1; k <= n; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const Tensor& s = batch.states[kk].value();
      for (int i = 0; i < b; ++i) {
        QuadState q = unpack_state(s, i);
        if (q.valid(1e-6)) buffer_.push(q, batch.progress[kk][static_cast<std::size_t>(i)]);
      }
    }
  }

  env_states_ = unpack_states(batch.states.back().value());
  env_progress_ = progress;
  ++params_.step;
  steps_ += config_.steps_per_iteration();
  rec.steps = steps_;
  return rec;
}

TrainLog Trainer::run(const IterationCallback& callback) {
  TrainLog log;
  if (config_.total_steps <= 0) return log;
  using clock = std::chrono::steady_clock;
  double wall = 0.0;
  EvalResult last;
  const long per_iter = config_.steps_per_iteration();
  while (steps_ < config_.total_steps) {
    const auto t0 = clock::now();
    IterationRecord rec = iterate(log);
    wall += std::chrono::duration<double>(clock::now() - t0).count();
    rec.iter = iter_++;
    rec.wall_s = wall;
    const bool last_iter = steps_ >= config_.total_steps || log.aborted;
    if (rec.iter % config_.eval_every == 0 || last_iter || steps_ + per_iter > config_.total_steps) {
      try {
        last = evaluate_now();
      } catch (const std::domain_error&) {
        // A non-finite policy cannot be rolled out; record the failure and keep going.
        last = EvalResult{std::nan(""), 0.0, std::nan(""), 0.0};
      }
      rec.evaluated = true;
    }
    rec.eval_reward = last.mean_reward;
    rec.eval_success = config_.task.kind == TaskKind::kRacing ? last.mean_gates : last.success_rate;
    rec.eval_pos_error = last.mean_final_pos_error;
    log.records.push_back(rec);
    if (callback) callback(rec, params_);
    if (log.aborted) break;
  }
  return log;
}

TrainLog train(const TrainConfig& config, const IterationCallback& callback) {
  Trainer t(config);
  return t.run(callback);
}

}  // namespace abpt
