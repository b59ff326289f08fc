#include "abpt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "abpt/dynamics.hpp"
#include "abpt/nets.hpp"
#include "abpt/returns.hpp"
#include "abpt/rollout.hpp"
#include "abpt/tasks.hpp"

namespace abpt {

using ad::Tape;
using ad::Var;

bool GradCheckReport::ok() const {
  return std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.ok(); });
}

double GradCheckReport::max_error() const {
  double m = 0.0;
  for (const CheckLine& l : lines) m = std::max(m, l.max_rel_error);
  return m;
}

const std::vector<std::string>& grad_check_targets() {
  static const std::vector<std::string> targets{"autodiff-prims", "dynamics", "rewards", "actor", "critic", "objectives"};
  return targets;
}

namespace {

constexpr double kStep = 1e-6;

Tensor uniform(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (double& x : t.data()) x = u(rng);
  return t;
}

// sum(v * W) for a fixed pseudo-random W, so every output entry matters.
Var weighted(Var v, std::uint64_t salt = 0) {
  std::mt19937_64 rng(0x5eed + salt);
  return ad::sum(v * v.tape()->constant(uniform(v.rows(), v.cols(), -1.0, 1.0, rng)));
}

CheckLine fd_line(const std::string& name, const ad::ScalarFn& f, const Tensor& x0, double tol) {
  return {name, ad::grad_check(f, x0, kStep).max_rel_error, tol};
}

// Central differences over every parameter of a network.
CheckLine param_line(const std::string& name, const Mlp& net, const std::function<Var(Tape&, const BoundMlp&)>& f,
                     double tol) {
  Tape tape;
  BoundMlp bound = bind(tape, net, true);
  Var out = f(tape, bound);
  tape.backward(out);
  const ParamList analytic = gradients(bound);

  auto value_at = [&](const Mlp& m) {
    Tape t;
    BoundMlp b = bind(t, m, false);
    const double v = f(t, b).value().item();
    if (!std::isfinite(v)) throw std::domain_error(name + ": non-finite value");
    return v;
  };

  double worst = 0.0;
  Mlp probe = net;
  for (std::size_t p = 0; p < net.params.size(); ++p) {
    for (std::size_t i = 0; i < net.params[p].size(); ++i) {
      const double x = net.params[p][i];
      probe.params[p][i] = x + kStep;
      const double up = value_at(probe);
      probe.params[p][i] = x - kStep;
      const double down = value_at(probe);
      probe.params[p][i] = x;
      const double numeric = (up - down) / (2.0 * kStep);
      worst = std::max(worst, std::abs(analytic[p][i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return {name, worst, tol};
}

// Entries drawn from [lo, hi] but kept at least `gap` away from `avoid`.
Tensor away_from(Tensor t, std::initializer_list<double> avoid, double gap) {
  for (double& x : t.data())
    for (double a : avoid)
      if (std::abs(x - a) < gap) x = a + (x >= a ? gap : -gap);
  return t;
}

std::vector<CheckLine> primitives(std::mt19937_64& rng) {
  std::vector<CheckLine> out;
  const double tol = kPrimitiveTolerance;
  const Tensor a = uniform(3, 4, -1.5, 1.5, rng);
  const Tensor b = uniform(3, 4, -1.5, 1.5, rng);
  const Tensor pos = uniform(3, 4, 0.5, 2.0, rng);
  const Tensor col3 = uniform(3, 1, -1.0, 1.0, rng);
  const Tensor row4 = uniform(1, 4, -1.0, 1.0, rng);
  const Tensor m43 = uniform(4, 3, -1.0, 1.0, rng);
  const Tensor bias3 = uniform(1, 3, -1.0, 1.0, rng);

  auto c = [](Tape& t, const Tensor& v) { return t.constant(v); };

  out.push_back(fd_line("add", [&](Tape& t, Var x) { return weighted(x + c(t, b)); }, a, tol));
  out.push_back(fd_line("add (column broadcast)", [&](Tape& t, Var x) { return weighted(c(t, a) + x); }, col3, tol));
  out.push_back(fd_line("add (row broadcast)", [&](Tape& t, Var x) { return weighted(x + c(t, a)); }, row4, tol));
  out.push_back(fd_line("add (scalar broadcast)", [&](Tape& t, Var x) { return weighted(c(t, a) + x); },
                        Tensor::scalar(0.3), tol));
  out.push_back(fd_line("sub", [&](Tape& t, Var x) { return weighted(c(t, b) - x); }, a, tol));
  out.push_back(fd_line("mul", [&](Tape& t, Var x) { return weighted(x * c(t, b)); }, a, tol));
  out.push_back(fd_line("mul (column broadcast)", [&](Tape& t, Var x) { return weighted(c(t, a) * x); }, col3, tol));
  out.push_back(fd_line("div (numerator)", [&](Tape& t, Var x) { return weighted(x / c(t, pos)); }, a, tol));
  out.push_back(fd_line("div (denominator)", [&](Tape& t, Var x) { return weighted(c(t, a) / x); }, pos, tol));
  out.push_back(fd_line("scalar mul", [&](Tape&, Var x) { return weighted(-2.5 * x); }, a, tol));
  out.push_back(fd_line("add scalar", [&](Tape&, Var x) { return weighted(x + 0.7); }, a, tol));
  out.push_back(fd_line("neg", [&](Tape&, Var x) { return weighted(-x); }, a, tol));
  out.push_back(fd_line("matmul (left)", [&](Tape& t, Var x) { return weighted(ad::matmul(x, c(t, m43))); }, a, tol));
  out.push_back(fd_line("matmul (right)", [&](Tape& t, Var x) { return weighted(ad::matmul(c(t, a), x)); }, m43, tol));
  out.push_back(fd_line("affine (input)",
                        [&](Tape& t, Var x) { return weighted(ad::affine(x, c(t, m43), c(t, bias3))); }, a, tol));
  out.push_back(fd_line("affine (weight)",
                        [&](Tape& t, Var x) { return weighted(ad::affine(c(t, a), x, c(t, bias3))); }, m43, tol));
  out.push_back(fd_line("affine (bias)",
                        [&](Tape& t, Var x) { return weighted(ad::affine(c(t, a), c(t, m43), x)); }, bias3, tol));
  out.push_back(fd_line("tanh", [&](Tape&, Var x) { return weighted(ad::tanh(x)); }, a, tol));
  out.push_back(fd_line("exp", [&](Tape&, Var x) { return weighted(ad::exp(x)); }, a, tol));
  out.push_back(fd_line("log", [&](Tape&, Var x) { return weighted(ad::log(x)); }, pos, tol));
  out.push_back(fd_line("sqrt", [&](Tape&, Var x) { return weighted(ad::sqrt(x)); }, pos, tol));
  out.push_back(fd_line("square", [&](Tape&, Var x) { return weighted(ad::square(x)); }, a, tol));
  out.push_back(fd_line("sum", [&](Tape&, Var x) { return 1.7 * ad::sum(x); }, a, tol));
  out.push_back(fd_line("row sum", [&](Tape&, Var x) { return weighted(ad::row_sum(x)); }, a, tol));
  out.push_back(fd_line("mean", [&](Tape&, Var x) { return -0.9 * ad::mean(x); }, a, tol));
  out.push_back(fd_line("row norm", [&](Tape&, Var x) { return weighted(ad::row_norm(x)); }, a, tol));
  out.push_back(fd_line("concat", [&](Tape& t, Var x) { return weighted(ad::concat({c(t, b), x, x})); }, a, tol));
  out.push_back(fd_line("slice", [&](Tape&, Var x) { return weighted(ad::slice(x, 1, 3)); }, a, tol));
  out.push_back(fd_line("col", [&](Tape&, Var x) { return weighted(ad::col(x, 2)); }, a, tol));
  out.push_back(fd_line("clamp", [&](Tape&, Var x) { return weighted(ad::clamp(x, -1.0, 1.0)); },
                        away_from(a, {-1.0, 1.0}, 1e-3), tol));
  const Tensor eps = uniform(3, 4, -2.0, 2.0, rng);
  out.push_back(fd_line("gauss reparameterize (mean)",
                        [&](Tape& t, Var x) { return weighted(ad::gauss_reparameterize(x, c(t, pos), eps)); }, a, tol));
  out.push_back(fd_line("gauss reparameterize (std)",
                        [&](Tape& t, Var x) { return weighted(ad::gauss_reparameterize(c(t, a), x, eps)); }, pos, tol));
  Tensor mask(3, 4);
  for (std::size_t i = 0; i < mask.size(); i += 2) mask[i] = 1.0;
  out.push_back(fd_line("where",
                        [&](Tape& t, Var x) { return weighted(ad::where(mask, ad::square(x), x * c(t, b))); }, a, tol));

  // A detached path keeps its value and contributes exactly zero gradient.
  {
    const Tensor g = ad::gradient([&](Tape&, Var x) { return weighted(ad::detach(x) * x); }, a);
    double worst = 0.0;
    std::mt19937_64 wrng(0x5eed);
    const Tensor w = uniform(3, 4, -1.0, 1.0, wrng);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - w[i] * a[i]));
    out.push_back({"detach", worst, tol});
  }
  return out;
}

std::vector<QuadState> some_states(int n, std::mt19937_64& rng) {
  TaskSpec t = TaskSpec::defaults(TaskKind::kHovering);
  t.init_max_speed = 1.0;
  t.init_max_tilt_deg = 25.0;
  std::vector<QuadState> s = sample_initial_states(t, n, rng);
  std::uniform_real_distribution<double> w(-2.0, 2.0);
  for (QuadState& q : s)
    for (double& x : q.omega) x = w(rng);
  return s;
}

std::vector<CheckLine> dynamics(std::mt19937_64& rng) {
  std::vector<CheckLine> out;
  const QuadModel model;
  const Tensor s0 = pack_states(some_states(4, rng));
  const Tensor u = uniform(4, kActionDim, -0.6, 0.6, rng);

  out.push_back(fd_line("step wrt state",
                        [&](Tape& t, Var x) { return weighted(step(x, t.constant(u), model)); }, s0,
                        kPrimitiveTolerance));
  out.push_back(fd_line("step wrt action",
                        [&](Tape& t, Var x) { return weighted(step(t.constant(s0), x, model)); }, u,
                        kPrimitiveTolerance));

  const int n = 8;
  const Tensor us = uniform(4, n * kActionDim, -0.6, 0.6, rng);
  auto window = [&](Var s, Var actions) {
    Var total = weighted(s, 0);
    for (int k = 0; k < n; ++k) {
      s = step(s, ad::slice(actions, k * kActionDim, (k + 1) * kActionDim), model);
      total = total + weighted(s, static_cast<std::uint64_t>(k + 1));
    }
    return total;
  };
  out.push_back(fd_line("8-step window wrt initial state",
                        [&](Tape& t, Var x) { return window(x, t.constant(us)); }, s0, kWindowTolerance));
  out.push_back(fd_line("8-step window wrt actions",
                        [&](Tape& t, Var x) { return window(t.constant(s0), x); }, us, kWindowTolerance));
  return out;
}

std::vector<CheckLine> rewards(std::mt19937_64& rng) {
  std::vector<CheckLine> out;
  const double tol = kPrimitiveTolerance;
  const Tensor s = pack_states(some_states(4, rng));

  const TaskSpec hover = TaskSpec::defaults(TaskKind::kHovering);
  out.push_back(fd_line("hovering reward", [&](Tape&, Var x) { return weighted(reward_hovering(hover, x)); }, s, tol));

  const TaskSpec track = TaskSpec::defaults(TaskKind::kTracking);
  std::vector<EnvProgress> prog(4);
  for (int i = 0; i < 4; ++i) prog[static_cast<std::size_t>(i)].steps = prog[static_cast<std::size_t>(i)].target_index = 7 * i;
  out.push_back(fd_line("tracking reward",
                        [&](Tape&, Var x) { return weighted(reward_tracking(track, x, prog)); }, s, tol));

  const TaskSpec land = TaskSpec::defaults(TaskKind::kLanding);
  const std::vector<std::uint8_t> success{0, 1, 0, 1};
  out.push_back(fd_line("landing reward",
                        [&](Tape&, Var x) { return weighted(reward_landing(land, x, success)); }, s, tol));
  TaskSpec land_paper = land;
  land_paper.landing_sign = LandingSign::kPaper;
  out.push_back(fd_line("landing reward (printed sign)",
                        [&](Tape&, Var x) { return weighted(reward_landing(land_paper, x, success)); }, s, tol));

  const TaskSpec race = TaskSpec::defaults(TaskKind::kRacing);
  std::vector<EnvProgress> gates(4);
  for (int i = 0; i < 4; ++i) gates[static_cast<std::size_t>(i)].target_index = i;
  out.push_back(fd_line("racing reward",
                        [&](Tape&, Var x) { return weighted(reward_racing(race, x, gates, success)); }, s, tol));

  // Full transition: step, then reward at the next state.
  const QuadModel model;
  const Tensor u = uniform(4, kActionDim, -0.5, 0.5, rng);
  out.push_back(fd_line("hovering transition wrt action",
                        [&](Tape& t, Var x) {
                          Var prev = t.constant(s);
                          std::vector<EnvProgress> p(4);
                          return weighted(transition(hover, prev, step(prev, x, model), p).reward);
                        },
                        u, tol));
  return out;
}

Mlp small_net(std::vector<int> sizes, std::mt19937_64& rng) { return Mlp::create(std::move(sizes), rng, std::sqrt(2.0), false); }

std::vector<CheckLine> actor(std::mt19937_64& rng) {
  std::vector<CheckLine> out;
  const int obs_dim = 16;
  const Mlp net = small_net({obs_dim, 16, 16, 2 * kActionDim}, rng);
  const Tensor obs = uniform(4, obs_dim, -1.0, 1.0, rng);
  const Tensor eps = uniform(4, kActionDim, -2.0, 2.0, rng);

  auto head = [&](const BoundMlp& b, Var o) {
    ActorOutput a = actor_forward(b, o, eps);
    return weighted(a.action, 1) + ad::sum(a.log_prob) + weighted(a.mean, 2) + weighted(a.std, 3);
  };
  out.push_back(param_line("actor wrt parameters", net,
                           [&](Tape& t, const BoundMlp& b) { return head(b, t.constant(obs)); }, kPrimitiveTolerance));
  out.push_back(fd_line("actor wrt observation",
                        [&](Tape& t, Var x) { return head(bind(t, net, false), x); }, obs, kPrimitiveTolerance));

  const Mlp critic = small_net({obs_dim + kActionDim, 16, 16, 1}, rng);
  const Tensor eps2 = uniform(4, kActionDim, -2.0, 2.0, rng);
  const std::vector<Tensor> samples{eps, eps2};
  out.push_back(param_line("state value wrt actor parameters", net,
                           [&](Tape& t, const BoundMlp& b) {
                             return ad::sum(state_value(bind(t, critic, false), b, 0.2, t.constant(obs), samples));
                           },
                           kPrimitiveTolerance));
  return out;
}

std::vector<CheckLine> critic(std::mt19937_64& rng) {
  std::vector<CheckLine> out;
  const int obs_dim = 16;
  const Mlp net = small_net({obs_dim + kActionDim, 16, 16, 1}, rng);
  const Tensor obs = uniform(6, obs_dim, -1.0, 1.0, rng);
  const Tensor act = uniform(6, kActionDim, -0.9, 0.9, rng);
  const Tensor targets = uniform(6, 1, -3.0, 3.0, rng);

  out.push_back(param_line("critic q wrt parameters", net,
                           [&](Tape& t, const BoundMlp& b) {
                             return weighted(critic_q(b, t.constant(obs), t.constant(act)));
                           },
                           kPrimitiveTolerance));
  out.push_back(fd_line("critic q wrt action",
                        [&](Tape& t, Var x) { return weighted(critic_q(bind(t, net, false), t.constant(obs), x)); },
                        act, kPrimitiveTolerance));
  out.push_back(fd_line("critic q wrt observation",
                        [&](Tape& t, Var x) { return weighted(critic_q(bind(t, net, false), x, t.constant(act))); },
                        obs, kPrimitiveTolerance));
  out.push_back(param_line("critic loss wrt parameters", net,
                           [&](Tape&, const BoundMlp& b) { return critic_loss(b, obs, act, targets); },
                           kPrimitiveTolerance));
  return out;
}

struct WindowSetup {
  TaskSpec task;
  QuadModel model;
  Mlp actor;
  Mlp critic;
  Tensor init;
  std::uint64_t noise_seed = 11;
  int horizon = 8;
};

WindowSetup make_window(TaskKind kind, std::mt19937_64& rng) {
  WindowSetup w;
  w.task = TaskSpec::defaults(kind);
  const int obs = w.task.obs_dim();
  w.actor = small_net({obs, 16, 16, 2 * kActionDim}, rng);
  for (int c = kActionDim; c < 2 * kActionDim; ++c) w.actor.params.back()(0, c) -= 1.0;
  w.critic = small_net({obs + kActionDim, 16, 16, 1}, rng);
  w.init = pack_states(sample_initial_states(w.task, 4, rng));
  return w;
}

RolloutBatch window_batch(const WindowSetup& w, const BoundMlp& actor, Tape& tape) {
  std::mt19937_64 noise(w.noise_seed);
  std::vector<EnvProgress> progress(static_cast<std::size_t>(w.init.rows()));
  RolloutSpec spec{&w.task, &w.model, w.horizon, 0.99};
  const QuadState restart = unpack_state(w.init, 0);
  ResetFn reset = [&](int) { return std::pair{restart, EnvProgress{}}; };
  return rollout(actor, tape.constant(w.init), progress, spec, noise, reset);
}

TapeValueFn soft_value(const BoundMlp& critic, double kappa) {
  return [&critic, kappa](Var obs, Var action, Var log_prob) { return critic_q(critic, obs, action) - kappa * log_prob; };
}

std::vector<CheckLine> objectives(std::mt19937_64& rng) {
  std::vector<CheckLine> out;
  const WindowSetup hover = make_window(TaskKind::kHovering, rng);
  const WindowSetup land = make_window(TaskKind::kLanding, rng);

  auto abpt = [](const WindowSetup& w, bool zero_step) {
    return [&w, zero_step](Tape& t, const BoundMlp& actor) {
      RolloutBatch b = window_batch(w, actor, t);
      BoundMlp q = bind(t, w.critic, false);
      return abpt_objective(b, soft_value(q, 0.2), zero_step);
    };
  };
  out.push_back(param_line("abpt objective, hovering window", hover.actor, abpt(hover, true), kWindowTolerance));
  out.push_back(param_line("abpt objective without zero-step, hovering window", hover.actor, abpt(hover, false),
                           kWindowTolerance));
  out.push_back(param_line("abpt objective, landing window", land.actor, abpt(land, true), kWindowTolerance));
  out.push_back(param_line("shac objective, hovering window", hover.actor,
                           [&](Tape& t, const BoundMlp& actor) {
                             RolloutBatch b = window_batch(hover, actor, t);
                             BoundMlp q = bind(t, hover.critic, false);
                             return shac_objective(b, [&](Var o, Var a, Var) { return critic_q(q, o, a); });
                           },
                           kWindowTolerance));
  out.push_back(param_line("bptt objective, hovering window", hover.actor,
                           [&](Tape& t, const BoundMlp& actor) { return bptt_objective(window_batch(hover, actor, t)); },
                           kWindowTolerance));

  // backward of the combined objective against the average of two separate passes.
  for (const WindowSetup* w : {&hover, &land}) {
    Tape t;
    BoundMlp a = bind(t, w->actor, true);
    BoundMlp q = bind(t, w->critic, false);
    RolloutBatch b = window_batch(*w, a, t);
    TapeValueFn v = soft_value(q, 0.2);
    Var full = abpt_objective(b, v, true);
    Var jn = ad::mean(n_step_objective(b, v));
    Var j0 = ad::mean(zero_step_objective(b, v));
    t.backward(full);
    const ParamList g = gradients(a);
    t.backward(jn);
    const ParamList gn = gradients(a);
    t.backward(j0);
    const ParamList g0 = gradients(a);
    double worst = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t i = 0; i < g[p].size(); ++i) {
        const double avg = 0.5 * (gn[p][i] + g0[p][i]);
        worst = std::max(worst, std::abs(g[p][i] - avg) / std::max(1.0, std::abs(avg)));
      }
    out.push_back({std::string("gradient identity: abpt = (J0 + JN) / 2, ") + std::string(task_name(w->task.kind)),
                   worst, kIdentityTolerance});
  }
  return out;
}

}  // namespace

GradCheckReport run_grad_check(std::string_view target, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradCheckReport r;
  r.target = std::string(target);
  if (target == "autodiff-prims") r.lines = primitives(rng);
  else if (target == "dynamics") r.lines = dynamics(rng);
  else if (target == "rewards") r.lines = rewards(rng);
  else if (target == "actor") r.lines = actor(rng);
  else if (target == "critic") r.lines = critic(rng);
  else if (target == "objectives") r.lines = objectives(rng);
  else throw std::invalid_argument("unknown grad-check target '" + std::string(target) + "'");
  return r;
}

}  // namespace abpt
