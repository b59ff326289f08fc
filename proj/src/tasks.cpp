#include "abpt/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace abpt {

using ad::Var;

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kHovering: return "hovering";
    case TaskKind::kTracking: return "tracking";
    case TaskKind::kLanding: return "landing";
    case TaskKind::kRacing: return "racing";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  if (name == "hovering") return TaskKind::kHovering;
  if (name == "tracking") return TaskKind::kTracking;
  if (name == "landing") return TaskKind::kLanding;
  if (name == "racing") return TaskKind::kRacing;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

TaskSpec TaskSpec::defaults(TaskKind kind) {
  TaskSpec t;
  t.kind = kind;
  switch (kind) {
    case TaskKind::kHovering:
      break;
    case TaskKind::kTracking:
      t.init_lo = {1.5, -0.5, 1.0};
      t.init_hi = {2.5, 0.5, 2.0};
      break;
    case TaskKind::kLanding:
      t.weights = {.c = 0.0, .k1 = 1.0, .k2 = 1.0, .k3 = 10.0, .k4 = 0.0, .k5 = 0.0};
      t.crash_penalty = 200.0;
      t.target_position = {0.0, 0.0, 0.0};
      t.init_lo = {-1.5, -1.5, 1.0};
      t.init_hi = {1.5, 1.5, 2.0};
      break;
    case TaskKind::kRacing: {
      t.episode_cap = 512;
      t.init_lo = {1.5, -2.0, 1.0};
      t.init_hi = {2.5, -1.0, 2.0};
      const double r = 2.0;
      for (int i = 0; i < 4; ++i) {
        const double a = std::numbers::pi / 2.0 * i;
        Gate g;
        g.center = {r * std::cos(a), r * std::sin(a), 1.5};
        g.normal = {-std::sin(a), std::cos(a), 0.0};
        t.gates.push_back(g);
      }
      break;
    }
  }
  return t;
}

void TaskSpec::validate(int horizon) const {
  const auto& w = weights;
  for (double k : {w.c, w.k1, w.k2, w.k3, w.k4, w.k5})
    if (k < 0.0) throw std::invalid_argument("task: reward weights must be non-negative");
  if (crash_penalty < 0.0) throw std::invalid_argument("task: crash_penalty must be non-negative");
  if (episode_cap < horizon)
    throw std::invalid_argument("task: episode_cap (" + std::to_string(episode_cap) + ") must be >= horizon (" +
                                std::to_string(horizon) + ")");
  if (kind == TaskKind::kRacing && gates.empty()) throw std::invalid_argument("task: racing needs at least one gate");
  for (const Gate& g : gates) {
    const double n = std::hypot(g.normal[0], g.normal[1], g.normal[2]);
    if (std::abs(n - 1.0) > 1e-9 || std::abs(g.normal[2]) > 1e-9)
      throw std::invalid_argument("task: gate normals must be horizontal unit vectors");
  }
  for (int i = 0; i < 3; ++i)
    if (init_lo[i] > init_hi[i]) throw std::invalid_argument("task: init_lo must not exceed init_hi");
  if (!(control_dt > 0.0)) throw std::invalid_argument("task: control_dt must be positive");
  if (kind == TaskKind::kTracking && !(circle_radius > 0.0))
    throw std::invalid_argument("task: circle_radius must be positive");
  if (lookahead_waypoints < 1) throw std::invalid_argument("task: lookahead_waypoints must be >= 1");
}

int TaskSpec::obs_dim() const {
  switch (kind) {
    case TaskKind::kHovering:
    case TaskKind::kLanding: return kStateDim + 3;
    case TaskKind::kTracking: return kStateDim + 3 * lookahead_waypoints;
    case TaskKind::kRacing: return kStateDim + 6;
  }
  return kStateDim;
}

std::array<double, 3> TaskSpec::waypoint(int index) const {
  const double angle = circle_phase + circle_speed / circle_radius * control_dt * index;
  return {circle_center[0] + circle_radius * std::cos(angle), circle_center[1] + circle_radius * std::sin(angle),
          circle_center[2]};
}

namespace {

Var position(Var state) { return ad::slice(state, kPos, kPos + 3); }

Tensor broadcast_row(const std::array<double, 3>& v) { return Tensor::from_rows({{v[0], v[1], v[2]}}); }

Var maybe_detach(Var term, bool detached) { return detached ? ad::detach(term) : term; }

// c - k1 |p - target| - k2 |q - q_hat| - k3 |v| - k4 |omega|, with per-row targets.
Var dense_reward(const TaskSpec& task, Var state, Var target) {
  ad::Tape& tape = *state.tape();
  const RewardWeights& w = task.weights;
  const DetachedTerms& d = task.detached;
  const int rows = state.rows();

  Var q = ad::slice(state, kQuat, kQuat + 4);
  const auto& qh = task.target_quat;
  Tensor sign(rows, 1, 1.0);
  for (int r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (int c = 0; c < 4; ++c) dot += q.value()(r, c) * qh[static_cast<std::size_t>(c)];
    if (dot < 0.0) sign(r, 0) = -1.0;
  }
  Var q_aligned = q * tape.constant(std::move(sign));
  Var q_target = tape.constant(Tensor::from_rows({{qh[0], qh[1], qh[2], qh[3]}}));

  Var pos_term = maybe_detach(w.k1 * ad::row_norm(position(state) - target), d.position);
  Var att_term = maybe_detach(w.k2 * ad::row_norm(q_aligned - q_target), d.attitude);
  Var vel_term = maybe_detach(w.k3 * ad::row_norm(ad::slice(state, kVel, kVel + 3)), d.velocity);
  Var rate_term = maybe_detach(w.k4 * ad::row_norm(ad::slice(state, kOmega, kOmega + 3)), d.rate);
  return w.c - (pos_term + att_term + vel_term + rate_term);
}

Tensor waypoint_rows(const TaskSpec& task, std::span<const EnvProgress> progress, int offset) {
  Tensor t(static_cast<int>(progress.size()), 3);
  for (std::size_t i = 0; i < progress.size(); ++i) {
    const auto wp = task.waypoint(progress[i].target_index + offset);
    for (int c = 0; c < 3; ++c) t(static_cast<int>(i), c) = wp[static_cast<std::size_t>(c)];
  }
  return t;
}

Tensor gate_rows(const TaskSpec& task, std::span<const EnvProgress> progress, int offset) {
  Tensor t(static_cast<int>(progress.size()), 3);
  const int n = static_cast<int>(task.gates.size());
  for (std::size_t i = 0; i < progress.size(); ++i) {
    const Gate& g = task.gates[static_cast<std::size_t>((progress[i].target_index + offset) % n)];
    for (int c = 0; c < 3; ++c) t(static_cast<int>(i), c) = g.center[static_cast<std::size_t>(c)];
  }
  return t;
}

void check_progress(Var state, std::span<const EnvProgress> progress) {
  if (static_cast<int>(progress.size()) != state.rows())
    throw std::invalid_argument("task: progress size does not match batch size");
}

std::array<double, 3> row_position(const Tensor& t, int r) { return {t(r, kPos), t(r, kPos + 1), t(r, kPos + 2)}; }

}  // namespace

Var observe(const TaskSpec& task, Var state, std::span<const EnvProgress> progress) {
  check_progress(state, progress);
  ad::Tape& tape = *state.tape();
  Var p = position(state);
  switch (task.kind) {
    case TaskKind::kHovering:
    case TaskKind::kLanding:
      return ad::concat({state, tape.constant(broadcast_row(task.target_position)) - p});
    case TaskKind::kTracking: {
      std::vector<Var> parts{state};
      for (int k = 1; k <= task.lookahead_waypoints; ++k)
        parts.push_back(tape.constant(waypoint_rows(task, progress, k)) - p);
      return ad::concat(parts);
    }
    case TaskKind::kRacing:
      return ad::concat({state, tape.constant(gate_rows(task, progress, 0)) - p,
                         tape.constant(gate_rows(task, progress, 1)) - p});
  }
  throw std::logic_error("observe: unhandled task kind");
}

Var reward_hovering(const TaskSpec& task, Var state) {
  return dense_reward(task, state, state.tape()->constant(broadcast_row(task.target_position)));
}

Var reward_tracking(const TaskSpec& task, Var state, std::span<const EnvProgress> progress) {
  check_progress(state, progress);
  return dense_reward(task, state, state.tape()->constant(waypoint_rows(task, progress, 0)));
}

Var reward_landing(const TaskSpec& task, Var state, std::span<const std::uint8_t> success) {
  if (static_cast<int>(success.size()) != state.rows())
    throw std::invalid_argument("reward_landing: success flags do not match batch size");
  ad::Tape& tape = *state.tape();
  const RewardWeights& w = task.weights;
  const auto& pad = task.target_position;
  auto f_plus_var = [](Var x) { return x / (x + 1.0); };

  Var xy = ad::slice(state, kPos, kPos + 2);
  Var xy_err = ad::row_norm(xy - tape.constant(Tensor::from_rows({{pad[0], pad[1]}})));
  Var vz_err = ad::row_norm(ad::col(state, kVel + 2) - task.landing_vz_target);
  Var xy_term = maybe_detach(w.k1 * f_plus_var(xy_err), task.detached.position);
  Var vz_term = maybe_detach(w.k2 * f_plus_var(vz_err), task.detached.velocity);
  Var r = task.landing_sign == LandingSign::kPaper ? vz_term - xy_term : -(xy_term + vz_term);

  Tensor bonus(state.rows(), 1);
  for (std::size_t i = 0; i < success.size(); ++i) bonus(static_cast<int>(i), 0) = success[i] ? w.k3 : 0.0;
  return r + ad::detach(tape.constant(std::move(bonus)));
}

Var reward_racing(const TaskSpec& task, Var state, std::span<const EnvProgress> progress,
                  std::span<const std::uint8_t> passed) {
  check_progress(state, progress);
  if (passed.size() != progress.size()) throw std::invalid_argument("reward_racing: pass flags do not match batch size");
  ad::Tape& tape = *state.tape();
  Var dense = dense_reward(task, state, tape.constant(gate_rows(task, progress, 0)));
  Tensor bonus(state.rows(), 1);
  for (std::size_t i = 0; i < passed.size(); ++i) bonus(static_cast<int>(i), 0) = passed[i] ? task.weights.k5 : 0.0;
  return dense + ad::detach(tape.constant(std::move(bonus)));
}

bool crosses_gate(const Gate& gate, const std::array<double, 3>& a, const std::array<double, 3>& b) {
  auto dot = [](const std::array<double, 3>& x, const std::array<double, 3>& y) {
    return x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
  };
  const std::array<double, 3> da{a[0] - gate.center[0], a[1] - gate.center[1], a[2] - gate.center[2]};
  const std::array<double, 3> db{b[0] - gate.center[0], b[1] - gate.center[1], b[2] - gate.center[2]};
  const double sa = dot(da, gate.normal);
  const double sb = dot(db, gate.normal);
  if (!(sa < 0.0 && sb >= 0.0)) return false;
  const double t = sa / (sa - sb);
  const std::array<double, 3> hit{da[0] + t * (db[0] - da[0]), da[1] + t * (db[1] - da[1]), da[2] + t * (db[2] - da[2])};
  // lateral = z x normal
  const std::array<double, 3> lateral{-gate.normal[1], gate.normal[0], 0.0};
  return std::abs(dot(hit, lateral)) <= gate.half_width && std::abs(hit[2]) <= gate.half_height;
}

Termination done_and_success(const TaskSpec& task, const Tensor& prev, const Tensor& next,
                             std::span<const EnvProgress> progress) {
  const int rows = next.rows();
  if (static_cast<int>(progress.size()) != rows || prev.rows() != rows)
    throw std::invalid_argument("done_and_success: batch sizes disagree");
  Termination t{std::vector<std::uint8_t>(static_cast<std::size_t>(rows), 0),
                std::vector<std::uint8_t>(static_cast<std::size_t>(rows), 0),
                std::vector<std::uint8_t>(static_cast<std::size_t>(rows), 0)};
  for (int r = 0; r < rows; ++r) {
    const auto p = row_position(next, r);
    const double dist = std::hypot(p[0], p[1], p[2]);
    bool crash = !(dist <= task.bound_radius);
    for (double x : next.row(r)) crash = crash || !std::isfinite(x);
    bool success = false;
    bool terminal_success = false;
    switch (task.kind) {
      case TaskKind::kHovering:
      case TaskKind::kTracking:
        crash = crash || p[2] < 0.0;
        break;
      case TaskKind::kLanding:
        if (p[2] <= task.touchdown_altitude) {
          const double dx = p[0] - task.target_position[0];
          const double dy = p[1] - task.target_position[1];
          const double speed = std::hypot(next(r, kVel), next(r, kVel + 1), next(r, kVel + 2));
          success = std::hypot(dx, dy) <= task.pad_radius && speed <= task.touchdown_speed;
          terminal_success = success;
        }
        // Without a ground model a missed touchdown would keep flying below
        // the pad, where the critic has never been trained.
        crash = crash || (!success && p[2] < 0.0);
        break;
      case TaskKind::kRacing: {
        crash = crash || p[2] < 0.0;
        const auto& gates = task.gates;
        const Gate& g = gates[static_cast<std::size_t>(progress[static_cast<std::size_t>(r)].target_index) % gates.size()];
        success = crosses_gate(g, row_position(prev, r), p);
        break;
      }
    }
    const bool capped = progress[static_cast<std::size_t>(r)].steps >= task.episode_cap;
    t.done[static_cast<std::size_t>(r)] = crash || capped || terminal_success;
    t.success[static_cast<std::size_t>(r)] = success;
    t.crash[static_cast<std::size_t>(r)] = crash;
  }
  return t;
}

Transition transition(const TaskSpec& task, Var prev, Var next, std::vector<EnvProgress>& progress) {
  check_progress(next, progress);
  for (EnvProgress& p : progress) {
    ++p.steps;
    if (task.kind == TaskKind::kTracking) ++p.target_index;
  }
  Termination term = done_and_success(task, prev.value(), next.value(), progress);
  Var reward;
  switch (task.kind) {
    case TaskKind::kHovering: reward = reward_hovering(task, next); break;
    case TaskKind::kTracking: reward = reward_tracking(task, next, progress); break;
    case TaskKind::kLanding: reward = reward_landing(task, next, term.success); break;
    case TaskKind::kRacing: {
      reward = reward_racing(task, next, progress, term.success);
      const int n = static_cast<int>(task.gates.size());
      for (std::size_t i = 0; i < progress.size(); ++i) {
        if (term.success[i]) {
          progress[i].target_index = (progress[i].target_index + 1) % n;
          ++progress[i].gates_passed;
        }
      }
      break;
    }
  }
  if (task.crash_penalty != 0.0 && std::any_of(term.crash.begin(), term.crash.end(), [](std::uint8_t c) { return c != 0; })) {
    Tensor pen(reward.rows(), 1);
    for (std::size_t i = 0; i < term.crash.size(); ++i)
      if (term.crash[i]) pen(static_cast<int>(i), 0) = -task.crash_penalty;
    reward = reward + ad::detach(reward.tape()->constant(std::move(pen)));
  }
  return {reward, std::move(term.done), std::move(term.success), std::move(term.crash)};
}

std::vector<QuadState> sample_initial_states(const TaskSpec& task, int n, std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("sample_initial_states: n must be >= 1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double max_tilt = task.init_max_tilt_deg * std::numbers::pi / 180.0;
  std::vector<QuadState> out(static_cast<std::size_t>(n));
  for (QuadState& s : out) {
    for (int i = 0; i < 3; ++i) s.p[i] = task.init_lo[i] + (task.init_hi[i] - task.init_lo[i]) * unit(rng);
    const double heading = 2.0 * std::numbers::pi * unit(rng);
    const double tilt = max_tilt * unit(rng);
    s.q = {std::cos(tilt / 2.0), std::sin(tilt / 2.0) * std::cos(heading), std::sin(tilt / 2.0) * std::sin(heading), 0.0};
    std::array<double, 3> dir{normal(rng), normal(rng), normal(rng)};
    const double norm = std::hypot(dir[0], dir[1], dir[2]);
    const double speed = task.init_max_speed * unit(rng);
    for (int i = 0; i < 3; ++i) s.v[i] = norm > 0.0 ? speed * dir[i] / norm : 0.0;
    s.omega = {0.0, 0.0, 0.0};
  }
  return out;
}

}  // namespace abpt
