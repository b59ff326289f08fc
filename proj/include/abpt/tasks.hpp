#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abpt/autodiff.hpp"
#include "abpt/dynamics.hpp"

namespace abpt {

enum class TaskKind { kHovering, kTracking, kLanding, kRacing };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

// Sign of the vertical-speed term in the landing reward. kPaper keeps the
// "+k2 f+(|v_z - v_z_target|)" form as printed; kCorrected uses -k2.
enum class LandingSign { kPaper, kCorrected };

struct RewardWeights {
  double c = 1.0;
  double k1 = 1.0;
  double k2 = 0.2;
  double k3 = 0.1;
  double k4 = 0.1;
  double k5 = 10.0;
};

// Rectangular gate. `normal` points along the direction of passage and is
// horizontal; the rectangle spans +-half_width along up x normal and
// +-half_height along world z.
struct Gate {
  std::array<double, 3> center{0.0, 0.0, 0.0};
  std::array<double, 3> normal{1.0, 0.0, 0.0};
  double half_width = 0.5;
  double half_height = 0.5;
};

// Dense reward terms that can be cut out of the gradient graph. Values are
// unchanged; only backpropagation through them stops.
struct DetachedTerms {
  bool position = false;
  bool attitude = false;
  bool velocity = false;
  bool rate = false;
  bool any() const { return position || attitude || velocity || rate; }
};

struct TaskSpec {
  TaskKind kind = TaskKind::kHovering;
  RewardWeights weights;

  std::array<double, 3> target_position{0.0, 0.0, 1.5};  // hover target or landing pad
  std::array<double, 4> target_quat{1.0, 0.0, 0.0, 0.0};

  // Tracking: circle in the horizontal plane traversed counter-clockwise.
  std::array<double, 3> circle_center{0.0, 0.0, 1.5};
  double circle_radius = 2.0;
  double circle_speed = 1.0;
  double circle_phase = 0.0;
  int lookahead_waypoints = 10;

  // Landing.
  double landing_vz_target = -0.5;
  LandingSign landing_sign = LandingSign::kCorrected;
  double pad_radius = 0.5;
  double touchdown_altitude = 0.1;
  double touchdown_speed = 1.0;

  std::vector<Gate> gates;

  int episode_cap = 256;
  double control_dt = 0.02;  // waypoint spacing; kept equal to QuadModel::dt
  double bound_radius = 6.0;
  // Detached penalty on the step an episode crashes. Landing rewards are all
  // non-positive, so without it leaving the arena would end the losses early.
  double crash_penalty = 0.0;
  std::array<double, 3> init_lo{-1.0, -1.0, 0.5};
  std::array<double, 3> init_hi{1.0, 1.0, 2.5};
  double init_max_tilt_deg = 10.0;
  double init_max_speed = 0.5;

  DetachedTerms detached;

  static TaskSpec defaults(TaskKind kind);
  // Throws std::invalid_argument on violated invariants.
  void validate(int horizon) const;
  int obs_dim() const;

  std::array<double, 3> waypoint(int index) const;
};

// Per-environment episode progress: steps taken in the episode, and the
// waypoint index (tracking) or the index of the next gate to pass (racing).
struct EnvProgress {
  int steps = 0;
  int target_index = 0;
  int gates_passed = 0;
  bool operator==(const EnvProgress&) const = default;
};

inline double f_plus(double x) { return x / (1.0 + x); }

// (B x obs_dim). State features followed by task targets relative to p.
ad::Var observe(const TaskSpec& task, ad::Var state, std::span<const EnvProgress> progress);

// Per-environment rewards, (B x 1).
ad::Var reward_hovering(const TaskSpec& task, ad::Var state);
ad::Var reward_tracking(const TaskSpec& task, ad::Var state, std::span<const EnvProgress> progress);
ad::Var reward_landing(const TaskSpec& task, ad::Var state, std::span<const std::uint8_t> success);
ad::Var reward_racing(const TaskSpec& task, ad::Var state, std::span<const EnvProgress> progress,
                      std::span<const std::uint8_t> passed);

// Does segment a->b cross the gate plane from behind, inside the rectangle?
bool crosses_gate(const Gate& gate, const std::array<double, 3>& a, const std::array<double, 3>& b);

struct Termination {
  std::vector<std::uint8_t> done;
  std::vector<std::uint8_t> success;
  std::vector<std::uint8_t> crash;  // ended by leaving the arena or hitting the ground
};

// `prev`/`next` are (B x 13) values around one step; `progress` already counts
// the step. Racing success is the gate-crossing test on the current gate.
Termination done_and_success(const TaskSpec& task, const Tensor& prev, const Tensor& next,
                             std::span<const EnvProgress> progress);

struct Transition {
  ad::Var reward;
  std::vector<std::uint8_t> done;
  std::vector<std::uint8_t> success;
  std::vector<std::uint8_t> crash;
};

// Advances progress by one step, evaluates termination and reward for the
// transition prev -> next, then advances gate indices for passed gates.
Transition transition(const TaskSpec& task, ad::Var prev, ad::Var next, std::vector<EnvProgress>& progress);

std::vector<QuadState> sample_initial_states(const TaskSpec& task, int n, std::mt19937_64& rng);

}  // namespace abpt
