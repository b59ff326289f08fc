#pragma once

#include <array>
#include <span>
#include <vector>

#include "abpt/autodiff.hpp"
#include "abpt/tensor.hpp"

namespace abpt {

// Column layout of a batched quadrotor state: one environment per row,
// [p(3) | q(4, w x y z) | v(3) | omega(3)].
inline constexpr int kStateDim = 13;
inline constexpr int kActionDim = 4;
inline constexpr int kPos = 0;
inline constexpr int kQuat = 3;
inline constexpr int kVel = 7;
inline constexpr int kOmega = 10;

// Single-environment state in plain values, used by buffers and samplers.
struct QuadState {
  std::array<double, 3> p{0.0, 0.0, 0.0};
  std::array<double, 4> q{1.0, 0.0, 0.0, 0.0};
  std::array<double, 3> v{0.0, 0.0, 0.0};
  std::array<double, 3> omega{0.0, 0.0, 0.0};

  bool valid(double quat_tol = 1e-9) const;
  bool operator==(const QuadState&) const = default;
};

Tensor pack_states(std::span<const QuadState> states);
QuadState unpack_state(const Tensor& batch, int row);
std::vector<QuadState> unpack_states(const Tensor& batch);

// Rigid-body parameters. Rotors sit in an X layout at arm_length from the
// centre; rotors 0 and 2 spin counter to rotors 1 and 3.
struct QuadModel {
  double mass = 1.0;                                // kg
  std::array<double, 3> inertia{0.01, 0.01, 0.02};  // kg m^2, body diagonal
  double arm_length = 0.1;                          // m
  double max_thrust = 5.0;                          // N per rotor
  double torque_coeff = 0.016;                      // N m per N of thrust
  double gravity = 9.81;                            // m/s^2
  double dt = 0.02;                                 // s
  double linear_drag = 0.1;                         // 1/s

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;

  // Normalized command in (-1, 1) that gives each rotor mass*g/4.
  double hover_command() const;
  // Maps per-rotor thrust (N) to [tau_x, tau_y, tau_z]; 4x3.
  Tensor mixer() const;
};

// One semi-implicit Euler step for a batch. `state` is (B x 13), `action`
// (B x 4) with entries in (-1, 1); thrust_i = max_thrust * (u_i + 1) / 2.
// Throws std::domain_error naming the first batch row with a non-finite entry.
ad::Var step(ad::Var state, ad::Var action, const QuadModel& model);

// Plain-value version of step, for evaluation paths that need no gradient.
Tensor step_values(const Tensor& state, const Tensor& action, const QuadModel& model);

}  // namespace abpt
