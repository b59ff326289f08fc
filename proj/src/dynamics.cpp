#include "abpt/dynamics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace abpt {

using ad::Var;

bool QuadState::valid(double quat_tol) const {
  double qn = 0.0;
  for (double x : q) qn += x * x;
  auto finite = [](const auto& arr) {
    for (double x : arr)
      if (!std::isfinite(x)) return false;
    return true;
  };
  return finite(p) && finite(q) && finite(v) && finite(omega) && std::abs(std::sqrt(qn) - 1.0) <= quat_tol;
}

Tensor pack_states(std::span<const QuadState> states) {
  Tensor out(static_cast<int>(states.size()), kStateDim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto row = out.row(static_cast<int>(i));
    const QuadState& s = states[i];
    std::copy(s.p.begin(), s.p.end(), row.begin() + kPos);
    std::copy(s.q.begin(), s.q.end(), row.begin() + kQuat);
    std::copy(s.v.begin(), s.v.end(), row.begin() + kVel);
    std::copy(s.omega.begin(), s.omega.end(), row.begin() + kOmega);
  }
  return out;
}

QuadState unpack_state(const Tensor& batch, int row) {
  if (batch.cols() != kStateDim) throw std::invalid_argument("unpack_state: expected 13 columns");
  QuadState s;
  auto r = batch.row(row);
  std::copy(r.begin() + kPos, r.begin() + kPos + 3, s.p.begin());
  std::copy(r.begin() + kQuat, r.begin() + kQuat + 4, s.q.begin());
  std::copy(r.begin() + kVel, r.begin() + kVel + 3, s.v.begin());
  std::copy(r.begin() + kOmega, r.begin() + kOmega + 3, s.omega.begin());
  return s;
}

std::vector<QuadState> unpack_states(const Tensor& batch) {
  std::vector<QuadState> out;
  out.reserve(static_cast<std::size_t>(batch.rows()));
  for (int r = 0; r < batch.rows(); ++r) out.push_back(unpack_state(batch, r));
  return out;
}

void QuadModel::validate() const {
  if (!(mass > 0.0)) throw std::invalid_argument("QuadModel: mass must be positive");
  for (double i : inertia)
    if (!(i > 0.0)) throw std::invalid_argument("QuadModel: inertia entries must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("QuadModel: dt must be positive");
  if (!(arm_length > 0.0)) throw std::invalid_argument("QuadModel: arm_length must be positive");
  if (!(max_thrust > mass * gravity / 2.0))
    throw std::invalid_argument("QuadModel: max_thrust must exceed mass*gravity/2");
  if (linear_drag < 0.0) throw std::invalid_argument("QuadModel: linear_drag must be non-negative");
}

double QuadModel::hover_command() const { return 2.0 * (mass * gravity / 4.0) / max_thrust - 1.0; }

Tensor QuadModel::mixer() const {
  const double a = arm_length / std::sqrt(2.0);
  const double x[4] = {a, -a, -a, a};
  const double y[4] = {a, a, -a, -a};
  const double spin[4] = {1.0, -1.0, 1.0, -1.0};
  Tensor m(4, 3);
  for (int i = 0; i < 4; ++i) {
    m(i, 0) = y[i];
    m(i, 1) = -x[i];
    m(i, 2) = torque_coeff * spin[i];
  }
  return m;
}

namespace {

Var cross(Var a, Var b) {
  Var ax = ad::col(a, 0), ay = ad::col(a, 1), az = ad::col(a, 2);
  Var bx = ad::col(b, 0), by = ad::col(b, 1), bz = ad::col(b, 2);
  return ad::concat({ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx});
}

void check_finite(const Tensor& t, const char* what) {
  for (int r = 0; r < t.rows(); ++r)
    for (double x : t.row(r))
      if (!std::isfinite(x))
        throw std::domain_error(std::string("step: non-finite ") + what + " at batch index " + std::to_string(r));
}

}  // namespace

Var step(Var state, Var action, const QuadModel& model) {
  if (state.cols() != kStateDim) throw ad::ShapeError("step: state must have 13 columns, got " + state.value().shape_string());
  if (action.cols() != kActionDim || action.rows() != state.rows())
    throw ad::ShapeError("step: action shape " + action.value().shape_string() + " does not match state " +
                         state.value().shape_string());
  check_finite(state.value(), "state");
  check_finite(action.value(), "action");

  ad::Tape& tape = *state.tape();
  const double dt = model.dt;

  Var p = ad::slice(state, kPos, kPos + 3);
  Var q = ad::slice(state, kQuat, kQuat + 4);
  Var v = ad::slice(state, kVel, kVel + 3);
  Var w = ad::slice(state, kOmega, kOmega + 3);

  Var thrust = (action + 1.0) * (0.5 * model.max_thrust);
  Var total = ad::row_sum(thrust);

  Var qw = ad::col(q, 0), qx = ad::col(q, 1), qy = ad::col(q, 2), qz = ad::col(q, 3);
  // Body z axis expressed in the world frame.
  Var body_z = ad::concat({2.0 * (qx * qz + qw * qy), 2.0 * (qy * qz - qw * qx),
                           1.0 - 2.0 * (ad::square(qx) + ad::square(qy))});
  Var gravity = tape.constant(Tensor::from_rows({{0.0, 0.0, -model.gravity}}));
  Var accel = body_z * (total * (1.0 / model.mass)) + gravity - model.linear_drag * v;
  Var v_next = v + dt * accel;
  Var p_next = p + dt * v_next;

  const auto& I = model.inertia;
  Var inertia = tape.constant(Tensor::from_rows({{I[0], I[1], I[2]}}));
  Var inv_inertia = tape.constant(Tensor::from_rows({{1.0 / I[0], 1.0 / I[1], 1.0 / I[2]}}));
  Var torque = ad::matmul(thrust, tape.constant(model.mixer()));
  Var w_dot = (torque - cross(w, w * inertia)) * inv_inertia;
  Var w_next = w + dt * w_dot;

  // q_dot = 0.5 * q (x) (0, omega_body)
  Var wx = ad::col(w_next, 0), wy = ad::col(w_next, 1), wz = ad::col(w_next, 2);
  Var q_dot = 0.5 * ad::concat({-(qx * wx + qy * wy + qz * wz), qw * wx + qy * wz - qz * wy,
                                qw * wy + qz * wx - qx * wz, qw * wz + qx * wy - qy * wx});
  Var q_raw = q + dt * q_dot;
  Var q_next = q_raw / ad::row_norm(q_raw);

  return ad::concat({p_next, q_next, v_next, w_next});
}

Tensor step_values(const Tensor& state, const Tensor& action, const QuadModel& model) {
  ad::Tape tape;
  return step(tape.constant(state), tape.constant(action), model).value();
}

}  // namespace abpt
