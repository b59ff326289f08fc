#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "abpt/tensor.hpp"

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every operation eagerly, in topological order. Values are
// row-major matrices; batched quantities carry one environment per row.
// Elementwise binary ops broadcast a (1x1), (r x 1) or (1 x c) operand
// against an (r x c) one.
//
// detach() produces a node whose value participates in the forward pass but
// whose backward contribution is zero; it models reward terms that cannot be
// differentiated.
namespace abpt::ad {

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScalarMul,
  kAddScalar,
  kNeg,
  kMatMul,
  kAffine,
  kTanh,
  kExp,
  kLog,
  kSqrt,
  kSquare,
  kSum,
  kRowSum,
  kMean,
  kRowNorm,
  kConcat,
  kSlice,
  kClamp,
  kGaussReparam,
  kWhere,
  kDetach,
};

std::string_view op_name(OpKind kind);

// Thrown when operand shapes are incompatible with the op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  const Tensor& value() const;
  const Tensor& grad() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  bool requires_grad() const;
  bool detached() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Non-tensor arguments of an op.
struct OpAttrs {
  double lo = 0.0;     // ScalarMul / AddScalar factor, Clamp lower bound
  double hi = 0.0;     // Clamp upper bound
  int begin = 0;       // Slice column range [begin, end)
  int end = 0;
  Tensor aux;          // GaussReparam noise, Where mask
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }
  Var parameter(Tensor value);

  // Appends one op; validates shapes and computes the forward value.
  Var record(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {});
  Var record(OpKind kind, std::initializer_list<Var> inputs, OpAttrs attrs = {}) {
    return record(kind, std::span<const Var>(inputs.begin(), inputs.size()), std::move(attrs));
  }

  // Reverse sweep from a 1x1 output. Gradients of every node are reset first,
  // so repeated calls give identical results.
  void backward(Var output);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool detached(Var v) const { return node(v).detached; }
  OpKind kind(Var v) const { return node(v).kind; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    OpAttrs attrs;
    bool requires_grad = false;
    bool detached = false;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void backward_node(const Node& n);

  std::vector<Node> nodes_;
};

// ---- op helpers; all forward to Tape::record ----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var matmul(Var a, Var b);
// x (m x k) * w (k x n) + b (1 x n)
Var affine(Var x, Var w, Var b);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sum(Var a);
Var row_sum(Var a);
Var mean(Var a);
Var row_norm(Var a);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(Var a, int begin, int end);
Var col(Var a, int c);
Var clamp(Var a, double lo, double hi);
// mu + sigma * eps, eps held constant.
Var gauss_reparameterize(Var mu, Var sigma, Tensor eps);
// mask != 0 ? a : b, elementwise with broadcasting; mask is constant.
Var where(const Tensor& mask, Var a, Var b);
Var detach(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, Var a) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, Var a) { return add_scalar(neg(a), s); }

// ---- finite-difference checking ----

// Builds a scalar from a single parameter node on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  int worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|). When `indices` is non-empty only those coordinates of x0 are
// probed. Throws std::domain_error if f is non-finite at any probe point.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x0, double step,
                           std::span<const int> indices = {});

// Analytic gradient of f at x0.
Tensor gradient(const ScalarFn& f, const Tensor& x0);

}  // namespace abpt::ad
