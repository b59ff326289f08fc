#include "abpt/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "abpt/kernels.hpp"

namespace abpt::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScalarMul: return "scalar_mul";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kNeg: return "neg";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAffine: return "affine";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kMean: return "mean";
    case OpKind::kRowNorm: return "row_norm";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kClamp: return "clamp";
    case OpKind::kGaussReparam: return "gauss_reparameterize";
    case OpKind::kWhere: return "where";
    case OpKind::kDetach: return "detach";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(*this); }
const Tensor& Var::grad() const { return tape_->grad(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }
bool Var::detached() const { return tape_->detached(*this); }

namespace {

[[noreturn]] void shape_error(OpKind kind, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + a.shape_string() +
                   " and " + b.shape_string());
}

int broadcast_dim(OpKind kind, const Tensor& a, const Tensor& b, int da, int db) {
  if (da == db) return da;
  if (da == 1) return db;
  if (db == 1) return da;
  shape_error(kind, a, b);
}

struct Broadcast {
  int rows;
  int cols;
};

Broadcast broadcast_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  return {broadcast_dim(kind, a, b, a.rows(), b.rows()), broadcast_dim(kind, a, b, a.cols(), b.cols())};
}

// Flat index into t for output coordinate (r, c) under broadcasting.
inline std::size_t bidx(const Tensor& t, int r, int c) {
  return static_cast<std::size_t>(t.rows() == 1 ? 0 : r) * t.cols() + (t.cols() == 1 ? 0 : c);
}

template <typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, Broadcast s, F f) {
  Tensor out(s.rows, s.cols);
  if (a.same_shape(b) && a.rows() == s.rows && a.cols() == s.cols) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for (int r = 0; r < s.rows; ++r)
    for (int c = 0; c < s.cols; ++c) out(r, c) = f(a[bidx(a, r, c)], b[bidx(b, r, c)]);
  return out;
}

template <typename F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.tape() != this || v.id() < 0 || v.id() >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("Var does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id())];
}

Var Tape::push(Node n) {
  n.grad = Tensor(n.value.rows(), n.value.cols());
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  auto expect_arity = [&](std::size_t k) {
    if (inputs.size() != k)
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(k) +
                                  " inputs, got " + std::to_string(inputs.size()));
  };
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (const Var& v : inputs) in.push_back(&node(v).value);

  Node n;
  n.kind = kind;
  for (const Var& v : inputs) n.inputs.push_back(v.id());

  switch (kind) {
    case OpKind::kLeaf:
      throw std::invalid_argument("leaf nodes are created with constant() or parameter()");
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      expect_arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const Broadcast s = broadcast_shape(kind, a, b);
      if (kind == OpKind::kAdd) n.value = binary_map(a, b, s, [](double x, double y) { return x + y; });
      if (kind == OpKind::kSub) n.value = binary_map(a, b, s, [](double x, double y) { return x - y; });
      if (kind == OpKind::kMul) n.value = binary_map(a, b, s, [](double x, double y) { return x * y; });
      if (kind == OpKind::kDiv) n.value = binary_map(a, b, s, [](double x, double y) { return x / y; });
      break;
    }
    case OpKind::kScalarMul: {
      expect_arity(1);
      const double s = attrs.lo;
      n.value = unary_map(*in[0], [s](double x) { return s * x; });
      break;
    }
    case OpKind::kAddScalar: {
      expect_arity(1);
      const double s = attrs.lo;
      n.value = unary_map(*in[0], [s](double x) { return x + s; });
      break;
    }
    case OpKind::kNeg:
      expect_arity(1);
      n.value = unary_map(*in[0], [](double x) { return -x; });
      break;
    case OpKind::kMatMul: {
      expect_arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.cols() != b.rows()) shape_error(kind, a, b);
      n.value = Tensor(a.rows(), b.cols());
      kernels::parallel::gemm_nn({a.rows(), a.cols(), b.cols()}, a.data(), b.data(), n.value.data());
      break;
    }
    case OpKind::kAffine: {
      expect_arity(3);
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      const Tensor& b = *in[2];
      if (x.cols() != w.rows()) shape_error(kind, x, w);
      if (b.rows() != 1 || b.cols() != w.cols()) shape_error(kind, w, b);
      n.value = Tensor(x.rows(), w.cols());
      for (int r = 0; r < x.rows(); ++r) std::copy(b.data().begin(), b.data().end(), n.value.row(r).begin());
      kernels::parallel::gemm_nn({x.rows(), x.cols(), w.cols()}, x.data(), w.data(), n.value.data());
      break;
    }
    case OpKind::kTanh:
      expect_arity(1);
      n.value = Tensor(in[0]->rows(), in[0]->cols());
      kernels::parallel::tanh_forward(in[0]->data(), n.value.data());
      break;
    case OpKind::kExp:
      expect_arity(1);
      n.value = unary_map(*in[0], [](double x) { return std::exp(x); });
      break;
    case OpKind::kLog:
      expect_arity(1);
      n.value = unary_map(*in[0], [](double x) { return std::log(x); });
      break;
    case OpKind::kSqrt:
      expect_arity(1);
      n.value = unary_map(*in[0], [](double x) { return std::sqrt(x); });
      break;
    case OpKind::kSquare:
      expect_arity(1);
      n.value = unary_map(*in[0], [](double x) { return x * x; });
      break;
    case OpKind::kSum:
    case OpKind::kMean: {
      expect_arity(1);
      double acc = 0.0;
      for (double x : in[0]->data()) acc += x;
      if (kind == OpKind::kMean) {
        if (in[0]->empty()) throw ShapeError("mean: empty operand");
        acc /= static_cast<double>(in[0]->size());
      }
      n.value = Tensor::scalar(acc);
      break;
    }
    case OpKind::kRowSum:
    case OpKind::kRowNorm: {
      expect_arity(1);
      const Tensor& a = *in[0];
      n.value = Tensor(a.rows(), 1);
      for (int r = 0; r < a.rows(); ++r) {
        double acc = 0.0;
        for (double x : a.row(r)) acc += kind == OpKind::kRowSum ? x : x * x;
        n.value(r, 0) = kind == OpKind::kRowSum ? acc : std::sqrt(acc);
      }
      break;
    }
    case OpKind::kConcat: {
      if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
      const int rows = in[0]->rows();
      int cols = 0;
      for (const Tensor* t : in) {
        if (t->rows() != rows) shape_error(kind, *in[0], *t);
        cols += t->cols();
      }
      n.value = Tensor(rows, cols);
      for (int r = 0; r < rows; ++r) {
        int offset = 0;
        for (const Tensor* t : in) {
          std::copy(t->row(r).begin(), t->row(r).end(), n.value.row(r).begin() + offset);
          offset += t->cols();
        }
      }
      break;
    }
    case OpKind::kSlice: {
      expect_arity(1);
      const Tensor& a = *in[0];
      if (attrs.begin < 0 || attrs.end > a.cols() || attrs.begin >= attrs.end)
        throw ShapeError("slice: column range [" + std::to_string(attrs.begin) + ", " +
                         std::to_string(attrs.end) + ") invalid for shape " + a.shape_string());
      n.value = Tensor(a.rows(), attrs.end - attrs.begin);
      for (int r = 0; r < a.rows(); ++r)
        std::copy(a.row(r).begin() + attrs.begin, a.row(r).begin() + attrs.end, n.value.row(r).begin());
      break;
    }
    case OpKind::kClamp: {
      expect_arity(1);
      if (attrs.lo > attrs.hi) throw std::invalid_argument("clamp: lo > hi");
      const double lo = attrs.lo, hi = attrs.hi;
      n.value = unary_map(*in[0], [lo, hi](double x) { return std::clamp(x, lo, hi); });
      break;
    }
    case OpKind::kGaussReparam: {
      expect_arity(2);
      const Tensor& mu = *in[0];
      const Tensor& sigma = *in[1];
      if (!mu.same_shape(sigma)) shape_error(kind, mu, sigma);
      if (!mu.same_shape(attrs.aux)) shape_error(kind, mu, attrs.aux);
      n.value = Tensor(mu.rows(), mu.cols());
      for (std::size_t i = 0; i < mu.size(); ++i) n.value[i] = mu[i] + sigma[i] * attrs.aux[i];
      break;
    }
    case OpKind::kWhere: {
      expect_arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const Broadcast s = broadcast_shape(kind, a, b);
      const Tensor& m = attrs.aux;
      if ((m.rows() != 1 && m.rows() != s.rows) || (m.cols() != 1 && m.cols() != s.cols))
        shape_error(kind, m, Tensor(s.rows, s.cols));
      n.value = Tensor(s.rows, s.cols);
      for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c)
          n.value(r, c) = m[bidx(m, r, c)] != 0.0 ? a[bidx(a, r, c)] : b[bidx(b, r, c)];
      break;
    }
    case OpKind::kDetach:
      expect_arity(1);
      n.value = *in[0];
      n.detached = true;
      break;
  }

  if (!n.detached) {
    for (const Var& v : inputs) n.requires_grad = n.requires_grad || node(v).requires_grad;
  }
  n.attrs = std::move(attrs);
  return push(std::move(n));
}

void Tape::backward(Var output) {
  if (nodes_.empty()) throw std::logic_error("backward called on an empty tape");
  const Node& out = node(output);
  if (out.value.rows() != 1 || out.value.cols() != 1)
    throw ShapeError("backward: output must be 1x1, got " + out.value.shape_string());

  const auto last = static_cast<std::size_t>(output.id());
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].grad.fill(0.0);
  if (!out.requires_grad) return;
  nodes_[last].grad[0] = 1.0;
  for (std::size_t i = last + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.detached || n.kind == OpKind::kLeaf) continue;
    backward_node(n);
  }
}

void Tape::backward_node(const Node& n) {
  const Tensor& g = n.grad;
  auto input = [&](std::size_t k) -> Node& { return nodes_[static_cast<std::size_t>(n.inputs[k])]; };
  auto wants = [&](std::size_t k) { return input(k).requires_grad; };

  // Accumulate d(out)/d(in_k) = g * local(r, c), reducing over broadcast dims.
  auto accumulate_broadcast = [&](std::size_t k, auto local) {
    Node& in = input(k);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) in.grad[bidx(in.value, r, c)] += g(r, c) * local(r, c);
  };

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kDetach:
      break;
    case OpKind::kAdd:
      if (wants(0)) accumulate_broadcast(0, [](int, int) { return 1.0; });
      if (wants(1)) accumulate_broadcast(1, [](int, int) { return 1.0; });
      break;
    case OpKind::kSub:
      if (wants(0)) accumulate_broadcast(0, [](int, int) { return 1.0; });
      if (wants(1)) accumulate_broadcast(1, [](int, int) { return -1.0; });
      break;
    case OpKind::kMul: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      if (wants(0)) accumulate_broadcast(0, [&](int r, int c) { return b[bidx(b, r, c)]; });
      if (wants(1)) accumulate_broadcast(1, [&](int r, int c) { return a[bidx(a, r, c)]; });
      break;
    }
    case OpKind::kDiv: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      if (wants(0)) accumulate_broadcast(0, [&](int r, int c) { return 1.0 / b[bidx(b, r, c)]; });
      if (wants(1))
        accumulate_broadcast(1, [&](int r, int c) {
          const double bv = b[bidx(b, r, c)];
          return -a[bidx(a, r, c)] / (bv * bv);
        });
      break;
    }
    case OpKind::kScalarMul: {
      Tensor& ig = input(0).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += n.attrs.lo * g[i];
      break;
    }
    case OpKind::kAddScalar: {
      Tensor& ig = input(0).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
      break;
    }
    case OpKind::kNeg: {
      Tensor& ig = input(0).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] -= g[i];
      break;
    }
    case OpKind::kMatMul:
    case OpKind::kAffine: {
      Node& a = input(0);
      Node& b = input(1);
      const int m = a.value.rows(), k = a.value.cols(), cols = b.value.cols();
      if (a.requires_grad) kernels::parallel::gemm_nt({m, cols, k}, g.data(), b.value.data(), a.grad.data());
      if (b.requires_grad) kernels::parallel::gemm_tn({k, m, cols}, a.value.data(), g.data(), b.grad.data());
      if (n.kind == OpKind::kAffine && wants(2)) {
        Tensor& bg = input(2).grad;
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < g.cols(); ++c) bg[static_cast<std::size_t>(c)] += g(r, c);
      }
      break;
    }
    case OpKind::kTanh:
      kernels::parallel::tanh_backward(n.value.data(), g.data(), input(0).grad.data());
      break;
    case OpKind::kExp: {
      Tensor& ig = input(0).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * n.value[i];
      break;
    }
    case OpKind::kLog: {
      Node& in = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += g[i] / in.value[i];
      break;
    }
    case OpKind::kSqrt: {
      Tensor& ig = input(0).grad;
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * 0.5 / n.value[i];
      break;
    }
    case OpKind::kSquare: {
      Node& in = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += g[i] * 2.0 * in.value[i];
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      Tensor& ig = input(0).grad;
      const double s = n.kind == OpKind::kSum ? g[0] : g[0] / static_cast<double>(ig.size());
      for (std::size_t i = 0; i < ig.size(); ++i) ig[i] += s;
      break;
    }
    case OpKind::kRowSum: {
      Tensor& ig = input(0).grad;
      for (int r = 0; r < ig.rows(); ++r)
        for (double& x : ig.row(r)) x += g(r, 0);
      break;
    }
    case OpKind::kRowNorm: {
      // Subgradient 0 at the origin.
      Node& in = input(0);
      for (int r = 0; r < in.value.rows(); ++r) {
        const double norm = n.value(r, 0);
        if (norm == 0.0) continue;
        const double s = g(r, 0) / norm;
        for (int c = 0; c < in.value.cols(); ++c) in.grad(r, c) += s * in.value(r, c);
      }
      break;
    }
    case OpKind::kConcat: {
      int offset = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Node& in = input(k);
        const int w = in.value.cols();
        if (in.requires_grad) {
          for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < w; ++c) in.grad(r, c) += g(r, offset + c);
        }
        offset += w;
      }
      break;
    }
    case OpKind::kSlice: {
      Tensor& ig = input(0).grad;
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < g.cols(); ++c) ig(r, n.attrs.begin + c) += g(r, c);
      break;
    }
    case OpKind::kClamp: {
      Node& in = input(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = in.value[i];
        if (x >= n.attrs.lo && x <= n.attrs.hi) in.grad[i] += g[i];
      }
      break;
    }
    case OpKind::kGaussReparam: {
      if (wants(0)) {
        Tensor& mg = input(0).grad;
        for (std::size_t i = 0; i < g.size(); ++i) mg[i] += g[i];
      }
      if (wants(1)) {
        Tensor& sg = input(1).grad;
        for (std::size_t i = 0; i < g.size(); ++i) sg[i] += g[i] * n.attrs.aux[i];
      }
      break;
    }
    case OpKind::kWhere: {
      const Tensor& m = n.attrs.aux;
      if (wants(0)) accumulate_broadcast(0, [&](int r, int c) { return m[bidx(m, r, c)] != 0.0 ? 1.0 : 0.0; });
      if (wants(1)) accumulate_broadcast(1, [&](int r, int c) { return m[bidx(m, r, c)] != 0.0 ? 0.0 : 1.0; });
      break;
    }
  }
}

// ---- helpers ----

namespace {
Tape& tape_of(Var v) {
  if (!v.valid()) throw std::invalid_argument("operation on an invalid Var");
  return *v.tape();
}
Tape& common_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return tape_of(a);
}
}  // namespace

Var add(Var a, Var b) { return common_tape(a, b).record(OpKind::kAdd, {a, b}); }
Var sub(Var a, Var b) { return common_tape(a, b).record(OpKind::kSub, {a, b}); }
Var mul(Var a, Var b) { return common_tape(a, b).record(OpKind::kMul, {a, b}); }
Var div(Var a, Var b) { return common_tape(a, b).record(OpKind::kDiv, {a, b}); }
Var scale(Var a, double s) { return tape_of(a).record(OpKind::kScalarMul, {a}, {.lo = s}); }
Var add_scalar(Var a, double s) { return tape_of(a).record(OpKind::kAddScalar, {a}, {.lo = s}); }
Var neg(Var a) { return tape_of(a).record(OpKind::kNeg, {a}); }
Var matmul(Var a, Var b) { return common_tape(a, b).record(OpKind::kMatMul, {a, b}); }
Var affine(Var x, Var w, Var b) {
  common_tape(x, w);
  return common_tape(w, b).record(OpKind::kAffine, {x, w, b});
}
Var tanh(Var a) { return tape_of(a).record(OpKind::kTanh, {a}); }
Var exp(Var a) { return tape_of(a).record(OpKind::kExp, {a}); }
Var log(Var a) { return tape_of(a).record(OpKind::kLog, {a}); }
Var sqrt(Var a) { return tape_of(a).record(OpKind::kSqrt, {a}); }
Var square(Var a) { return tape_of(a).record(OpKind::kSquare, {a}); }
Var sum(Var a) { return tape_of(a).record(OpKind::kSum, {a}); }
Var row_sum(Var a) { return tape_of(a).record(OpKind::kRowSum, {a}); }
Var mean(Var a) { return tape_of(a).record(OpKind::kMean, {a}); }
Var row_norm(Var a) { return tape_of(a).record(OpKind::kRowNorm, {a}); }
Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const Var& p : parts) common_tape(parts.front(), p);
  return tape_of(parts.front()).record(OpKind::kConcat, parts);
}
Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }
Var slice(Var a, int begin, int end) {
  return tape_of(a).record(OpKind::kSlice, {a}, {.begin = begin, .end = end});
}
Var col(Var a, int c) { return slice(a, c, c + 1); }
Var clamp(Var a, double lo, double hi) { return tape_of(a).record(OpKind::kClamp, {a}, {.lo = lo, .hi = hi}); }
Var gauss_reparameterize(Var mu, Var sigma, Tensor eps) {
  return common_tape(mu, sigma).record(OpKind::kGaussReparam, {mu, sigma}, {.aux = std::move(eps)});
}
Var where(const Tensor& mask, Var a, Var b) {
  return common_tape(a, b).record(OpKind::kWhere, {a, b}, {.aux = mask});
}
Var detach(Var a) { return tape_of(a).record(OpKind::kDetach, {a}); }

// ---- finite differences ----

namespace {
double eval_at(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.constant(x));
  const double v = out.value().item();
  if (!std::isfinite(v)) throw std::domain_error("grad_check: function value is not finite");
  return v;
}
}  // namespace

Tensor gradient(const ScalarFn& f, const Tensor& x0) {
  Tape tape;
  Var x = tape.parameter(x0);
  Var out = f(tape, x);
  if (!std::isfinite(out.value().item())) throw std::domain_error("grad_check: function value is not finite");
  tape.backward(out);
  return x.grad();
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x0, double step, std::span<const int> indices) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const Tensor analytic = gradient(f, x0);
  std::vector<int> coords(indices.begin(), indices.end());
  if (coords.empty()) {
    coords.resize(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) coords[i] = static_cast<int>(i);
  }
  GradCheckResult result;
  for (int i : coords) {
    Tensor plus = x0, minus = x0;
    plus[static_cast<std::size_t>(i)] += step;
    minus[static_cast<std::size_t>(i)] -= step;
    const double numeric = (eval_at(f, plus) - eval_at(f, minus)) / (2.0 * step);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
    if (err > result.max_rel_error || result.worst_index < 0) {
      result = {err, i, a, numeric};
    }
  }
  return result;
}

}  // namespace abpt::ad
