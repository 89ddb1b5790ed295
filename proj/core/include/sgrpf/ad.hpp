#pragma once

// Scalar reverse-mode automatic differentiation with a stop-gradient node.
//
// Every scalar is one record on an append-only Tape. The reverse sweep used by
// grad() emits ordinary tape operations, so the adjoints it returns can be
// differentiated again (backward-over-backward). gradient_values() is the
// numeric-only sweep for first derivatives when no further differentiation is
// needed.
//
// Stop-gradient semantics:
//   value(stop_gradient(e)) == value(e)
//   d stop_gradient(e) == 0
// strip_stop_gradients() implements the evaluation arrow on expressions, so
// "differentiate then evaluate" and "evaluate then differentiate" can both be
// expressed.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgrpf {

enum class Op : std::uint8_t {
  constant,
  input,
  add,
  mul,
  div,
  neg,
  exp,
  log,
  sqrt,
  pow,
  stop_gradient,
};

const char* op_name(Op op);

inline constexpr std::uint32_t kNoParent = 0xffffffffu;

struct Node {
  double value = 0.0;
  std::uint32_t lhs = kNoParent;
  std::uint32_t rhs = kNoParent;
  Op op = Op::constant;
  // True iff the node reaches an input through a path free of stop-gradient.
  bool active = false;

  bool stop_flag() const { return op == Op::stop_gradient; }
};

class Tape;

/// Handle to one scalar node on a tape. Cheap to copy; does not own the tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  double value() const;
  std::uint32_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool active() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = kNoParent;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  // Vars hold a raw pointer to their tape, so tapes never move.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  /// Constant node; throws std::invalid_argument on a non-finite value.
  Var constant(double value);
  /// Differentiable leaf.
  Var input(double value);

  Var push_unary(Op op, Var a);
  Var push_binary(Op op, Var a, Var b);

  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Overwrite the value of an input leaf. Call replay() afterwards to
  /// propagate the change to dependent nodes.
  void set_input(Var leaf, double value);

  /// Recompute every non-leaf node from its parents in tape order.
  void replay();

  /// Snapshot of all node values, in tape order.
  std::vector<double> values() const;

 private:
  static double apply(Op op, double a, double b);
  std::uint32_t append(const Node& n);

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Construction helpers

Var lift(Tape& tape, double value);
Var stop_gradient(Var x);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);

Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var& operator+=(Var& a, Var b);
Var& operator*=(Var& a, Var b);

Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var pow(Var x, Var y);
Var pow(Var x, double y);
Var square(Var x);

/// Max-shifted log(sum(exp(xs))). The shift is a constant, so first and
/// higher derivatives are those of the unshifted expression.
Var log_sum_exp(std::span<const Var> xs);

/// Sum with a fixed left-to-right association.
Var sum(std::span<const Var> xs);

// ---------------------------------------------------------------------------
// Differentiation

class GradientError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Adjoints of `output` with respect to `leaves`, recorded as tape nodes.
/// Throws GradientError if a requested leaf is not an input node.
std::vector<Var> grad(Var output, std::span<const Var> leaves);

/// Numeric first derivatives; no nodes are appended to the tape.
std::vector<double> gradient_values(Var output, std::span<const Var> leaves);

/// Full matrix of second derivatives, row k = grad(grad(output)[k]).
std::vector<std::vector<Var>> grad_twice(Var output, std::span<const Var> leaves);

std::vector<std::vector<double>> hessian_values(Var output,
                                                std::span<const Var> leaves);

/// Rebuild the expression for `x` with every stop-gradient node replaced by
/// its argument. The forward value is unchanged.
Var strip_stop_gradients(Var x);

std::vector<double> values_of(std::span<const Var> xs);

// ---------------------------------------------------------------------------
// Finite differences (verification oracle)

/// Central differences (f(t + h e_k) - f(t - h e_k)) / (2h) for each k.
/// Throws std::domain_error if f returns a non-finite value.
std::vector<double> finite_difference(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double h);

}  // namespace sgrpf
