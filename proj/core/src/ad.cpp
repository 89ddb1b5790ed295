#include "sgrpf/ad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sgrpf {

const char* op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::input: return "input";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::neg: return "neg";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::pow: return "pow";
    case Op::stop_gradient: return "stop_gradient";
  }
  return "?";
}

double Var::value() const { return tape_->node(id_).value; }
bool Var::active() const { return tape_->node(id_).active; }

std::uint32_t Tape::append(const Node& n) {
  if (nodes_.size() >= kNoParent) {
    throw std::length_error("tape exceeds 2^32 - 1 nodes");
  }
  nodes_.push_back(n);
  return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Var Tape::constant(double value) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("lift: non-finite constant " + std::to_string(value));
  }
  Node n;
  n.value = value;
  n.op = Op::constant;
  return {this, append(n)};
}

Var Tape::input(double value) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument("input: non-finite value " + std::to_string(value));
  }
  Node n;
  n.value = value;
  n.op = Op::input;
  n.active = true;
  return {this, append(n)};
}

double Tape::apply(Op op, double a, double b) {
  switch (op) {
    case Op::add: return a + b;
    case Op::mul: return a * b;
    case Op::div: return a / b;
    case Op::neg: return -a;
    case Op::exp: return std::exp(a);
    case Op::log: return std::log(a);
    case Op::sqrt: return std::sqrt(a);
    case Op::pow: return std::pow(a, b);
    case Op::stop_gradient: return a;
    case Op::constant:
    case Op::input: break;
  }
  throw std::logic_error("apply: leaf op");
}

Var Tape::push_unary(Op op, Var a) {
  if (a.tape() != this) throw std::invalid_argument("operand belongs to another tape");
  const Node& pa = nodes_[a.id()];
  Node n;
  n.op = op;
  n.lhs = a.id();
  n.value = apply(op, pa.value, 0.0);
  n.active = op != Op::stop_gradient && pa.active;
  return {this, append(n)};
}

Var Tape::push_binary(Op op, Var a, Var b) {
  if (a.tape() != this || b.tape() != this) {
    throw std::invalid_argument("operand belongs to another tape");
  }
  const Node& pa = nodes_[a.id()];
  const Node& pb = nodes_[b.id()];
  Node n;
  n.op = op;
  n.lhs = a.id();
  n.rhs = b.id();
  n.value = apply(op, pa.value, pb.value);
  n.active = pa.active || pb.active;
  return {this, append(n)};
}

void Tape::set_input(Var leaf, double value) {
  if (leaf.tape() != this || nodes_[leaf.id()].op != Op::input) {
    throw std::invalid_argument("set_input: not an input of this tape");
  }
  nodes_[leaf.id()].value = value;
}

void Tape::replay() {
  for (auto& n : nodes_) {
    if (n.op == Op::constant || n.op == Op::input) continue;
    const double a = nodes_[n.lhs].value;
    const double b = n.rhs == kNoParent ? 0.0 : nodes_[n.rhs].value;
    n.value = apply(n.op, a, b);
  }
}

std::vector<double> Tape::values() const {
  std::vector<double> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.value);
  return out;
}

// ---------------------------------------------------------------------------

Var lift(Tape& tape, double value) { return tape.constant(value); }

Var stop_gradient(Var x) { return x.tape()->push_unary(Op::stop_gradient, x); }

Var operator+(Var a, Var b) { return a.tape()->push_binary(Op::add, a, b); }
Var operator*(Var a, Var b) { return a.tape()->push_binary(Op::mul, a, b); }
Var operator/(Var a, Var b) { return a.tape()->push_binary(Op::div, a, b); }
Var operator-(Var a) { return a.tape()->push_unary(Op::neg, a); }
Var operator-(Var a, Var b) { return a + (-b); }

Var operator+(Var a, double b) { return a + lift(*a.tape(), b); }
Var operator+(double a, Var b) { return lift(*b.tape(), a) + b; }
Var operator-(Var a, double b) { return a + lift(*a.tape(), -b); }
Var operator-(double a, Var b) { return lift(*b.tape(), a) + (-b); }
Var operator*(Var a, double b) { return a * lift(*a.tape(), b); }
Var operator*(double a, Var b) { return lift(*b.tape(), a) * b; }
Var operator/(Var a, double b) { return a / lift(*a.tape(), b); }
Var operator/(double a, Var b) { return lift(*b.tape(), a) / b; }

Var& operator+=(Var& a, Var b) {
  a = a + b;
  return a;
}

Var& operator*=(Var& a, Var b) {
  a = a * b;
  return a;
}

Var exp(Var x) { return x.tape()->push_unary(Op::exp, x); }
Var log(Var x) { return x.tape()->push_unary(Op::log, x); }
Var sqrt(Var x) { return x.tape()->push_unary(Op::sqrt, x); }
Var pow(Var x, Var y) { return x.tape()->push_binary(Op::pow, x, y); }
Var pow(Var x, double y) { return pow(x, lift(*x.tape(), y)); }
Var square(Var x) { return x * x; }

Var log_sum_exp(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("log_sum_exp of empty set");
  Tape& tape = *xs.front().tape();
  double m = -std::numeric_limits<double>::infinity();
  for (const Var& x : xs) m = std::max(m, x.value());
  if (!std::isfinite(m)) {
    throw std::domain_error("log_sum_exp: maximum is not finite");
  }
  const Var neg_shift = lift(tape, -m);
  Var acc = exp(xs.front() + neg_shift);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + exp(xs[i] + neg_shift);
  return lift(tape, m) + log(acc);
}

Var sum(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("sum of empty set");
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
  return acc;
}

std::vector<double> values_of(std::span<const Var> xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const Var& x : xs) out.push_back(x.value());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_leaves(const Tape& tape, Var output, std::span<const Var> leaves) {
  for (const Var& leaf : leaves) {
    if (leaf.tape() != output.tape()) {
      throw GradientError("grad: leaf belongs to another tape");
    }
    if (tape.node(leaf.id()).op != Op::input) {
      throw GradientError("grad: node " + std::to_string(leaf.id()) +
                          " is not marked as an input");
    }
  }
}

}  // namespace

std::vector<Var> grad(Var output, std::span<const Var> leaves) {
  Tape& tape = *output.tape();
  check_leaves(tape, output, leaves);

  const std::uint32_t out_id = output.id();
  std::vector<std::uint32_t> adj(out_id + 1, kNoParent);
  auto accumulate = [&](std::uint32_t target, Var contribution) {
    if (!tape.node(target).active) return;
    if (adj[target] == kNoParent) {
      adj[target] = contribution.id();
    } else {
      adj[target] = (Var{&tape, adj[target]} + contribution).id();
    }
  };

  if (tape.node(out_id).active) adj[out_id] = lift(tape, 1.0).id();

  for (std::uint32_t i = out_id + 1; i-- > 0;) {
    if (adj[i] == kNoParent) continue;
    // Copy: emitting nodes may reallocate the node storage.
    const Node n = tape.node(i);
    if (!n.active) continue;
    const Var g{&tape, adj[i]};
    const Var self{&tape, i};
    const Var a{&tape, n.lhs};
    const Var b{&tape, n.rhs};
    switch (n.op) {
      case Op::constant:
      case Op::input:
      case Op::stop_gradient:
        break;
      case Op::add:
        accumulate(n.lhs, g);
        accumulate(n.rhs, g);
        break;
      case Op::mul:
        if (tape.node(n.lhs).active) accumulate(n.lhs, g * b);
        if (tape.node(n.rhs).active) accumulate(n.rhs, g * a);
        break;
      case Op::div: {
        const Var ga = g / b;
        accumulate(n.lhs, ga);
        if (tape.node(n.rhs).active) accumulate(n.rhs, -(ga * self));
        break;
      }
      case Op::neg:
        accumulate(n.lhs, -g);
        break;
      case Op::exp:
        accumulate(n.lhs, g * self);
        break;
      case Op::log:
        accumulate(n.lhs, g / a);
        break;
      case Op::sqrt:
        accumulate(n.lhs, g * (lift(tape, 0.5) / self));
        break;
      case Op::pow:
        if (tape.node(n.lhs).active) {
          accumulate(n.lhs, g * (b * pow(a, b - 1.0)));
        }
        if (tape.node(n.rhs).active) accumulate(n.rhs, g * (log(a) * self));
        break;
    }
  }

  std::vector<Var> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) {
    const std::uint32_t id = leaf.id();
    if (id <= out_id && adj[id] != kNoParent) {
      out.emplace_back(&tape, adj[id]);
    } else {
      out.push_back(lift(tape, 0.0));
    }
  }
  return out;
}

std::vector<double> gradient_values(Var output, std::span<const Var> leaves) {
  const Tape& tape = *output.tape();
  check_leaves(tape, output, leaves);

  const std::uint32_t out_id = output.id();
  std::vector<double> adj(out_id + 1, 0.0);
  if (tape.node(out_id).active) adj[out_id] = 1.0;

  for (std::uint32_t i = out_id + 1; i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = tape.node(i);
    if (!n.active) continue;
    switch (n.op) {
      case Op::constant:
      case Op::input:
      case Op::stop_gradient:
        break;
      case Op::add:
        adj[n.lhs] += g;
        adj[n.rhs] += g;
        break;
      case Op::mul:
        adj[n.lhs] += g * tape.node(n.rhs).value;
        adj[n.rhs] += g * tape.node(n.lhs).value;
        break;
      case Op::div: {
        const double ga = g / tape.node(n.rhs).value;
        adj[n.lhs] += ga;
        adj[n.rhs] -= ga * n.value;
        break;
      }
      case Op::neg:
        adj[n.lhs] -= g;
        break;
      case Op::exp:
        adj[n.lhs] += g * n.value;
        break;
      case Op::log:
        adj[n.lhs] += g / tape.node(n.lhs).value;
        break;
      case Op::sqrt:
        adj[n.lhs] += g * 0.5 / n.value;
        break;
      case Op::pow: {
        const Node& a = tape.node(n.lhs);
        const Node& b = tape.node(n.rhs);
        if (a.active) adj[n.lhs] += g * b.value * std::pow(a.value, b.value - 1.0);
        if (b.active) adj[n.rhs] += g * std::log(a.value) * n.value;
        break;
      }
    }
  }
  std::vector<double> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) {
    out.push_back(leaf.id() <= out_id ? adj[leaf.id()] : 0.0);
  }
  return out;
}

std::vector<std::vector<Var>> grad_twice(Var output, std::span<const Var> leaves) {
  const std::vector<Var> first = grad(output, leaves);
  std::vector<std::vector<Var>> rows;
  rows.reserve(first.size());
  for (const Var& g : first) rows.push_back(grad(g, leaves));
  return rows;
}

std::vector<std::vector<double>> hessian_values(Var output,
                                                std::span<const Var> leaves) {
  const std::vector<Var> first = grad(output, leaves);
  std::vector<std::vector<double>> rows;
  rows.reserve(first.size());
  for (const Var& g : first) rows.push_back(gradient_values(g, leaves));
  return rows;
}

Var strip_stop_gradients(Var x) {
  Tape& tape = *x.tape();
  const std::uint32_t top = x.id();
  std::vector<std::uint32_t> image(top + 1, kNoParent);
  // Mark the ancestors of x.
  std::vector<char> needed(top + 1, 0);
  needed[top] = 1;
  for (std::uint32_t i = top + 1; i-- > 0;) {
    if (!needed[i]) continue;
    const Node& n = tape.node(i);
    if (n.lhs != kNoParent) needed[n.lhs] = 1;
    if (n.rhs != kNoParent) needed[n.rhs] = 1;
  }
  for (std::uint32_t i = 0; i <= top; ++i) {
    if (!needed[i]) continue;
    const Node n = tape.node(i);
    switch (n.op) {
      case Op::constant:
      case Op::input:
        image[i] = i;
        break;
      case Op::stop_gradient:
        image[i] = image[n.lhs];
        break;
      case Op::neg:
      case Op::exp:
      case Op::log:
      case Op::sqrt:
        image[i] = tape.push_unary(n.op, Var{&tape, image[n.lhs]}).id();
        break;
      case Op::add:
      case Op::mul:
      case Op::div:
      case Op::pow:
        image[i] = tape
                       .push_binary(n.op, Var{&tape, image[n.lhs]},
                                    Var{&tape, image[n.rhs]})
                       .id();
        break;
    }
  }
  return {&tape, image[top]};
}

std::vector<double> finite_difference(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference: h must be > 0");
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> out(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    point[k] = theta[k] + h;
    const double up = f(point);
    point[k] = theta[k] - h;
    const double down = f(point);
    point[k] = theta[k];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("finite_difference: non-finite function value");
    }
    out[k] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace sgrpf
