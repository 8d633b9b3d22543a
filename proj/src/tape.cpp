#include "mixpol/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mixpol/errors.hpp"

namespace mixpol {

namespace {

constexpr double kAtanhLimit = 1.0 - 1e-6;

constexpr std::array<std::string_view, 22> kNames = {
    "leaf",     "constant", "add",      "sub",           "mul",
    "div",      "neg",      "affine",   "exp",           "log",
    "tanh",     "atanh",    "square",   "softplus",      "erf",
    "min",      "max",      "sum",      "logsumexp",     "stop_gradient",
    "straight_through",     "external"};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("Var operands belong to different tapes");
  return *a.tape;
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::invalid_argument("Var has no tape");
  return *a.tape;
}

}  // namespace

std::string_view primitive_name(Primitive p) {
  return kNames[static_cast<std::size_t>(p)];
}

double Var::value() const { return tape->value(*this); }

void Tape::clear() {
  nodes_.clear();
  parents_.clear();
  partials_.clear();
}

void Tape::reserve(std::size_t nodes) {
  nodes_.reserve(nodes);
  parents_.reserve(2 * nodes);
  partials_.reserve(2 * nodes);
}

void Tape::check(Var v) const {
  if (v.tape != this || v.index >= nodes_.size())
    throw std::invalid_argument("Var does not belong to this tape");
}

Var Tape::push(Primitive op, double value) {
  const auto begin = static_cast<std::uint32_t>(parents_.size());
  nodes_.push_back({value, begin, 0, op});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Primitive op, double value, Var a, double da) {
  check(a);
  const auto begin = static_cast<std::uint32_t>(parents_.size());
  parents_.push_back(a.index);
  partials_.push_back(da);
  nodes_.push_back({value, begin, 1, op});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Primitive op, double value, Var a, double da, Var b, double db) {
  check(a);
  check(b);
  const auto begin = static_cast<std::uint32_t>(parents_.size());
  parents_.push_back(a.index);
  partials_.push_back(da);
  parents_.push_back(b.index);
  partials_.push_back(db);
  nodes_.push_back({value, begin, 2, op});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(double v) { return push(Primitive::leaf, v); }
Var Tape::constant(double v) { return push(Primitive::constant, v); }

Var Tape::add(Var a, Var b) {
  return push(Primitive::add, value(a) + value(b), a, 1.0, b, 1.0);
}

Var Tape::sub(Var a, Var b) {
  return push(Primitive::sub, value(a) - value(b), a, 1.0, b, -1.0);
}

Var Tape::mul(Var a, Var b) {
  const double va = value(a), vb = value(b);
  return push(Primitive::mul, va * vb, a, vb, b, va);
}

Var Tape::div(Var a, Var b) {
  const double va = value(a), vb = value(b);
  return push(Primitive::div, va / vb, a, 1.0 / vb, b, -va / (vb * vb));
}

Var Tape::neg(Var a) { return push(Primitive::neg, -value(a), a, -1.0); }

Var Tape::affine(Var x, double scale, double shift) {
  return push(Primitive::affine, scale * value(x) + shift, x, scale);
}

Var Tape::exp(Var a) {
  const double e = std::exp(value(a));
  return push(Primitive::exp, e, a, e);
}

Var Tape::log(Var a) {
  const double v = value(a);
  return push(Primitive::log, std::log(v), a, 1.0 / v);
}

Var Tape::tanh(Var a) {
  const double x = value(a);
  const double c = std::cosh(x);
  return push(Primitive::tanh, std::tanh(x), a, 1.0 / (c * c));
}

Var Tape::atanh(Var a) {
  const double v = value(a);
  if (std::abs(v) > kAtanhLimit) {
    return push(Primitive::atanh, std::atanh(std::copysign(kAtanhLimit, v)), a,
                0.0);
  }
  return push(Primitive::atanh, std::atanh(v), a, 1.0 / (1.0 - v * v));
}

Var Tape::square(Var a) {
  const double v = value(a);
  return push(Primitive::square, v * v, a, 2.0 * v);
}

Var Tape::softplus(Var a) {
  const double v = value(a);
  const double sp = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  return push(Primitive::softplus, sp, a, sigmoid(v));
}

Var Tape::erf(Var a) {
  const double v = value(a);
  return push(Primitive::erf, std::erf(v), a,
              2.0 / std::sqrt(std::numbers::pi) * std::exp(-v * v));
}

Var Tape::min(Var a, Var b) {
  return value(a) <= value(b) ? push(Primitive::min, value(a), a, 1.0, b, 0.0)
                              : push(Primitive::min, value(b), a, 0.0, b, 1.0);
}

Var Tape::max(Var a, Var b) {
  return value(a) >= value(b) ? push(Primitive::max, value(a), a, 1.0, b, 0.0)
                              : push(Primitive::max, value(b), a, 0.0, b, 1.0);
}

Var Tape::sum(std::span<const Var> xs) {
  double total = 0.0;
  for (Var x : xs) {
    check(x);
    total += value(x);
  }
  const auto begin = static_cast<std::uint32_t>(parents_.size());
  for (Var x : xs) {
    parents_.push_back(x.index);
    partials_.push_back(1.0);
  }
  nodes_.push_back({total, begin, static_cast<std::uint32_t>(xs.size()),
                    Primitive::sum});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::logsumexp(std::span<const Var> xs) {
  if (xs.empty()) throw DimensionError("logsumexp of an empty set");
  double m = -std::numeric_limits<double>::infinity();
  for (Var x : xs) {
    check(x);
    m = std::max(m, value(x));
  }
  double s = 0.0;
  for (Var x : xs) s += std::exp(value(x) - m);
  const auto begin = static_cast<std::uint32_t>(parents_.size());
  for (Var x : xs) {
    parents_.push_back(x.index);
    partials_.push_back(std::exp(value(x) - m) / s);
  }
  nodes_.push_back({m + std::log(s), begin,
                    static_cast<std::uint32_t>(xs.size()),
                    Primitive::logsumexp});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::stop_gradient(Var a) {
  check(a);
  return push(Primitive::stop_gradient, value(a));
}

Var Tape::straight_through(double forward, Var soft) {
  return push(Primitive::straight_through, forward, soft, 1.0);
}

Var Tape::external(double v, std::span<const Var> inputs,
                   std::span<const double> partials) {
  if (inputs.size() != partials.size())
    throw DimensionError("external node: " + std::to_string(inputs.size()) +
                         " inputs but " + std::to_string(partials.size()) +
                         " partials");
  const auto begin = static_cast<std::uint32_t>(parents_.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    check(inputs[i]);
    parents_.push_back(inputs[i].index);
    partials_.push_back(partials[i]);
  }
  nodes_.push_back({v, begin, static_cast<std::uint32_t>(inputs.size()),
                    Primitive::external});
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::apply(std::string_view name, std::span<const Var> args) {
  auto arity = [&](std::size_t n) {
    if (args.size() != n)
      throw DimensionError(std::string(name) + " expects " + std::to_string(n) +
                           " arguments, got " + std::to_string(args.size()));
  };
  if (name == "add") return arity(2), add(args[0], args[1]);
  if (name == "sub") return arity(2), sub(args[0], args[1]);
  if (name == "mul") return arity(2), mul(args[0], args[1]);
  if (name == "div") return arity(2), div(args[0], args[1]);
  if (name == "neg") return arity(1), neg(args[0]);
  if (name == "exp") return arity(1), exp(args[0]);
  if (name == "log") return arity(1), log(args[0]);
  if (name == "tanh") return arity(1), tanh(args[0]);
  if (name == "atanh") return arity(1), atanh(args[0]);
  if (name == "square") return arity(1), square(args[0]);
  if (name == "softplus") return arity(1), softplus(args[0]);
  if (name == "erf") return arity(1), erf(args[0]);
  if (name == "min") return arity(2), min(args[0], args[1]);
  if (name == "max") return arity(2), max(args[0], args[1]);
  if (name == "sum") return sum(args);
  if (name == "logsumexp") return logsumexp(args);
  if (name == "stop_gradient") return arity(1), stop_gradient(args[0]);
  throw UnsupportedPrimitive("unsupported primitive '" + std::string(name) +
                             "'");
}

std::vector<double> Tape::adjoints(Var output) const {
  check(output);
  std::vector<double> adj(output.index + 1, 0.0);
  adj[output.index] = 1.0;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    const double g = adj[i];
    if (g == 0.0) continue;
    const Node& n = nodes_[i];
    for (std::uint32_t e = n.edge_begin; e < n.edge_begin + n.edge_count; ++e)
      adj[parents_[e]] += g * partials_[e];
  }
  return adj;
}

std::vector<double> Tape::gradient(Var output,
                                   std::span<const Var> wrt) const {
  const auto adj = adjoints(output);
  std::vector<double> g(wrt.size(), 0.0);
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    check(wrt[i]);
    if (wrt[i].index < adj.size()) g[i] = adj[wrt[i].index];
  }
  return g;
}

Var operator+(Var a, Var b) { return tape_of(a, b).add(a, b); }
Var operator-(Var a, Var b) { return tape_of(a, b).sub(a, b); }
Var operator*(Var a, Var b) { return tape_of(a, b).mul(a, b); }
Var operator/(Var a, Var b) { return tape_of(a, b).div(a, b); }
Var operator-(Var a) { return tape_of(a).neg(a); }
Var operator+(Var a, double b) { return tape_of(a).affine(a, 1.0, b); }
Var operator+(double a, Var b) { return tape_of(b).affine(b, 1.0, a); }
Var operator-(Var a, double b) { return tape_of(a).affine(a, 1.0, -b); }
Var operator-(double a, Var b) { return tape_of(b).affine(b, -1.0, a); }
Var operator*(Var a, double b) { return tape_of(a).affine(a, b, 0.0); }
Var operator*(double a, Var b) { return tape_of(b).affine(b, a, 0.0); }
Var operator/(Var a, double b) { return tape_of(a).affine(a, 1.0 / b, 0.0); }

Var exp(Var a) { return tape_of(a).exp(a); }
Var log(Var a) { return tape_of(a).log(a); }
Var tanh(Var a) { return tape_of(a).tanh(a); }
Var atanh(Var a) { return tape_of(a).atanh(a); }
Var square(Var a) { return tape_of(a).square(a); }
Var softplus(Var a) { return tape_of(a).softplus(a); }
Var erf(Var a) { return tape_of(a).erf(a); }
Var min(Var a, Var b) { return tape_of(a, b).min(a, b); }
Var max(Var a, Var b) { return tape_of(a, b).max(a, b); }
Var stop_gradient(Var a) { return tape_of(a).stop_gradient(a); }

Var sum(std::span<const Var> xs) {
  if (xs.empty()) throw DimensionError("sum of an empty set needs a tape");
  return tape_of(xs.front()).sum(xs);
}

Var logsumexp(std::span<const Var> xs) {
  if (xs.empty()) throw DimensionError("logsumexp of an empty set");
  return tape_of(xs.front()).logsumexp(xs);
}

std::vector<double> backprop_grad(std::span<const Var> loss,
                                  std::span<const Var> params) {
  if (loss.size() != 1)
    throw DimensionError("backprop_grad needs a scalar loss, got " +
                         std::to_string(loss.size()) + " outputs");
  return tape_of(loss.front()).gradient(loss.front(), params);
}

}  // namespace mixpol
