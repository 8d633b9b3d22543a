#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mixpol {

class Tape;

/// Handle to a scalar node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  double value() const;
};

enum class Primitive : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  neg,
  affine,  // a * x + b with constant a, b
  exp,
  log,
  tanh,
  atanh,
  square,
  softplus,
  erf,
  min,
  max,
  sum,
  logsumexp,
  stop_gradient,
  straight_through,
  external,
};

std::string_view primitive_name(Primitive p);

/// Reverse-mode differentiation over a fixed primitive set.
///
/// Every node stores its value and the local partial derivatives with respect
/// to its parents, evaluated when the node is recorded. The backward sweep is
/// then a single pass of multiply-accumulate over those edges. Tapes are
/// cheap to reuse: clear() keeps the allocated capacity.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear();
  void reserve(std::size_t nodes);
  std::size_t size() const { return nodes_.size(); }

  Var leaf(double v);
  Var constant(double v);
  double value(Var v) const { return nodes_[v.index].value; }
  Primitive primitive(Var v) const { return nodes_[v.index].op; }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var affine(Var x, double scale, double shift);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  /// Inverse hyperbolic tangent; the argument is clipped to |x| <= 1 - 1e-6.
  Var atanh(Var a);
  Var square(Var a);
  Var softplus(Var a);
  Var erf(Var a);
  Var min(Var a, Var b);
  Var max(Var a, Var b);
  Var sum(std::span<const Var> xs);
  Var logsumexp(std::span<const Var> xs);
  /// Passes the value through; blocks the gradient.
  Var stop_gradient(Var a);
  /// Forward value is `forward`; the gradient flows to `soft` with unit
  /// weight. Equivalent to forward + soft - stop_gradient(soft), but the
  /// forward value is exact.
  Var straight_through(double forward, Var soft);
  /// A node computed outside the tape whose local partials are supplied by
  /// the caller (for instance a critic network evaluated at an action).
  Var external(double value, std::span<const Var> inputs,
               std::span<const double> partials);

  /// Applies a primitive by name. Unknown names throw UnsupportedPrimitive.
  Var apply(std::string_view name, std::span<const Var> args);

  /// Adjoints of every node with respect to `output`.
  std::vector<double> adjoints(Var output) const;
  /// d output / d wrt[i].
  std::vector<double> gradient(Var output, std::span<const Var> wrt) const;

 private:
  struct Node {
    double value;
    std::uint32_t edge_begin;
    std::uint32_t edge_count;
    Primitive op;
  };

  Var push(Primitive op, double value);
  Var push(Primitive op, double value, Var a, double da);
  Var push(Primitive op, double value, Var a, double da, Var b, double db);
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> parents_;
  std::vector<double> partials_;
};

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

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var atanh(Var a);
Var square(Var a);
Var softplus(Var a);
Var erf(Var a);
Var min(Var a, Var b);
Var max(Var a, Var b);
Var stop_gradient(Var a);
Var sum(std::span<const Var> xs);
Var logsumexp(std::span<const Var> xs);

/// Gradient of a scalar loss with respect to `params`. `loss` must hold
/// exactly one node; anything else is rejected as a non-scalar loss.
std::vector<double> backprop_grad(std::span<const Var> loss,
                                  std::span<const Var> params);

}  // namespace mixpol
