#include "mixpol/mlp.hpp"

#include <cmath>
#include <string>

#include "mixpol/errors.hpp"

namespace mixpol {

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using MatMap = Eigen::Map<Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

std::string shape(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

}  // namespace

std::size_t MlpSpec::layer_in(std::size_t l) const {
  return l == 0 ? input_dim : hidden_dims[l - 1];
}

std::size_t MlpSpec::layer_out(std::size_t l) const {
  return l == hidden_dims.size() ? output_dim : hidden_dims[l];
}

void MlpSpec::validate() const {
  if (input_dim == 0) throw DimensionError("MlpSpec: input_dim must be >= 1");
  if (output_dim == 0) throw DimensionError("MlpSpec: output_dim must be >= 1");
  for (std::size_t h : hidden_dims)
    if (h == 0) throw DimensionError("MlpSpec: hidden widths must be >= 1");
}

ParameterVector make_mlp_parameters(const MlpSpec& spec) {
  spec.validate();
  ParameterVector p;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    p.add_segment("W" + std::to_string(l), spec.layer_out(l), spec.layer_in(l));
    p.add_segment("b" + std::to_string(l), spec.layer_out(l), 1);
  }
  return p;
}

void initialize_mlp(const MlpSpec& spec, ParameterVector& params, Rng& rng) {
  check_layout(spec, params);
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_in(l)));
    for (double& w : params.segment(2 * l)) w = rng.uniform(-bound, bound);
    for (double& b : params.segment(2 * l + 1)) b = rng.uniform(-bound, bound);
  }
}

void check_layout(const MlpSpec& spec, const ParameterVector& params) {
  spec.validate();
  const auto& layout = params.layout();
  if (layout.size() != 2 * spec.layers())
    throw DimensionError("MLP expects " + std::to_string(2 * spec.layers()) +
                         " parameter segments, got " +
                         std::to_string(layout.size()));
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const Segment& w = layout[2 * l];
    const Segment& b = layout[2 * l + 1];
    if (w.rows != spec.layer_out(l) || w.cols != spec.layer_in(l))
      throw DimensionError("segment '" + w.name + "' has shape " +
                           shape(w.rows, w.cols) + ", expected " +
                           shape(spec.layer_out(l), spec.layer_in(l)));
    if (b.rows != spec.layer_out(l) || b.cols != 1)
      throw DimensionError("segment '" + b.name + "' has shape " +
                           shape(b.rows, b.cols) + ", expected " +
                           shape(spec.layer_out(l), 1));
  }
}

std::vector<double> mlp_forward(const MlpSpec& spec,
                                const ParameterVector& params,
                                std::span<const double> input) {
  check_layout(spec, params);
  if (input.size() != spec.input_dim)
    throw DimensionError("segment 'input' has length " +
                         std::to_string(input.size()) + ", expected " +
                         std::to_string(spec.input_dim));
  Eigen::VectorXd x = ConstVecMap(input.data(), input.size());
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    auto w = params.segment(2 * l);
    auto b = params.segment(2 * l + 1);
    Eigen::VectorXd z =
        ConstMatMap(w.data(), spec.layer_out(l), spec.layer_in(l)) * x +
        ConstVecMap(b.data(), b.size());
    if (l + 1 < spec.layers()) {
      if (spec.activation == Activation::tanh)
        z = z.array().tanh();
      else
        z = z.array().max(0.0);
    }
    x = std::move(z);
  }
  return {x.data(), x.data() + x.size()};
}

std::vector<Var> mlp_forward(Tape& tape, const MlpSpec& spec,
                             std::span<const Var> params,
                             std::span<const Var> input) {
  spec.validate();
  if (input.size() != spec.input_dim)
    throw DimensionError("segment 'input' has length " +
                         std::to_string(input.size()) + ", expected " +
                         std::to_string(spec.input_dim));
  std::size_t expected = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l)
    expected += spec.layer_out(l) * (spec.layer_in(l) + 1);
  if (params.size() != expected)
    throw DimensionError("MLP parameter vector has length " +
                         std::to_string(params.size()) + ", expected " +
                         std::to_string(expected));

  std::vector<Var> x(input.begin(), input.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.layers(); ++l) {
    const std::size_t in = spec.layer_in(l), out = spec.layer_out(l);
    const std::size_t w0 = offset, b0 = offset + in * out;
    std::vector<Var> z(out);
    std::vector<Var> terms(in + 1);
    for (std::size_t i = 0; i < out; ++i) {
      for (std::size_t j = 0; j < in; ++j)
        terms[j] = params[w0 + j * out + i] * x[j];  // column-major W
      terms[in] = params[b0 + i];
      z[i] = tape.sum(terms);
      if (l + 1 < spec.layers()) {
        z[i] = spec.activation == Activation::tanh
                   ? tape.tanh(z[i])
                   : tape.max(z[i], tape.constant(0.0));
      }
    }
    x = std::move(z);
    offset = b0 + out;
  }
  return x;
}

MlpBatch::MlpBatch(MlpSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

const Eigen::MatrixXd& MlpBatch::forward(const ParameterVector& params,
                                         const Eigen::MatrixXd& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != spec_.input_dim)
    throw DimensionError("segment 'input' has " + std::to_string(inputs.rows()) +
                         " rows, expected " + std::to_string(spec_.input_dim));
  activations_.resize(spec_.layers() + 1);
  activations_[0] = inputs;
  for (std::size_t l = 0; l < spec_.layers(); ++l) {
    auto w = params.segment(2 * l);
    auto b = params.segment(2 * l + 1);
    Eigen::MatrixXd z =
        ConstMatMap(w.data(), spec_.layer_out(l), spec_.layer_in(l)) *
        activations_[l];
    z.colwise() += ConstVecMap(b.data(), b.size());
    if (l + 1 < spec_.layers()) {
      if (spec_.activation == Activation::tanh)
        z = z.array().tanh();
      else
        z = z.array().max(0.0);
    }
    activations_[l + 1] = std::move(z);
  }
  return activations_.back();
}

Eigen::MatrixXd MlpBatch::backward(const ParameterVector& params,
                                   const Eigen::MatrixXd& grad_output,
                                   std::span<double> grad_params) {
  if (activations_.size() != spec_.layers() + 1)
    throw Error("MlpBatch::backward called before forward");
  if (!grad_params.empty() && grad_params.size() != params.size())
    throw DimensionError("gradient buffer does not match parameter length");
  Eigen::MatrixXd delta = grad_output;
  for (std::size_t l = spec_.layers(); l-- > 0;) {
    const std::size_t in = spec_.layer_in(l), out = spec_.layer_out(l);
    if (l + 1 < spec_.layers()) {
      const auto& h = activations_[l + 1];
      if (spec_.activation == Activation::tanh)
        delta.array() *= 1.0 - h.array().square();
      else
        delta.array() *= (h.array() > 0.0).cast<double>();
    }
    if (!grad_params.empty()) {
      const Segment& ws = params.layout()[2 * l];
      const Segment& bs = params.layout()[2 * l + 1];
      // Products land in aligned temporaries first: evaluating them straight
      // into the caller's buffer lets its alignment change the summation
      // order, and with it the last bits of the result.
      const Eigen::MatrixXd grad_w = delta * activations_[l].transpose();
      const Eigen::VectorXd grad_b = delta.rowwise().sum();
      MatMap(grad_params.data() + ws.offset, out, in) += grad_w;
      VecMap(grad_params.data() + bs.offset, out) += grad_b;
    }
    auto w = params.segment(2 * l);
    delta = ConstMatMap(w.data(), out, in).transpose() * delta;
  }
  return delta;
}

}  // namespace mixpol
