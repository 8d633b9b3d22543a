#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "mixpol/parameter_vector.hpp"
#include "mixpol/rng.hpp"
#include "mixpol/tape.hpp"

namespace mixpol {

enum class Activation { tanh, relu };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;

  std::size_t layers() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t l) const;
  std::size_t layer_out(std::size_t l) const;
  /// Throws DimensionError when any width is zero.
  void validate() const;
};

/// Zero parameters laid out as W0, b0, W1, b1, ... with W_l stored
/// column-major as (out x in).
ParameterVector make_mlp_parameters(const MlpSpec& spec);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
void initialize_mlp(const MlpSpec& spec, ParameterVector& params, Rng& rng);

/// Throws DimensionError naming the first segment that does not match.
void check_layout(const MlpSpec& spec, const ParameterVector& params);

std::vector<double> mlp_forward(const MlpSpec& spec,
                                const ParameterVector& params,
                                std::span<const double> input);

/// Same network recorded node by node on a tape. `params` follows the flat
/// layout of make_mlp_parameters.
std::vector<Var> mlp_forward(Tape& tape, const MlpSpec& spec,
                             std::span<const Var> params,
                             std::span<const Var> input);

/// Batched forward/backward pass with cached activations. Samples are
/// columns.
class MlpBatch {
 public:
  explicit MlpBatch(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }

  const Eigen::MatrixXd& forward(const ParameterVector& params,
                                 const Eigen::MatrixXd& inputs);

  /// Backpropagates dL/d(output) through the last forward() call. Adds the
  /// parameter gradient into `grad_params` when it is non-empty and returns
  /// dL/d(input).
  Eigen::MatrixXd backward(const ParameterVector& params,
                           const Eigen::MatrixXd& grad_output,
                           std::span<double> grad_params);

 private:
  MlpSpec spec_;
  std::vector<Eigen::MatrixXd> activations_;  // inputs to each layer, then output
};

}  // namespace mixpol
