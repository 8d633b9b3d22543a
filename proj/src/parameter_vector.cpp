#include "mixpol/parameter_vector.hpp"

#include <algorithm>
#include <cmath>

namespace mixpol {

std::size_t ParameterVector::add_segment(std::string name, std::size_t rows,
                                         std::size_t cols) {
  layout_.push_back({std::move(name), rows, cols, values_.size()});
  values_.resize(values_.size() + rows * cols, 0.0);
  return layout_.size() - 1;
}

std::span<double> ParameterVector::segment(std::size_t i) {
  const Segment& s = layout_.at(i);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParameterVector::segment(std::size_t i) const {
  const Segment& s = layout_.at(i);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

bool ParameterVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

}  // namespace mixpol
