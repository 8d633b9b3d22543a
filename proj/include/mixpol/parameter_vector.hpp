#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mixpol {

struct Segment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Flat array of reals with a named (rows x cols) segment layout. Storage
/// uses Eigen's aligned allocator so vectorized kernels see the same
/// alignment on every run, which keeps floating-point results reproducible.
class ParameterVector {
 public:
  using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

  ParameterVector() = default;

  /// Appends a zero-filled segment and returns its index.
  std::size_t add_segment(std::string name, std::size_t rows, std::size_t cols);

  std::span<double> segment(std::size_t i);
  std::span<const double> segment(std::size_t i) const;
  const std::vector<Segment>& layout() const { return layout_; }

  Storage& values() { return values_; }
  const Storage& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool all_finite() const;

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  Storage values_;
  std::vector<Segment> layout_;
};

}  // namespace mixpol
