#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace windsr {

// Row-major 2-D grid of reals.
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double min() const;
  double max() const;
  bool all_finite() const;

  bool operator==(const Grid&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Component { kNorthern, kEastern };

std::string_view to_string(Component c);
Component component_from_string(std::string_view s);

struct WindField {
  Grid values;
  double altitude = 10.0;  // meters above ground
  Component component = Component::kNorthern;
  long timestamp_id = 0;

  std::size_t rows() const noexcept { return values.rows(); }
  std::size_t cols() const noexcept { return values.cols(); }
};

// Throws kDomain unless the field is finite and at least 2x2.
void validate(const WindField& field);

}  // namespace windsr
