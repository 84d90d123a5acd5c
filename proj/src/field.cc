#include "windsr/field.h"

#include <algorithm>
#include <cmath>

#include "windsr/error.h"

namespace windsr {

Grid::Grid(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, ErrorKind::kShape,
          "grid data size does not match " + std::to_string(rows) + "x" +
              std::to_string(cols));
}

double Grid::min() const {
  require(!data_.empty(), ErrorKind::kShape, "min of empty grid");
  return *std::min_element(data_.begin(), data_.end());
}

double Grid::max() const {
  require(!data_.empty(), ErrorKind::kShape, "max of empty grid");
  return *std::max_element(data_.begin(), data_.end());
}

bool Grid::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view to_string(Component c) {
  return c == Component::kNorthern ? "northern" : "eastern";
}

Component component_from_string(std::string_view s) {
  if (s == "northern") return Component::kNorthern;
  if (s == "eastern") return Component::kEastern;
  fail(ErrorKind::kConfig, "unknown component '" + std::string(s) + "'");
}

void validate(const WindField& field) {
  require(field.rows() >= 2 && field.cols() >= 2, ErrorKind::kDomain,
          "wind field must be at least 2x2");
  require(field.values.all_finite(), ErrorKind::kDomain, "wind field has non-finite values");
}

}  // namespace windsr
