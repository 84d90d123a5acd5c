#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "windsr/field.h"

namespace windsr::metrics {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// 10 log10(range^2 / MSE); identical inputs return kInfinitePsnr.
double psnr(const Grid& reference, const Grid& candidate, double data_range);
double mse(const Grid& a, const Grid& b);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean of the Gaussian-weighted SSIM map over every position where the window
// fits entirely inside the field.
double ssim(const Grid& reference, const Grid& candidate, const SsimParams& params);

enum class CrBasis { kGrid, kBytes };

inline constexpr std::size_t kBytesPerSourceElement = 4;

// Grid methods compare element counts; byte methods compare against a 32-bit
// float source.
double compression_ratio(CrBasis basis, std::size_t original_elements, std::size_t compressed);

struct MetricRecord {
  std::string method;
  double d_or_q = 0.0;  // d for grid methods, Q for quantizers, scale for SR rows
  double h_in = 0.0;
  double h_out = 0.0;
  std::string component;
  double cr = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

// Field evaluation in physical units with data_range = max - min of the reference.
struct FieldScore {
  double psnr = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};
FieldScore score_field(const Grid& reference, const Grid& candidate);

struct Aggregate {
  double mean_psnr = 0.0;  // finite values only
  double mean_ssim = 0.0;
  double mean_mse = 0.0;
  std::size_t count = 0;
  std::size_t infinite_psnr = 0;
};
Aggregate aggregate(const std::vector<FieldScore>& scores);

// Column order: method,d_or_Q,h_in,h_out,component,cr,psnr,ssim
void write_csv(std::ostream& os, const std::vector<MetricRecord>& records);
std::string to_json(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> from_json(const std::string& text);

}  // namespace windsr::metrics
