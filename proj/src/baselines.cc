#include "windsr/baselines.h"

#include <algorithm>
#include <cmath>

#include "windsr/error.h"
#include "windsr/metrics.h"

namespace windsr::baselines {

void MuLawSpec::validate() const {
  require(mu > 0.0, ErrorKind::kDomain, "mu must be positive");
  require(levels >= 2, ErrorKind::kDomain, "quantization needs at least 2 levels");
}

double mu_law_encode(double x, double mu) {
  require(std::abs(x) <= 1.0 + 1e-9, ErrorKind::kDomain,
          "mu-law input outside [-1, 1]: " + std::to_string(x));
  require(mu > 0.0, ErrorKind::kDomain, "mu must be positive");
  const double a = std::min(std::abs(x), 1.0);
  return std::copysign(std::log1p(mu * a) / std::log1p(mu), x);
}

double mu_law_decode(double y, double mu) {
  require(std::abs(y) <= 1.0 + 1e-9, ErrorKind::kDomain,
          "mu-law code outside [-1, 1]: " + std::to_string(y));
  require(mu > 0.0, ErrorKind::kDomain, "mu must be positive");
  const double a = std::min(std::abs(y), 1.0);
  return std::copysign(std::expm1(a * std::log1p(mu)) / mu, y);
}

std::uint32_t quantize(double y, std::uint32_t levels) {
  require(levels >= 2, ErrorKind::kDomain, "quantization needs at least 2 levels");
  const double t = std::floor((y + 1.0) * 0.5 * levels);
  if (!(t > 0.0)) return 0;
  return static_cast<std::uint32_t>(std::min(t, static_cast<double>(levels - 1)));
}

double dequantize(std::uint32_t symbol, std::uint32_t levels) {
  require(levels >= 2 && symbol < levels, ErrorKind::kDomain, "symbol outside quantizer range");
  return -1.0 + (2.0 * symbol + 1.0) / levels;
}

CompressedBlob compress_field(const Grid& field, const MuLawSpec& spec, int order) {
  spec.validate();
  require(!field.empty(), ErrorKind::kShape, "cannot compress an empty field");
  const double lo = field.min();
  const double hi = field.max();
  const double span = hi - lo;
  std::vector<std::uint16_t> symbols;
  symbols.reserve(field.size());
  for (double v : field.values()) {
    const double y = span > 0.0 ? std::clamp(2.0 * (v - lo) / span - 1.0, -1.0, 1.0) : 0.0;
    symbols.push_back(static_cast<std::uint16_t>(quantize(mu_law_encode(y, spec.mu), spec.levels)));
  }
  CompressedBlob blob = ppm_compress(symbols, spec.levels, order);
  blob.header.rows = static_cast<std::uint32_t>(field.rows());
  blob.header.cols = static_cast<std::uint32_t>(field.cols());
  blob.header.min = lo;
  blob.header.max = hi;
  blob.header.mu = spec.mu;
  return blob;
}

Grid decompress_field(const CompressedBlob& blob) {
  const auto& h = blob.header;
  const auto symbols = ppm_decompress(blob);
  const double span = h.max - h.min;
  std::vector<double> values;
  values.reserve(symbols.size());
  for (auto s : symbols) {
    const double y = mu_law_decode(dequantize(s, h.levels), h.mu);
    values.push_back(h.min + 0.5 * (y + 1.0) * span);
  }
  return Grid(h.rows, h.cols, std::move(values));
}

// ---------------------------------------------------------------------------

double cubic_kernel(double x, double a) {
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::size_t anchor = 0;          // tap nearest to the sample center
  std::vector<std::size_t> index;  // clamped source indices
  std::vector<double> weight;      // normalized
};

std::vector<Taps> axis_taps(std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double stretch = std::min(scale, 1.0);
  const double radius = 2.0 / stretch;
  std::vector<Taps> taps(out);
  const auto last = static_cast<long>(in) - 1;
  for (std::size_t i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
    auto& t = taps[i];
    const long lo = static_cast<long>(std::ceil(center - radius));
    const long hi = static_cast<long>(std::floor(center + radius));
    double sum = 0.0;
    for (long j = lo; j <= hi; ++j) {
      const double w = cubic_kernel((center - static_cast<double>(j)) * stretch);
      if (w == 0.0) continue;
      t.index.push_back(static_cast<std::size_t>(std::clamp(j, 0L, last)));
      t.weight.push_back(w);
      sum += w;
    }
    for (double& w : t.weight) w /= sum;
    t.anchor = static_cast<std::size_t>(std::clamp(std::lround(center), 0L, last));
  }
  return taps;
}

// Each output is anchor + sum_j w_j (x_j - anchor); with normalized weights this
// is the usual weighted sum, and it reproduces constant inputs exactly.
double apply(const Taps& t, const double* src, std::size_t stride) {
  const double base = src[t.anchor * stride];
  double acc = 0.0;
  for (std::size_t k = 0; k < t.index.size(); ++k)
    acc += t.weight[k] * (src[t.index[k] * stride] - base);
  return base + acc;
}

}  // namespace

Grid bicubic_resize(const Grid& field, std::size_t out_rows, std::size_t out_cols) {
  require(!field.empty(), ErrorKind::kShape, "cannot resize an empty field");
  require(out_rows >= 1 && out_cols >= 1, ErrorKind::kDomain, "resize output dimension < 1");
  if (out_rows == field.rows() && out_cols == field.cols()) return field;

  const auto col_taps = axis_taps(field.cols(), out_cols);
  const auto row_taps = axis_taps(field.rows(), out_rows);

  Grid tmp(field.rows(), out_cols);
  for (std::size_t r = 0; r < field.rows(); ++r) {
    const double* src = field.values().data() + r * field.cols();
    for (std::size_t c = 0; c < out_cols; ++c) tmp(r, c) = apply(col_taps[c], src, 1);
  }
  Grid out(out_rows, out_cols);
  for (std::size_t c = 0; c < out_cols; ++c) {
    const double* src = tmp.values().data() + c;
    for (std::size_t r = 0; r < out_rows; ++r) out(r, c) = apply(row_taps[r], src, out_cols);
  }
  return out;
}

Grid bicubic_resize(const Grid& field, double factor) {
  require(factor > 0.0 && std::isfinite(factor), ErrorKind::kDomain,
          "resize factor must be positive");
  const double rows = std::round(factor * static_cast<double>(field.rows()));
  const double cols = std::round(factor * static_cast<double>(field.cols()));
  require(rows >= 1.0 && cols >= 1.0, ErrorKind::kDomain, "resize output dimension < 1");
  return bicubic_resize(field, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
}

// ---------------------------------------------------------------------------

PowerLawResult power_law_transform(const Grid& field, const PowerLawSpec& spec) {
  require(spec.h_in > 0.0 && spec.h_out > 0.0, ErrorKind::kDomain,
          "power law heights must be positive");
  const double ratio = std::pow(spec.h_out / spec.h_in, spec.alpha);
  PowerLawResult result{field, 0};
  for (double& v : result.field.values()) {
    if (v < 0.0) {
      v = 0.0;
      ++result.clamped;
    }
    v *= ratio;
  }
  return result;
}

std::string BaselineMethod::id() const {
  switch (kind) {
    case BaselineKind::kPpm: return "PPM_Q=" + std::to_string(param);
    case BaselineKind::kBicubic: return "Bicubic_d=" + std::to_string(param);
    case BaselineKind::kLossless: return "Lossless";
  }
  return "unknown";
}

BaselineResult baseline_pipeline(const Grid& field, const BaselineMethod& method, double h_in,
                                 double h_out, double alpha) {
  require(!field.empty(), ErrorKind::kShape, "baseline input is empty");
  BaselineResult result;
  switch (method.kind) {
    case BaselineKind::kPpm: {
      const CompressedBlob blob =
          compress_field(field, MuLawSpec{method.mu, method.param}, method.ppm_order);
      result.compressed_size = blob.total_bytes();
      result.cr_percent = metrics::compression_ratio(metrics::CrBasis::kBytes, field.size(),
                                                     result.compressed_size);
      result.reconstruction_in = decompress_field(CompressedBlob::parse(blob.serialize()));
      break;
    }
    case BaselineKind::kBicubic: {
      const std::size_t d = method.param;
      require(d >= 1 && field.rows() % d == 0 && field.cols() % d == 0, ErrorKind::kShape,
              "bicubic factor " + std::to_string(d) + " must divide the field dims");
      const Grid reduced = bicubic_resize(field, field.rows() / d, field.cols() / d);
      result.compressed_size = reduced.size();
      result.cr_percent = metrics::compression_ratio(metrics::CrBasis::kGrid, field.size(),
                                                     result.compressed_size);
      result.reconstruction_in = bicubic_resize(reduced, field.rows(), field.cols());
      break;
    }
    case BaselineKind::kLossless:
      result.compressed_size = field.size();
      result.cr_percent = 0.0;
      result.reconstruction_in = field;
      break;
  }
  auto transformed = power_law_transform(result.reconstruction_in, {alpha, h_in, h_out});
  result.reconstruction = std::move(transformed.field);
  result.clamped = transformed.clamped;
  return result;
}

}  // namespace windsr::baselines
