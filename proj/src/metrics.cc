#include "windsr/metrics.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include "json.hpp"
#include <ostream>

#include "windsr/error.h"

namespace windsr::metrics {

namespace {

void check_same_shape(const Grid& a, const Grid& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShape,
          "metric inputs differ in shape: " + std::to_string(a.rows()) + "x" +
              std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
              std::to_string(b.cols()));
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - c;
    w[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "valid" filtering.
Grid filter_valid(const Grid& in, const std::vector<double>& w) {
  const std::size_t k = w.size();
  const std::size_t rows = in.rows() - k + 1;
  const std::size_t cols = in.cols() - k + 1;
  Grid tmp(in.rows(), cols);
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += w[t] * in(r, c + t);
      tmp(r, c) = acc;
    }
  Grid out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += w[t] * tmp(r + t, c);
      out(r, c) = acc;
    }
  return out;
}

Grid product(const Grid& a, const Grid& b) {
  Grid out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

}  // namespace

double mse(const Grid& a, const Grid& b) {
  check_same_shape(a, b);
  require(!a.empty(), ErrorKind::kShape, "mse of empty grids");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const Grid& reference, const Grid& candidate, double data_range) {
  check_same_shape(reference, candidate);
  require(data_range > 0.0, ErrorKind::kDomain, "psnr data_range must be positive");
  const double err = mse(reference, candidate);
  if (err == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(data_range * data_range / err);
}

double ssim(const Grid& reference, const Grid& candidate, const SsimParams& p) {
  check_same_shape(reference, candidate);
  require(p.window >= 1 && p.sigma > 0.0 && p.data_range > 0.0, ErrorKind::kDomain,
          "invalid ssim parameters");
  const auto win = static_cast<std::size_t>(p.window);
  require(reference.rows() >= win && reference.cols() >= win, ErrorKind::kDomain,
          "field smaller than the ssim window");

  const auto w = gaussian_window(p.window, p.sigma);
  const Grid mu_x = filter_valid(reference, w);
  const Grid mu_y = filter_valid(candidate, w);
  const Grid xx = filter_valid(product(reference, reference), w);
  const Grid yy = filter_valid(product(candidate, candidate), w);
  const Grid xy = filter_valid(product(reference, candidate), w);

  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);

  double acc = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x.values()[i];
    const double my = mu_y.values()[i];
    const double vx = xx.values()[i] - mx * mx;
    const double vy = yy.values()[i] - my * my;
    const double cxy = xy.values()[i] - mx * my;
    acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
           ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mu_x.size());
}

double compression_ratio(CrBasis basis, std::size_t original_elements, std::size_t compressed) {
  require(original_elements > 0, ErrorKind::kDomain, "compression ratio of empty original");
  const double original = basis == CrBasis::kGrid
                              ? static_cast<double>(original_elements)
                              : static_cast<double>(original_elements * kBytesPerSourceElement);
  return 100.0 * (1.0 - static_cast<double>(compressed) / original);
}

FieldScore score_field(const Grid& reference, const Grid& candidate) {
  FieldScore s;
  double range = reference.max() - reference.min();
  // A flat reference has no meaningful range; fall back to unit range.
  if (range <= 0.0) range = 1.0;
  s.mse = mse(reference, candidate);
  s.psnr = psnr(reference, candidate, range);
  s.ssim = ssim(reference, candidate, SsimParams{.data_range = range});
  return s;
}

Aggregate aggregate(const std::vector<FieldScore>& scores) {
  Aggregate a;
  a.count = scores.size();
  std::size_t finite = 0;
  for (const auto& s : scores) {
    if (std::isinf(s.psnr)) {
      ++a.infinite_psnr;
    } else {
      a.mean_psnr += s.psnr;
      ++finite;
    }
    a.mean_ssim += s.ssim;
    a.mean_mse += s.mse;
  }
  if (finite > 0) a.mean_psnr /= static_cast<double>(finite);
  if (a.count > 0) {
    a.mean_ssim /= static_cast<double>(a.count);
    a.mean_mse /= static_cast<double>(a.count);
  }
  return a;
}

void write_csv(std::ostream& os, const std::vector<MetricRecord>& records) {
  os << "method,d_or_Q,h_in,h_out,component,cr,psnr,ssim\n";
  for (const auto& r : records) {
    os << r.method << ',' << r.d_or_q << ',' << r.h_in << ',' << r.h_out << ',' << r.component
       << ',' << std::setprecision(10) << r.cr << ',' << r.psnr << ',' << r.ssim
       << std::setprecision(6) << '\n';
  }
}

namespace {

nlohmann::json number_or_string(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInfinitePsnr;
    if (s == "-inf") return -kInfinitePsnr;
    fail(ErrorKind::kDecode, "unexpected metric value '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

std::string to_json(const std::vector<MetricRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) {
    arr.push_back({{"method", r.method},
                   {"d_or_Q", r.d_or_q},
                   {"h_in", r.h_in},
                   {"h_out", r.h_out},
                   {"component", r.component},
                   {"cr", r.cr},
                   {"psnr", number_or_string(r.psnr)},
                   {"ssim", r.ssim}});
  }
  return arr.dump(2);
}

std::vector<MetricRecord> from_json(const std::string& text) {
  std::vector<MetricRecord> out;
  const auto arr = nlohmann::json::parse(text);
  for (const auto& j : arr) {
    MetricRecord r;
    r.method = j.at("method").get<std::string>();
    r.d_or_q = j.at("d_or_Q").get<double>();
    r.h_in = j.at("h_in").get<double>();
    r.h_out = j.at("h_out").get<double>();
    r.component = j.at("component").get<std::string>();
    r.cr = j.at("cr").get<double>();
    r.psnr = number_from(j.at("psnr"));
    r.ssim = j.at("ssim").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace windsr::metrics
