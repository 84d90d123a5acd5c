#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "windsr/error.h"
#include "windsr/neuralcore.h"

using namespace windsr;
using namespace windsr::neuralcore;
namespace ad = windsr::autodiff;

namespace {

Grid ramp(std::size_t rows, std::size_t cols, double phase = 0.0) {
  Grid g(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      g(r, c) = std::sin(0.3 * r + phase) + 0.5 * std::cos(0.2 * c) + 0.01 * r * c / cols;
  return g;
}

ModelConfig small(DecoderVariant v, int d = 8) {
  ModelConfig c = ModelConfig::tiny();
  c.reduction = d;
  c.variant = v;
  c.seed = 11;
  return c;
}

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

void fill_parameters(ParameterSet& ps, std::string_view prefix, double v) {
  for (auto& p : ps.all())
    if (p.name.starts_with(prefix)) {
      Var var = p.var;
      var.mutable_value().fill(v);
    }
}

}  // namespace

TEST_CASE("reduction produces the expected latent shapes") {
  ModelBundle m8(small(DecoderVariant::kGei, 8));
  const LatentGrid l8 = reduce(m8, 1, 1, ramp(120, 160));
  CHECK(l8.values.shape() == ad::Shape{2, 15, 20});
  CHECK(l8.reduction == 8);

  ModelBundle m4(small(DecoderVariant::kGei, 4));
  CHECK(reduce(m4, 1, 2, ramp(120, 160)).values.shape() == ad::Shape{2, 30, 40});

  CHECK(kind_of([&] { reduce(m8, 1, 1, ramp(120, 161)); }) == ErrorKind::kShape);
  CHECK(kind_of([&] { reduce(m8, 3, 1, ramp(120, 160)); }) == ErrorKind::kDomain);
}

TEST_CASE("reduction is pure") {
  ModelBundle m(small(DecoderVariant::kGei, 4));
  const Grid f = ramp(32, 48);
  CHECK(reduce(m, 2, 1, f).values == reduce(m, 2, 1, f).values);
  ModelBundle again(small(DecoderVariant::kGei, 4));
  CHECK(reduce(again, 2, 1, f).values == reduce(m, 2, 1, f).values);
}

TEST_CASE("feature encoder output and residual identity") {
  ModelConfig cfg = small(DecoderVariant::kLiif, 8);
  cfg.feature_channels = 64;
  cfg.feature_blocks = 2;
  ModelBundle m(cfg);
  const LatentGrid l = reduce(m, 1, 1, ramp(120, 160));
  const FeatureGrid fg = extract_feature_grid(m, 1, l);
  CHECK(fg.values.shape() == ad::Shape{64, 15, 20});
  CHECK(fg.cell_y() == doctest::Approx(2.0 / 15));

  // With the second conv of every block zeroed the residual branches vanish.
  for (auto& p : m.parameters().all())
    if (p.name.starts_with("FE1.block") && p.name.find("conv2") != std::string::npos) {
      Var v = p.var;
      v.mutable_value().fill(0.0);
    }
  ad::NoGradGuard guard;
  const Tensor stem = m.feature_encoder(1).stem(ad::constant(l.values)).value();
  CHECK(extract_feature_grid(m, 1, l).values == stem);
}

TEST_CASE("unfolded features have nine times the channels") {
  ModelConfig cfg = small(DecoderVariant::kLiif, 4);
  cfg.feature_unfold = true;
  ModelBundle m(cfg);
  const FeatureGrid fg = extract_feature_grid(m, 1, reduce(m, 1, 1, ramp(16, 16)));
  CHECK(fg.values.dim(0) == 9 * cfg.feature_channels);
  CHECK(cfg.local_width() == 9 * cfg.feature_channels + 4);
  CHECK(predict_grid(m, ramp(16, 16), 1, 1, 1.5).rows() == 24);
}

TEST_CASE("local ensemble weights and relative coordinates") {
  FeatureGrid fg{Tensor({3, 5, 7})};
  for (std::size_t i = 0; i < fg.values.size(); ++i) fg.values[i] = 0.1 * static_cast<double>(i);

  CoordinateBatch b;
  b.cell_y = 0.05;
  b.cell_x = 0.02;
  b.coords = {0.0, 0.0, -1.0, 1.0, 0.33, -0.71, 0.999, -0.999, 1.0, 1.0};
  const LocalFeatures lf = liif_query(fg, b);
  REQUIRE(lf.count == 5);
  CHECK(lf.width() == 3 + 4);
  CHECK(lf.weights.size() == 20);
  for (std::size_t q = 0; q < lf.count; ++q) {
    double s = 0.0;
    for (int k = 0; k < kEnsembleSize; ++k) {
      const double w = lf.weights[k * lf.count + q];
      CHECK(w >= 0.0);
      s += w;
      // Offsets are in half-cell units of the latent grid.
      CHECK(std::abs(lf.relative[2 * (k * lf.count + q)]) <= 2.0 + 1e-9);
      CHECK(std::abs(lf.relative[2 * (k * lf.count + q) + 1]) <= 2.0 + 1e-9);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Cell tail of the input vector: cell * latent size.
  const auto v = lf.vector(2, 1);
  CHECK(v[5] == doctest::Approx(0.05 * 5));
  CHECK(v[6] == doctest::Approx(0.02 * 7));
}

TEST_CASE("a query at a latent cell center has zero offset to that cell") {
  FeatureGrid fg{Tensor({1, 4, 6})};
  for (std::size_t i = 0; i < fg.values.size(); ++i) fg.values[i] = static_cast<double>(i);
  // Center of cell (2, 3).
  const double y = -1.0 + 5.0 / 4.0, x = -1.0 + 7.0 / 6.0;
  CoordinateBatch b{{y, x}, 0.1, 0.1};
  const LocalFeatures lf = liif_query(fg, b);
  bool found = false;
  for (int k = 0; k < kEnsembleSize; ++k) {
    const auto v = lf.vector(0, k);
    if (v[0] == 2 * 6 + 3) {
      found = true;
      CHECK(v[1] == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(v[2] == doctest::Approx(0.0).epsilon(1e-9));
    }
  }
  CHECK(found);
}

TEST_CASE("ensemble weights are bilinear interpolation weights") {
  // For an interior point the four candidates are the surrounding cells and
  // each weight equals the bilinear weight of its cell.
  FeatureGrid fg{Tensor({1, 4, 4})};
  const double y = -0.1, x = 0.3;
  CoordinateBatch b{{y, x}, 0.01, 0.01};
  const LocalFeatures lf = liif_query(fg, b);
  // Pixel-space position relative to cell centers.
  const double py = (y + 1.0) / 2.0 * 4 - 0.5, px = (x + 1.0) / 2.0 * 4 - 0.5;
  const double fy = py - std::floor(py), fx = px - std::floor(px);
  for (int k = 0; k < kEnsembleSize; ++k) {
    const double ry = lf.relative[2 * k], rx = lf.relative[2 * k + 1];
    const double wy = ry < 0 ? fy : 1.0 - fy;
    const double wx = rx < 0 ? fx : 1.0 - fx;
    CHECK(lf.weights[k] == doctest::Approx(wy * wx).epsilon(1e-6));
  }
}

TEST_CASE("constant feature grid gives coordinate independent features") {
  FeatureGrid fg{Tensor({2, 3, 3}, 0.7)};
  const auto b = CoordinateBatch::grid_centers(9, 9);
  const LocalFeatures lf = liif_query(fg, b);
  for (std::size_t q = 0; q < lf.count; ++q)
    for (int k = 0; k < kEnsembleSize; ++k) {
      const auto v = lf.vector(q, k);
      CHECK(v[0] == 0.7);
      CHECK(v[1] == 0.7);
    }
}

TEST_CASE("constant feature grid decodes to a constant through an affine decoder") {
  // Positive first-layer bias and nonnegative hidden weights keep every ReLU
  // active, so the decoder is affine in the relative coordinate and the
  // bilinear ensemble cancels it.
  ModelBundle m(small(DecoderVariant::kLiif, 4));
  fill_parameters(m.parameters(), "D1.local_in.bias", 50.0);
  fill_parameters(m.parameters(), "D1.hidden1.bias", 0.1);
  for (auto& p : m.parameters().all())
    if (p.name.starts_with("D1.hidden") && p.name.ends_with(".weight")) {
      Var v = p.var;
      for (double& x : v.mutable_value().values()) x = std::abs(x);
    }
  const FeatureGrid fg{Tensor({m.config().feature_channels, 5, 5}, -0.4)};
  // Interior queries, between the outermost cell centers.
  auto b = CoordinateBatch::grid_centers(40, 40);
  std::vector<double> inner;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (std::abs(b.y(i)) < 0.8 && std::abs(b.x(i)) < 0.8) inner.insert(inner.end(), {b.y(i), b.x(i)});
  b.coords = inner;
  const auto out = decode(m, 1, liif_query(fg, b), nullptr, nullptr);
  for (double v : out) CHECK(v == doctest::Approx(out[0]).epsilon(1e-10));

  // The same queries through the untouched decoder are not constant.
  ModelBundle plain(small(DecoderVariant::kLiif, 4));
  const auto varied = decode(plain, 1, liif_query(fg, b), nullptr, nullptr);
  CHECK(*std::max_element(varied.begin(), varied.end()) - *std::min_element(varied.begin(), varied.end()) > 1e-6);
}

TEST_CASE("out of range query coordinates are rejected") {
  FeatureGrid fg{Tensor({1, 2, 2})};
  CHECK(kind_of([&] { liif_query(fg, CoordinateBatch{{1.5, 0.0}, 0.1, 0.1}); }) ==
        ErrorKind::kDomain);
  CHECK(kind_of([&] {
          liif_query(fg, CoordinateBatch{{std::numeric_limits<double>::quiet_NaN(), 0.0}, 0.1, 0.1});
        }) == ErrorKind::kDomain);
}

TEST_CASE("global encoder output length and spatial sensitivity") {
  ModelBundle m(small(DecoderVariant::kGei, 8));
  const LatentGrid a = reduce(m, 1, 1, ramp(120, 160));
  CHECK(global_encode(m, 1, a).size() == 8);
  ModelBundle m4(small(DecoderVariant::kGei, 4));
  CHECK(global_encode(m4, 1, reduce(m4, 1, 1, ramp(120, 160))).size() == 8);

  // Permuting latent cells changes the global vector.
  LatentGrid p = a;
  const int h = p.values.dim(1), w = p.values.dim(2);
  for (int c = 0; c < p.values.dim(0); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        p.values[(c * h + y) * w + x] = a.values[(c * h + (h - 1 - y)) * w + (x + 7) % w];
  const Tensor ga = global_encode(m, 1, a), gp = global_encode(m, 1, p);
  double diff = 0.0;
  for (std::size_t i = 0; i < ga.size(); ++i) diff += std::abs(ga[i] - gp[i]);
  CHECK(diff > 1e-9);

  ModelBundle liif(small(DecoderVariant::kLiif, 8));
  CHECK(kind_of([&] { global_encode(liif, 1, a); }) == ErrorKind::kConfig);
}

TEST_CASE("positional encoding") {
  const Tensor t = positional_encode(CoordinateBatch{{0.0, 0.0}, 0.1, 0.1}, 2);
  CHECK(t.shape() == ad::Shape{1, 8});
  const std::vector<double> expect = {0, 1, 0, 1, 0, 1, 0, 1};
  for (int i = 0; i < 8; ++i) CHECK(t[i] == doctest::Approx(expect[i]));

  const Tensor e = positional_encode(CoordinateBatch{{1.0, -1.0, 0.25, 0.5}, 0.1, 0.1}, 3);
  CHECK(e.shape() == ad::Shape{2, 12});
  CHECK(std::abs(e[0]) < 1e-12);   // sin(pi)
  CHECK(std::abs(e[2]) < 1e-12);   // sin(-pi)
  CHECK(e[1] == doctest::Approx(-1.0));
  // j = 2, y = 0.25: sin(pi) and cos(pi)
  CHECK(std::abs(e[12 + 8]) < 1e-12);
  CHECK(e[12 + 9] == doctest::Approx(-1.0));
  CHECK(e[12 + 2] == doctest::Approx(1.0));  // sin(pi/2)
  CHECK(kind_of([] { positional_encode(CoordinateBatch{}, 0); }) == ErrorKind::kConfig);
}

TEST_CASE("decoder input widths per variant") {
  ModelConfig c;
  c.feature_channels = 64;
  c.global_dim = 512;
  c.positional_freqs = 6;
  const int p = 64 + 4;
  c.variant = DecoderVariant::kLiif;
  CHECK(c.decoder_input_width() == p);
  c.variant = DecoderVariant::kGei;
  CHECK(c.decoder_input_width() == p + 512);
  c.variant = DecoderVariant::kPei;
  CHECK(c.decoder_input_width() == p + 24);
  c.variant = DecoderVariant::kGpei;
  CHECK(c.decoder_input_width() == p + 512 + 24);
}

TEST_CASE("zero output layer yields its bias") {
  ModelBundle m(small(DecoderVariant::kGpei, 4));
  const Linear& out = m.decoder(2).output_layer();
  Var w = out.weight, b = out.bias;
  w.mutable_value().fill(0.0);
  b.mutable_value().fill(0.375);
  const auto batch = CoordinateBatch::grid_centers(5, 3);
  for (double v : predict(m, ramp(16, 16), 1, 2, batch)) CHECK(v == doctest::Approx(0.375));
}

TEST_CASE("decoder rejects missing or unexpected inputs") {
  ModelBundle gei(small(DecoderVariant::kGei, 4));
  FeatureGrid fg{Tensor({8, 4, 4})};
  const LocalFeatures lf = liif_query(fg, CoordinateBatch::grid_centers(2, 2));
  CHECK(kind_of([&] { decode(gei, 1, lf, nullptr, nullptr); }) == ErrorKind::kShape);
  ModelBundle liif(small(DecoderVariant::kLiif, 4));
  const Tensor g({1, 8});
  CHECK(kind_of([&] { decode(liif, 1, lf, &g, nullptr); }) == ErrorKind::kShape);
  CHECK(decode(gei, 1, lf, &g, nullptr).size() == 4);
}

TEST_CASE("routing uses the target head and the source-to-target encoder") {
  CHECK(ModelBundle::route(1, 1) == Route{1, 1, 1});
  CHECK(ModelBundle::route(1, 2) == Route{1, 2, 2});
  CHECK(ModelBundle::route(2, 1) == Route{2, 1, 1});
  CHECK(ModelBundle::route(2, 2) == Route{2, 2, 2});
  CHECK(kind_of([] { ModelBundle::route(0, 1); }) == ErrorKind::kDomain);

  // Poisoning the cross encoders and the other head leaves self prediction untouched.
  ModelBundle m(small(DecoderVariant::kGei, 4));
  const Grid f = ramp(16, 24);
  const auto batch = CoordinateBatch::grid_centers(7, 5);
  const auto before = predict(m, f, 1, 1, batch);
  const auto cross_before = predict(m, f, 2, 1, batch);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto prefix : {"E12", "E21", "E22", "FE2", "G2", "D2"}) fill_parameters(m.parameters(), prefix, nan);
  const auto after = predict(m, f, 1, 1, batch);
  CHECK(before == after);
  CHECK(predict(m, f, 2, 1, batch) != cross_before);
}

TEST_CASE("parameter names and counts") {
  ModelBundle gei(small(DecoderVariant::kGei, 4));
  ModelBundle liif(small(DecoderVariant::kLiif, 4));
  CHECK(gei.parameters().find("D1.global_in.weight").defined());
  CHECK(kind_of([&] { liif.parameters().find("G1.stage0.weight"); }) == ErrorKind::kConfig);
  CHECK(gei.parameters().scalar_count() > liif.parameters().scalar_count());
  for (const auto& p : liif.parameters().all()) CHECK(!p.name.starts_with("G"));
}

TEST_CASE("predict_grid output sizes and continuity in scale") {
  ModelBundle m(small(DecoderVariant::kGpei, 8));
  const Grid f = ramp(120, 160);
  const Grid s1 = predict_grid(m, f, 1, 1, 1.0);
  CHECK(s1.rows() == 120);
  CHECK(s1.cols() == 160);
  const Grid s15 = predict_grid(m, f, 1, 2, 1.5);
  CHECK(s15.rows() == 180);
  CHECK(s15.cols() == 240);
  CHECK(s15.all_finite());
  CHECK(kind_of([&] { predict_grid(m, f, 1, 1, 0.5); }) == ErrorKind::kDomain);

  // Same output grid, cell differs by a tiny amount: predictions change smoothly.
  const LatentGrid l = reduce(m, 1, 1, ramp(32, 32));
  const auto state_eval = [&](double cell) {
    auto b = CoordinateBatch::grid_centers(64, 64);
    b.cell_y = b.cell_x = cell;
    ad::NoGradGuard guard;
    const auto st = m.head(1, ad::constant(l.values));
    return m.decode_points(1, st, b).value();
  };
  const Tensor a = state_eval(2.0 / 64), b = state_eval(2.0 / 64.000032);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("GEI with zero global weights reproduces LIIF exactly") {
  ModelBundle liif(small(DecoderVariant::kLiif, 4));
  ModelBundle gei(small(DecoderVariant::kGei, 4));
  for (const auto& p : liif.parameters().all()) {
    Var dst = gei.parameters().find(p.name);
    dst.mutable_value() = p.var.value();
  }
  fill_parameters(gei.parameters(), "D1.global_in", 0.0);
  fill_parameters(gei.parameters(), "D2.global_in", 0.0);
  const Grid f = ramp(24, 32);
  const auto batch = CoordinateBatch::grid_centers(37, 41);
  for (int s = 1; s <= 2; ++s)
    for (int t = 1; t <= 2; ++t) CHECK(predict(liif, f, s, t, batch) == predict(gei, f, s, t, batch));
  CHECK(predict_grid(liif, f, 1, 2, 1.7) == predict_grid(gei, f, 1, 2, 1.7));
}

TEST_CASE("model configs validate") {
  ModelConfig c;
  c.validate();
  c.reduction = 6;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfig);
  c = ModelConfig::tiny();
  c.decoder_hidden.clear();
  CHECK(kind_of([&] { ModelBundle m(c); }) == ErrorKind::kConfig);
  CHECK(variant_from_string("GPEI-LIIF") == DecoderVariant::kGpei);
  CHECK(to_string(DecoderVariant::kPei) == "PEI-LIIF");
  CHECK(kind_of([] { variant_from_string("foo"); }) == ErrorKind::kConfig);
}

TEST_CASE("gradients reach every parameter used by a route") {
  ModelBundle m(small(DecoderVariant::kGpei, 4));
  const Var x = ad::constant(field_tensor(ramp(16, 16)));
  const auto batch = CoordinateBatch::grid_centers(6, 6);
  std::vector<double> target(batch.size(), 0.3);
  ad::backward(ad::mse(m.predict_points(2, 1, x, batch), target));
  for (const auto& p : m.parameters().all()) {
    const bool used = p.name.starts_with("E21") || p.name.starts_with("FE1") ||
                      p.name.starts_with("G1") || p.name.starts_with("D1");
    double norm = 0.0;
    if (p.var.grad().size() > 0)
      for (double g : p.var.grad().values()) norm += std::abs(g);
    INFO(p.name);
    if (used) CHECK(norm > 0.0);
    else CHECK(norm == 0.0);
  }
}
