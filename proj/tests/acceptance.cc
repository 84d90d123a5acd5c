// Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. Criterion numbers can be passed on the command line
// to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "windsr/baselines.h"
#include "windsr/datahub.h"
#include "windsr/evalharness.h"
#include "windsr/metrics.h"
#include "windsr/neuralcore.h"
#include "windsr/training.h"

#ifndef WINDSR_CLI
#error "WINDSR_CLI must name the command line binary"
#endif

using namespace windsr;
namespace bl = windsr::baselines;
namespace dh = windsr::datahub;
namespace eh = windsr::evalharness;
namespace nc = windsr::neuralcore;
namespace tr = windsr::training;
namespace ad = windsr::autodiff;
namespace fs = std::filesystem;
using windsr::autodiff::Tensor;
using windsr::autodiff::Var;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks with a short reason each.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o{failed_ == 0, summary};
    for (const auto& f : failures_) o.detail += "; " + f;
    return o;
  }

 private:
  std::vector<std::string> failures_;
  int failed_ = 0;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mse_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// --------------------------------------------------------------------------

Outcome cr_exactness() {
  Checks c;
  const Grid field(64, 64, 5.0);
  const double d8 = bl::baseline_pipeline(field, bl::BaselineMethod::bicubic(8), 10, 160).cr_percent;
  const double d4 = bl::baseline_pipeline(field, bl::BaselineMethod::bicubic(4), 10, 160).cr_percent;
  c.expect(d8 == 98.4375, "bicubic d=8 CR " + fmt("%.17g", d8));
  c.expect(d4 == 93.75, "bicubic d=4 CR " + fmt("%.17g", d4));
  // Latent grids of a c_L = 1 model.
  for (int d : {8, 4}) {
    nc::ModelConfig mc = nc::ModelConfig::tiny();
    mc.latent_channels = 1;
    mc.reduction = d;
    const nc::ModelBundle m(mc);
    const auto latent = nc::reduce(m, 1, 2, field);
    const double cr = metrics::compression_ratio(metrics::CrBasis::kGrid, field.size(),
                                                 latent.values.size());
    c.expect(cr == (d == 8 ? 98.4375 : 93.75), "latent CR at d=" + std::to_string(d));
  }
  return c.outcome("d=8 " + fmt("%.4f", d8) + ", d=4 " + fmt("%.4f", d4));
}

Outcome latent_identity() {
  Checks c;
  std::mt19937_64 rng(101);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> dim(1, 9);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const ad::Shape s1{dim(rng), dim(rng), dim(rng)}, s2{dim(rng), dim(rng), dim(rng)};
    auto make = [&](const ad::Shape& s) {
      Tensor t(s);
      for (double& v : t.values()) v = normal(rng) * 3.0;
      return t;
    };
    const Tensor a = make(s1), b = make(s1), cc = make(s2), e = make(s2);
    const auto flat = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    const double closed = (mse_oracle(flat(a), flat(b)) + mse_oracle(flat(cc), flat(e))) / 2.0;
    const double got = tr::loss_latent(ad::constant(a), ad::constant(b), ad::constant(cc),
                                       ad::constant(e)).value()[0];
    const double rel = std::abs(got - closed) / std::max(std::abs(closed), 1e-300);
    worst = std::max(worst, rel);
  }
  c.expect(worst <= 1e-9, "relative error " + fmt("%.3g", worst));
  return c.outcome("100 quadruples, max relative error " + fmt("%.3g", worst));
}

Outcome gradient_check() {
  Checks c;
  nc::ModelConfig mc = nc::ModelConfig::tiny();
  mc.seed = 21;
  nc::ModelBundle m(mc);
  tr::TrainConfig tc;
  tc.reduction = mc.reduction;
  tc.variant = mc.variant;
  tc.coords_per_instance = 64;
  dh::SynthSpec spec;
  spec.rows = 16;
  spec.cols = 16;
  spec.count = 2;
  const auto batch = dh::normalize(dh::pair_stacks(dh::synth_stack(8, spec), 10, 160));
  std::mt19937_64 rng(9);
  const auto samples = tr::sample_instances(batch, std::vector<std::size_t>{0, 1}, tc, rng);
  const auto r = tr::grad_check(m, samples, 500, 17);
  c.expect(r.checked == 500, "checked " + std::to_string(r.checked));
  c.expect(r.fraction() >= 0.99, "fraction within tolerance " + fmt("%.4f", r.fraction()));
  return c.outcome(std::to_string(r.within) + "/" + std::to_string(r.checked) +
                   " within 1e-3, max relative error " + fmt("%.3g", r.max_rel_error));
}

Outcome codec_losslessness() {
  Checks c;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> length(0, 100000);
  std::uniform_int_distribution<std::uint32_t> alphabet(2, 256);
  std::size_t exact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = trial == 0 ? 0 : trial == 1 ? 100000 : length(rng);
    const std::uint32_t a = trial == 2 ? 2 : trial == 3 ? 256 : alphabet(rng);
    std::vector<std::uint16_t> x(n);
    // Alternate between memoryless and strongly repetitive sources.
    if (trial % 2 == 0) {
      std::uniform_int_distribution<std::uint32_t> sym(0, a - 1);
      for (auto& s : x) s = static_cast<std::uint16_t>(sym(rng));
    } else {
      std::geometric_distribution<std::uint32_t> run(0.05);
      std::uniform_int_distribution<std::uint32_t> sym(0, a - 1);
      std::size_t i = 0;
      while (i < n) {
        const auto v = static_cast<std::uint16_t>(sym(rng));
        for (std::size_t k = run(rng) + 1; k > 0 && i < n; --k) x[i++] = v;
      }
    }
    const auto blob = bl::ppm_compress(x, a);
    const bool ok = bl::ppm_decompress(bl::CompressedBlob::parse(blob.serialize())) == x;
    exact += ok;
    if (!ok) c.expect(false, "ppm mismatch at length " + std::to_string(n) + " alphabet " + std::to_string(a));
  }

  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = u(rng);
    worst = std::max(worst, std::abs(bl::mu_law_decode(bl::mu_law_encode(x, 255.0), 255.0) - x));
  }
  c.expect(worst < 1e-9, "mu-law roundtrip error " + fmt("%.3g", worst));

  // With Q bins each companded value moves at most half a bin, so the
  // reconstruction stays inside the widest decompanded bin.
  double ratio = 0.0;
  for (std::uint32_t q : {4u, 8u, 16u, 64u}) {
    double widest = 0.0;
    for (std::uint32_t k = 0; k < q; ++k)
      widest = std::max(widest, bl::mu_law_decode(-1.0 + 2.0 * (k + 1) / q, 255.0) -
                                    bl::mu_law_decode(-1.0 + 2.0 * k / q, 255.0));
    for (int i = 0; i < 20000; ++i) {
      const double x = u(rng);
      const double y = bl::dequantize(bl::quantize(bl::mu_law_encode(x, 255.0), q), q);
      ratio = std::max(ratio, std::abs(bl::mu_law_decode(y, 255.0) - x) / widest);
    }
    std::uniform_real_distribution<double> speed(0.5, 14.0);
    Grid g(20, 30);
    for (double& v : g.values()) v = speed(rng);
    const Grid rec = bl::decompress_field(bl::compress_field(g, bl::MuLawSpec{255.0, q}));
    const double half_range = 0.5 * (g.max() - g.min());
    for (std::size_t i = 0; i < g.size(); ++i)
      ratio = std::max(ratio, std::abs(rec.values()[i] - g.values()[i]) / (widest * half_range));
  }
  c.expect(ratio <= 1.0 + 1e-9, "quantized error exceeds bound, ratio " + fmt("%.4f", ratio));
  return c.outcome(std::to_string(exact) + "/1000 PPM roundtrips exact, mu-law error " +
                   fmt("%.2g", worst) + ", quantized error/bound " + fmt("%.3f", ratio));
}

Outcome liif_mechanics() {
  Checks c;
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  nc::FeatureGrid fg{Tensor({3, 9, 13})};
  for (std::size_t i = 0; i < fg.values.size(); ++i) fg.values[i] = u(rng);
  nc::CoordinateBatch b;
  b.cell_y = 2.0 / 40;
  b.cell_x = 2.0 / 52;
  for (int i = 0; i < 10000; ++i) b.coords.insert(b.coords.end(), {u(rng), u(rng)});
  const auto lf = nc::liif_query(fg, b);
  double worst = 0.0;
  for (std::size_t q = 0; q < lf.count; ++q) {
    double s = 0.0;
    for (int k = 0; k < nc::kEnsembleSize; ++k) s += lf.weights[k * lf.count + q];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  c.expect(worst <= 1e-6, "weight sum error " + fmt("%.3g", worst));

  // Constant features through a decoder that is affine over the queried range
  // (positive biases, nonnegative hidden weights keep every ReLU active). The
  // ensemble then cancels the relative coordinate exactly, so the output must
  // not depend on where the query falls.
  nc::ModelConfig mc = nc::ModelConfig::tiny();
  mc.variant = nc::DecoderVariant::kLiif;
  mc.seed = 4;
  nc::ModelBundle m(mc);
  for (auto& p : m.parameters().all()) {
    if (!p.name.starts_with("D1.")) continue;
    Var v = p.var;
    Tensor& t = v.mutable_value();
    if (p.name == "D1.local_in.bias") t.fill(50.0);
    else if (p.name.starts_with("D1.hidden") && p.name.ends_with(".weight"))
      for (double& x : t.values()) x = std::abs(x);
    else if (p.name.starts_with("D1.hidden") && p.name.ends_with(".bias")) t.fill(0.1);
  }
  nc::FeatureGrid flat{Tensor({mc.feature_channels, 6, 6}, 0.37)};
  nc::CoordinateBatch inner;
  inner.cell_y = inner.cell_x = 2.0 / 24;
  // Between the outermost cell centers, where every candidate is a distinct cell.
  std::uniform_real_distribution<double> in(-1.0 + 1.0 / 6, 1.0 - 1.0 / 6);
  for (int i = 0; i < 2000; ++i) inner.coords.insert(inner.coords.end(), {in(rng), in(rng)});
  const auto out = nc::decode(m, 1, nc::liif_query(flat, inner), nullptr, nullptr);
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double spread = *hi - *lo;
  c.expect(spread <= 1e-9 * std::max(1.0, std::abs(*lo)), "constant grid decode spread " + fmt("%.3g", spread));

  // GEI with zeroed global weights reproduces LIIF bit for bit.
  nc::ModelConfig gc = mc;
  gc.variant = nc::DecoderVariant::kGei;
  nc::ModelBundle liif(mc), gei(gc);
  for (const auto& p : liif.parameters().all()) {
    Var dst = gei.parameters().find(p.name);
    dst.mutable_value() = p.var.value();
  }
  for (auto& p : gei.parameters().all())
    if (p.name.find(".global_in.") != std::string::npos) {
      Var v = p.var;
      v.mutable_value().fill(0.0);
    }
  Grid f(32, 32);
  for (double& v : f.values()) v = u(rng);
  bool identical = true;
  for (int s = 1; s <= 2; ++s)
    for (int t = 1; t <= 2; ++t)
      identical = identical && nc::predict_grid(liif, f, s, t, 1.6) == nc::predict_grid(gei, f, s, t, 1.6);
  c.expect(identical, "GEI with zero global weights differs from LIIF");
  return c.outcome("weight sum error " + fmt("%.2g", worst) + ", constant-grid spread " +
                   fmt("%.2g", spread) + ", GEI/LIIF identical " + (identical ? "yes" : "no"));
}

// Desk-scale training run.
Outcome desk_learning() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  dh::SynthSpec spec;
  spec.rows = 64;
  spec.cols = 64;
  spec.count = 250;
  spec.sigma_p = 0.1;
  const auto all = dh::pair_stacks(dh::synth_stack(1, spec), 10, 160);
  const auto split = dh::normalize_split(dh::split(all, 200, 50, 2));

  nc::ModelConfig mc = nc::ModelConfig::desk();
  nc::ModelBundle m(mc);
  tr::TrainConfig tc;
  tc.reduction = 4;
  tc.variant = mc.variant;
  tc.epochs = 20;
  tc.batch_size = 2;
  tc.coords_per_instance = 256;
  tc.learning_rate = 1e-3;
  tr::Trainer trainer(m, tc);
  const auto log = tr::train(trainer, split);
  const double first = log.front().loss.total, last = log.back().loss.total;
  const double drop = 1.0 - last / first;
  c.expect(drop >= 0.5, "loss fell only " + fmt("%.3f", drop));

  // Self rows for both methods from the compression study on the same test set.
  eh::ExperimentPlan plan;
  plan.study = eh::Study::kCompression;
  plan.ppm_levels.clear();
  plan.bicubic_factors = {4};
  plan.directions = {{1, 1}};
  eh::ModelSet set;
  set.add(std::move(m));
  const nc::ModelBundle& model = *set.all()[0];
  const auto rows = eh::run_compression_study(plan, set, split.test);
  double neural = 0.0, bicubic = 0.0;
  for (const auto& r : rows) (r.method == "Bicubic_d=4" ? bicubic : neural) = r.psnr;
  c.expect(neural > bicubic, "self PSNR " + fmt("%.2f", neural) + " <= bicubic " + fmt("%.2f", bicubic));

  // Normalized units, as in the training loss.
  double self_mse = 0.0, cross_mse = 0.0;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    const Grid& x1 = split.test.fields_m1[i].values;
    const Grid& x2 = split.test.fields_m2[i].values;
    self_mse += metrics::mse(x1, nc::predict_grid(model, x1, 1, 1, 1.0));
    cross_mse += metrics::mse(x2, nc::predict_grid(model, x1, 1, 2, 1.0));
  }
  c.expect(cross_mse <= 2.0 * self_mse, "cross/self MSE " + fmt("%.3f", cross_mse / self_mse));
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  c.expect(minutes <= 10.0, "run took " + fmt("%.1f", minutes) + " min");
  return c.outcome("loss drop " + fmt("%.1f%%", 100 * drop) + ", self PSNR " + fmt("%.2f", neural) +
                   " vs bicubic " + fmt("%.2f", bicubic) + " dB, cross/self MSE " +
                   fmt("%.2f", cross_mse / self_mse) + ", " + fmt("%.1f", minutes) + " min");
}

Outcome ordering() {
  Checks c;
  dh::SynthSpec spec;
  spec.rows = 64;
  spec.cols = 64;
  spec.count = 20;
  const auto batch = dh::pair_stacks(dh::synth_stack(33, spec), 10, 160);
  int wins = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Grid& x = batch.fields_m1[i].values;
    const Grid& truth = batch.fields_m2[i].values;
    const auto q8 = bl::baseline_pipeline(x, bl::BaselineMethod::ppm(8), 10, 160);
    const auto q16 = bl::baseline_pipeline(x, bl::BaselineMethod::ppm(16), 10, 160);
    const auto s8 = metrics::score_field(truth, q8.reconstruction);
    const auto s16 = metrics::score_field(truth, q16.reconstruction);
    const bool ok = s16.psnr > s8.psnr && s16.ssim > s8.ssim;
    wins += ok;
    c.expect(ok, "field " + std::to_string(i) + " Q=16 does not beat Q=8");
  }
  bool lossless = true;
  for (const auto& f : batch.fields_m1) {
    const auto r = bl::baseline_pipeline(f.values, bl::BaselineMethod::lossless(), 10, 10);
    lossless = lossless && r.reconstruction == f.values;
  }
  c.expect(lossless, "lossless pipeline at h1 = h2 altered a field");
  return c.outcome("Q=16 beats Q=8 on " + std::to_string(wins) + "/" + std::to_string(batch.size()) +
                   " fields, lossless at h1 = h2 " + (lossless ? "yes" : "no"));
}

int run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null").c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism() {
  Checks c;
  const fs::path root = fs::temp_directory_path() / "windsr_acceptance_e2e";
  fs::remove_all(root);
  const std::string cli = WINDSR_CLI;
  std::vector<std::string> csv;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = root / ("run" + std::to_string(rep));
    const std::string d = dir.string();
    const std::vector<std::string> steps = {
        cli + " synth --out " + d + "/data --rows 32 --cols 32 --count 10 --seed 7",
        cli + " train --data " + d + "/data/synth.json --out " + d +
            "/run --preset tiny --d 4 --epochs 2 --batch-size 2 --coords 64 --lr 1e-3 --seed 3 "
            "--n-train 6 --n-test 4 --split-seed 1 --quiet",
        cli + " eval-compress --test " + d + "/run/test.json --model GEI-LIIF=" + d +
            "/run/model.wsck --directions 1:2 2:1 --out " + d + "/compression.json",
        cli + " report --compression " + d + "/compression.json --out " + d + "/report"};
    for (const auto& s : steps) {
      const int rc = run(s);
      c.expect(rc == 0, "command failed: " + s);
      if (rc != 0) return c.outcome("pipeline failed");
    }
    csv.push_back(slurp(dir / "report" / "compression.csv"));
  }
  const bool same = !csv[0].empty() && csv[0] == csv[1];
  c.expect(same, "CSV output differs between runs");
  const auto lines = std::count(csv[0].begin(), csv[0].end(), '\n');
  fs::remove_all(root);
  return c.outcome("two runs, " + std::to_string(lines - 1) + " rows, identical " + (same ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"CR exactness", cr_exactness},
      {"latent-loss identity", latent_identity},
      {"gradient check", gradient_check},
      {"codec losslessness", codec_losslessness},
      {"LIIF mechanics", liif_mechanics},
      {"desk-scale learning", desk_learning},
      {"ordering properties", ordering},
      {"end-to-end determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("criterion %d %-24s %s  (%s) [%.1fs]\n", id, criteria[i].first,
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
