#include "windsr/evalharness.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "windsr/baselines.h"
#include "windsr/error.h"
#include "windsr/training.h"

namespace windsr::evalharness {

namespace fs = std::filesystem;
namespace nc = windsr::neuralcore;
using nlohmann::json;

std::vector<Direction> all_directions() { return {{1, 1}, {1, 2}, {2, 1}, {2, 2}}; }

void ExperimentPlan::validate() const {
  for (double s : scales)
    require(std::isfinite(s) && s >= 1.0, ErrorKind::kPlan,
            "evaluation scale " + std::to_string(s) + " is below 1");
  require(!directions.empty(), ErrorKind::kPlan, "plan has no directions");
  for (const auto& d : directions)
    require((d.source == 1 || d.source == 2) && (d.target == 1 || d.target == 2), ErrorKind::kPlan,
            "direction modalities must be 1 or 2");
  for (const auto& m : models)
    require(fs::exists(m.checkpoint), ErrorKind::kPlan,
            "checkpoint not found: " + m.checkpoint.string());
  if (study == Study::kSuperResolution) {
    require(!variants.empty(), ErrorKind::kPlan, "super-resolution plan lists no variants");
    require(!scales.empty(), ErrorKind::kPlan, "super-resolution plan lists no scales");
  }
}

json to_json(const ExperimentPlan& p) {
  json j;
  j["study"] = p.study == Study::kSuperResolution ? "super_resolution" : "compression";
  j["variants"] = json::array();
  for (auto v : p.variants) j["variants"].push_back(std::string(nc::to_string(v)));
  j["scales"] = p.scales;
  j["ppm_levels"] = p.ppm_levels;
  j["bicubic_factors"] = p.bicubic_factors;
  j["models"] = json::array();
  for (const auto& m : p.models)
    j["models"].push_back(
        {{"variant", std::string(nc::to_string(m.variant))}, {"checkpoint", m.checkpoint.string()}});
  j["directions"] = json::array();
  for (const auto& d : p.directions) j["directions"].push_back({d.source, d.target});
  j["alpha"] = p.alpha;
  return j;
}

ExperimentPlan plan_from_json(const json& j) {
  ExperimentPlan p;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "study") {
        const auto s = v.get<std::string>();
        require(s == "super_resolution" || s == "compression", ErrorKind::kPlan,
                "unknown study '" + s + "'");
        p.study = s == "compression" ? Study::kCompression : Study::kSuperResolution;
      } else if (k == "variants") {
        p.variants.clear();
        for (const auto& x : v) p.variants.push_back(nc::variant_from_string(x.get<std::string>()));
      } else if (k == "scales") {
        p.scales = v.get<std::vector<double>>();
      } else if (k == "ppm_levels") {
        p.ppm_levels = v.get<std::vector<std::uint32_t>>();
      } else if (k == "bicubic_factors") {
        p.bicubic_factors = v.get<std::vector<std::uint32_t>>();
      } else if (k == "models") {
        for (const auto& m : v)
          p.models.push_back({nc::variant_from_string(m.at("variant").get<std::string>()),
                              m.at("checkpoint").get<std::string>()});
      } else if (k == "directions") {
        p.directions.clear();
        for (const auto& d : v) p.directions.push_back({d.at(0).get<int>(), d.at(1).get<int>()});
      } else if (k == "alpha") {
        p.alpha = v.get<double>();
      } else {
        fail(ErrorKind::kPlan, "unknown plan key '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kPlan, std::string("malformed plan: ") + e.what());
  }
  return p;
}

ModelSet ModelSet::load(const ExperimentPlan& plan) {
  plan.validate();
  ModelSet set;
  for (const auto& ref : plan.models) {
    training::Checkpoint ck = training::load_checkpoint(ref.checkpoint);
    require(ck.model.config().variant == ref.variant, ErrorKind::kPlan,
            ref.checkpoint.string() + " holds a " + std::string(nc::to_string(ck.model.config().variant)) +
                " model, plan expects " + std::string(nc::to_string(ref.variant)));
    set.add(std::move(ck.model));
  }
  return set;
}

void ModelSet::add(ModelBundle model) {
  models_.push_back(std::make_unique<ModelBundle>(std::move(model)));
}

std::vector<const ModelBundle*> ModelSet::find(DecoderVariant v) const {
  std::vector<const ModelBundle*> out;
  for (const auto& m : models_)
    if (m->config().variant == v) out.push_back(m.get());
  return out;
}

const nc::LatentGrid& LatentCache::get(const ModelBundle& model, Direction dir,
                                       std::size_t instance, const Grid& input) {
  const auto key = std::make_tuple(&model, dir.source, dir.target, instance);
  auto it = cache_.find(key);
  if (it == cache_.end())
    it = cache_.emplace(key, nc::reduce(model, dir.source, dir.target, input)).first;
  return it->second;
}

std::string neural_method_id(DecoderVariant v, int reduction) {
  return std::string(nc::to_string(v)) + "_d=" + std::to_string(reduction);
}

namespace {

struct Context {
  const datahub::ModalityPairBatch& test;
  std::string component;

  double altitude(int m) const { return m == 1 ? test.altitude_m1 : test.altitude_m2; }
  const Grid& normalized(int m, std::size_t i) const { return test.modality(m)[i].values; }
  Grid physical(int m, std::size_t i) const {
    return datahub::denormalize_grid(normalized(m, i), test.norm_stats[m - 1]);
  }
  Grid to_physical(int m, const Grid& g) const {
    return datahub::denormalize_grid(g, test.norm_stats[m - 1]);
  }
};

Context make_context(const datahub::ModalityPairBatch& test) {
  require(test.normalized, ErrorKind::kConfig, "evaluation needs a normalized test batch");
  require(test.size() > 0, ErrorKind::kSize, "test batch is empty");
  test.validate();
  return {test, std::string(to_string(test.fields_m1.front().component))};
}

nc::LatentGrid latent_for(const ModelBundle& model, Direction dir, std::size_t i, const Context& ctx,
                          LatentCache* cache) {
  if (cache) return cache->get(model, dir, i, ctx.normalized(dir.source, i));
  return nc::reduce(model, dir.source, dir.target, ctx.normalized(dir.source, i));
}

double grid_cr(const Grid& field, const nc::LatentGrid& latent) {
  return metrics::compression_ratio(metrics::CrBasis::kGrid, field.size(), latent.values.size());
}

MetricRecord record(std::string method, double param, Direction dir, const Context& ctx,
                    double cr, const std::vector<metrics::FieldScore>& scores) {
  const metrics::Aggregate a = metrics::aggregate(scores);
  const double psnr = a.count == a.infinite_psnr ? metrics::kInfinitePsnr : a.mean_psnr;
  return {std::move(method), param,       ctx.altitude(dir.source), ctx.altitude(dir.target),
          ctx.component,     cr,          psnr,                      a.mean_ssim};
}

}  // namespace

std::vector<MetricRecord> run_sr_study(const ExperimentPlan& plan, const ModelSet& models,
                                       const datahub::ModalityPairBatch& test, LatentCache* cache) {
  plan.validate();
  const Context ctx = make_context(test);
  std::vector<MetricRecord> out;
  for (DecoderVariant v : plan.variants) {
    const auto found = models.find(v);
    require(!found.empty(), ErrorKind::kPlan,
            "no trained model for variant " + std::string(nc::to_string(v)));
    for (const ModelBundle* model : found) {
      for (const Direction dir : plan.directions) {
        for (double s : plan.scales) {
          std::vector<metrics::FieldScore> scores;
          double cr = 0.0;
          for (std::size_t i = 0; i < test.size(); ++i) {
            const Grid& in = ctx.normalized(dir.source, i);
            const nc::LatentGrid latent = latent_for(*model, dir, i, ctx, cache);
            const auto rows = static_cast<std::size_t>(std::round(s * in.rows()));
            const auto cols = static_cast<std::size_t>(std::round(s * in.cols()));
            const Grid pred = ctx.to_physical(dir.target, nc::decode_grid(*model, latent, rows, cols));
            const WindField ref{ctx.physical(dir.target, i), ctx.altitude(dir.target)};
            scores.push_back(metrics::score_field(datahub::make_pair(ref, s).sr_target.values, pred));
            cr = grid_cr(in, latent);
          }
          out.push_back(record(std::string(nc::to_string(v)), s, dir, ctx, cr, scores));
        }
      }
    }
  }
  return out;
}

std::vector<MetricRecord> run_compression_study(const ExperimentPlan& plan, const ModelSet& models,
                                                const datahub::ModalityPairBatch& test,
                                                LatentCache* cache) {
  plan.validate();
  const Context ctx = make_context(test);
  std::vector<baselines::BaselineMethod> methods;
  for (auto q : plan.ppm_levels) methods.push_back(baselines::BaselineMethod::ppm(q));
  for (auto d : plan.bicubic_factors) methods.push_back(baselines::BaselineMethod::bicubic(d));

  std::vector<MetricRecord> out;
  for (const Direction dir : plan.directions) {
    const double h_in = ctx.altitude(dir.source), h_out = ctx.altitude(dir.target);
    for (const auto& method : methods) {
      std::vector<metrics::FieldScore> scores;
      double cr = 0.0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto r = baselines::baseline_pipeline(ctx.physical(dir.source, i), method, h_in, h_out,
                                                    plan.alpha);
        scores.push_back(metrics::score_field(ctx.physical(dir.target, i), r.reconstruction));
        cr += r.cr_percent;
      }
      cr /= static_cast<double>(test.size());
      out.push_back(record(method.id(), method.param, dir, ctx, cr, scores));
    }
    for (const auto& model : models.all()) {
      std::vector<metrics::FieldScore> scores;
      double cr = 0.0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const Grid& in = ctx.normalized(dir.source, i);
        const nc::LatentGrid latent = latent_for(*model, dir, i, ctx, cache);
        const Grid pred =
            ctx.to_physical(dir.target, nc::decode_grid(*model, latent, in.rows(), in.cols()));
        scores.push_back(metrics::score_field(ctx.physical(dir.target, i), pred));
        cr = grid_cr(in, latent);
      }
      out.push_back(record(neural_method_id(model->config().variant, model->config().reduction),
                           model->config().reduction, dir, ctx, cr, scores));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

json to_json(const ReportTables& t) {
  return {{"super_resolution", json::parse(metrics::to_json(t.super_resolution))},
          {"compression", json::parse(metrics::to_json(t.compression))}};
}

ReportTables tables_from_json(const json& j) {
  ReportTables t;
  try {
    if (j.contains("super_resolution"))
      t.super_resolution = metrics::from_json(j.at("super_resolution").dump());
    if (j.contains("compression")) t.compression = metrics::from_json(j.at("compression").dump());
  } catch (const json::exception& e) {
    fail(ErrorKind::kDecode, std::string("malformed report: ") + e.what());
  }
  return t;
}

namespace {

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string altitude_label(double h) {
  std::ostringstream os;
  if (h == std::round(h)) os << static_cast<long long>(h);
  else os << h;
  return os.str() + "m";
}

std::string direction_label(double h_in, double h_out) {
  return altitude_label(h_in) + "_to_" + altitude_label(h_out);
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

struct Frame {
  double width = 640, height = 400, left = 70, right = 170, top = 40, bottom = 50;
  double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
  double px(double x) const { return left + (x - lo_x) / (hi_x - lo_x) * (width - left - right); }
  double py(double y) const {
    return height - bottom - (y - lo_y) / (hi_y - lo_y) * (height - top - bottom);
  }
};

void padded_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
}

std::string svg_open(const Frame& f, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
     << "</text>\n";
  const double x0 = f.left, x1 = f.width - f.right, y0 = f.top, y1 = f.height - f.bottom;
  os << "<path d=\"M" << x0 << ' ' << y0 << " V" << y1 << " H" << x1 << "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = f.lo_y + (f.hi_y - f.lo_y) * k / 4.0;
    const double y = f.py(v);
    os << "<line x1=\"" << x0 - 4 << "\" y1=\"" << fmt(y) << "\" x2=\"" << x1 << "\" y2=\"" << fmt(y)
       << "\" stroke=\"#ddd\"/>\n"
       << "<text x=\"" << x0 - 6 << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\">" << fmt(v, 3)
       << "</text>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << f.height - 12 << "\" text-anchor=\"middle\">"
     << xlabel << "</text>\n"
     << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << ylabel << "</text>\n";
  return os.str();
}

double metric_of(const MetricRecord& r, const std::string& metric) {
  if (metric == "psnr") return r.psnr;
  if (metric == "ssim") return r.ssim;
  return r.cr;
}

// One line per method, metric against scale.
std::string line_plot(const std::vector<MetricRecord>& rows, const std::string& metric,
                      const std::string& title) {
  std::vector<std::string> methods;
  Frame f;
  f.lo_x = f.lo_y = std::numeric_limits<double>::infinity();
  f.hi_x = f.hi_y = -std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    const double v = metric_of(r, metric);
    if (!std::isfinite(v)) continue;
    f.lo_x = std::min(f.lo_x, r.d_or_q);
    f.hi_x = std::max(f.hi_x, r.d_or_q);
    f.lo_y = std::min(f.lo_y, v);
    f.hi_y = std::max(f.hi_y, v);
  }
  if (!std::isfinite(f.lo_y)) f.lo_y = f.hi_y = 0.0;
  if (!std::isfinite(f.lo_x)) f.lo_x = f.hi_x = 1.0;
  padded_range(f.lo_x, f.hi_x);
  padded_range(f.lo_y, f.hi_y);
  std::ostringstream os;
  os << svg_open(f, title, "scale s", metric == "psnr" ? "PSNR (dB)" : "SSIM");
  std::set<double> ticks;
  for (const auto& r : rows) ticks.insert(r.d_or_q);
  for (double t : ticks)
    os << "<text x=\"" << fmt(f.px(t)) << "\" y=\"" << f.height - f.bottom + 16
       << "\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const char* color = kPalette[m % std::size(kPalette)];
    std::vector<const MetricRecord*> pts;
    for (const auto& r : rows)
      if (r.method == methods[m] && std::isfinite(metric_of(r, metric))) pts.push_back(&r);
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->d_or_q < b->d_or_q; });
    std::string path;
    for (const auto* p : pts) {
      path += (path.empty() ? "M" : " L") + fmt(f.px(p->d_or_q)) + " " + fmt(f.py(metric_of(*p, metric)));
      os << "<circle cx=\"" << fmt(f.px(p->d_or_q)) << "\" cy=\"" << fmt(f.py(metric_of(*p, metric)))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    if (!path.empty())
      os << "<path d=\"" << path << "\" stroke=\"" << color << "\" fill=\"none\" stroke-width=\"2\"/>\n";
    const double ly = f.top + 10 + 18 * static_cast<double>(m);
    os << "<rect x=\"" << f.width - f.right + 12 << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"12\" fill=\""
       << color << "\"/>\n<text x=\"" << f.width - f.right + 30 << "\" y=\"" << ly + 1 << "\">"
       << methods[m] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// One bar per method.
std::string bar_plot(const std::vector<MetricRecord>& rows, const std::string& metric,
                     const std::string& title) {
  Frame f;
  f.right = 20;
  f.bottom = 90;
  f.lo_x = 0;
  f.hi_x = static_cast<double>(rows.size());
  f.lo_y = 0;
  f.hi_y = 0;
  for (const auto& r : rows)
    if (std::isfinite(metric_of(r, metric))) f.hi_y = std::max(f.hi_y, metric_of(r, metric));
  f.hi_y = f.hi_y > 0 ? f.hi_y * 1.1 : 1.0;
  const std::string ylabel = metric == "psnr" ? "PSNR (dB)" : metric == "ssim" ? "SSIM" : "CR (%)";
  std::ostringstream os;
  os << svg_open(f, title, "", ylabel);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double v = metric_of(rows[i], metric);
    const double shown = std::isfinite(v) ? std::max(v, 0.0) : f.hi_y;
    const double x = f.px(i + 0.15), w = f.px(i + 0.85) - x;
    os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(f.py(shown)) << "\" width=\"" << fmt(w)
       << "\" height=\"" << fmt(f.py(0) - f.py(shown)) << "\" fill=\"" << kPalette[i % std::size(kPalette)]
       << "\"/>\n<text x=\"" << fmt(x + w / 2) << "\" y=\"" << fmt(f.py(shown) - 4)
       << "\" text-anchor=\"middle\" font-size=\"10\">" << (std::isfinite(v) ? fmt(v, 3) : "inf")
       << "</text>\n<text transform=\"translate(" << fmt(x + w / 2) << "," << f.height - f.bottom + 12
       << ") rotate(35)\" font-size=\"10\">" << rows[i].method << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// Records grouped by (h_in, h_out) in first-seen order.
std::vector<std::pair<std::string, std::vector<MetricRecord>>> by_direction(
    const std::vector<MetricRecord>& rows) {
  std::vector<std::pair<std::string, std::vector<MetricRecord>>> out;
  for (const auto& r : rows) {
    const std::string key = direction_label(r.h_in, r.h_out) + "_" + r.component;
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == key; });
    if (it == out.end()) {
      out.push_back({key, {}});
      it = std::prev(out.end());
    }
    it->second.push_back(r);
  }
  return out;
}

std::string csv_of(const std::vector<MetricRecord>& rows) {
  std::ostringstream os;
  metrics::write_csv(os, rows);
  return os.str();
}

}  // namespace

std::vector<fs::path> emit_report(const ReportTables& tables, const fs::path& out_dir) {
  require(!tables.super_resolution.empty() || !tables.compression.empty(), ErrorKind::kSize,
          "report tables are empty");
  std::vector<std::pair<std::string, std::string>> files;
  if (!tables.super_resolution.empty()) {
    files.push_back({"super_resolution.csv", csv_of(tables.super_resolution)});
    files.push_back({"super_resolution.json", metrics::to_json(tables.super_resolution)});
    for (const auto& [key, rows] : by_direction(tables.super_resolution))
      for (const std::string metric : {"psnr", "ssim"})
        files.push_back({"sr_" + metric + "_" + key + ".svg",
                         line_plot(rows, metric, "Super-resolution " + metric + ", " + key)});
  }
  if (!tables.compression.empty()) {
    files.push_back({"compression.csv", csv_of(tables.compression)});
    files.push_back({"compression.json", metrics::to_json(tables.compression)});
    for (const auto& [key, rows] : by_direction(tables.compression))
      for (const std::string metric : {"cr", "psnr", "ssim"})
        files.push_back({"compression_" + metric + "_" + key + ".svg",
                         bar_plot(rows, metric, "Compression " + metric + ", " + key)});
  }
  files.push_back({"report.json", to_json(tables).dump(2) + "\n"});

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec && fs::is_directory(out_dir), ErrorKind::kIo,
          "cannot create report directory " + out_dir.string());
  std::vector<fs::path> written;
  for (const auto& [name, content] : files) {
    const fs::path p = out_dir / name;
    std::ofstream f(p, std::ios::binary);
    f << content;
    f.close();
    if (!f) {
      for (const auto& w : written) fs::remove(w, ec);
      fs::remove(p, ec);
      fail(ErrorKind::kIo, "cannot write " + p.string());
    }
    written.push_back(p);
  }
  return written;
}

}  // namespace windsr::evalharness
