// windsr command line: synth, ingest, train, eval-sr, eval-compress, report.
// Errors are reported as one JSON object on stderr with a nonzero exit code.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "windsr/datahub.h"
#include "windsr/error.h"
#include "windsr/evalharness.h"
#include "windsr/metrics.h"
#include "windsr/neuralcore.h"
#include "windsr/training.h"

namespace fs = std::filesystem;
namespace dh = windsr::datahub;
namespace eh = windsr::evalharness;
namespace nc = windsr::neuralcore;
namespace tr = windsr::training;
using nlohmann::json;
using windsr::ErrorKind;

namespace {

json read_json_file(const fs::path& p, ErrorKind kind) {
  std::ifstream in(p);
  windsr::require(bool(in), kind, "cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    windsr::fail(kind, p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  out.close();
  windsr::require(bool(out), ErrorKind::kIo, "cannot write " + p.string());
}

// begin:end window
std::pair<std::size_t, std::size_t> parse_window(const std::string& s) {
  const auto colon = s.find(':');
  windsr::require(colon != std::string::npos, ErrorKind::kConfig, "window must be begin:end, got " + s);
  try {
    return {std::stoul(s.substr(0, colon)), std::stoul(s.substr(colon + 1))};
  } catch (const std::exception&) {
    windsr::fail(ErrorKind::kConfig, "bad window " + s);
  }
}

eh::Direction parse_direction(const std::string& s) {
  const auto colon = s.find(':');
  windsr::require(colon != std::string::npos && s.size() == 3, ErrorKind::kPlan,
                  "direction must look like 1:2, got " + s);
  return {s[0] - '0', s[2] - '0'};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  fs::path out = "data";
  std::string name = "synth";
  std::uint64_t seed = 0;
  dh::SynthSpec spec;
  std::string component = "northern";
  std::optional<fs::path> h5;
};

void run_synth(const SynthArgs& a) {
  dh::SynthSpec spec = a.spec;
  spec.component = windsr::component_from_string(a.component);
  windsr::require(spec.altitudes.size() >= 2, ErrorKind::kConfig, "need at least two altitudes");
  const auto stacks = dh::synth_stack(a.seed, spec);
  if (a.h5) {
    if (a.h5->has_parent_path()) fs::create_directories(a.h5->parent_path());
    dh::export_wtk(*a.h5, stacks);
  }
  const auto batch = dh::pair_stacks(stacks, spec.altitudes.front(), spec.altitudes.back());
  dh::save_batch(batch, a.out, a.name);
  std::cout << (a.out / (a.name + ".json")).string() << "\n";
}

struct IngestArgs {
  fs::path input;
  fs::path out = "data";
  std::string name = "ingest";
  std::vector<double> altitudes = {10.0, 160.0};
  std::string rows = "0:120", cols = "0:160";
  std::vector<long> timestamps;
  std::string pattern = "windspeed_{h}m";
  std::string component = "northern";
};

void run_ingest(const IngestArgs& a) {
  windsr::require(a.altitudes.size() == 2, ErrorKind::kConfig, "ingest takes exactly two altitudes");
  dh::IngestSpec spec;
  spec.path = a.input;
  spec.altitudes = a.altitudes;
  std::tie(spec.row_begin, spec.row_end) = parse_window(a.rows);
  std::tie(spec.col_begin, spec.col_end) = parse_window(a.cols);
  spec.timestamps = a.timestamps;
  spec.dataset_pattern = a.pattern;
  spec.component = windsr::component_from_string(a.component);
  dh::save_batch(dh::ingest_wtk(spec), a.out, a.name);
  std::cout << (a.out / (a.name + ".json")).string() << "\n";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path out = "run";
  std::optional<fs::path> config;
  std::optional<fs::path> resume;
  std::string preset = "desk";
  std::size_t n_train = 0, n_test = 0;  // 0: 80/20 of the data
  std::uint64_t split_seed = 0;
  // Overrides; unset flags keep the config file value.
  std::optional<int> epochs, reduction;
  std::optional<std::size_t> batch_size, coords;
  std::optional<double> lr, scale_min, scale_max;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant;
  bool quiet = false;
};

nc::ModelConfig preset_config(const std::string& name) {
  if (name == "tiny") return nc::ModelConfig::tiny();
  if (name == "desk") return nc::ModelConfig::desk();
  if (name == "full") return nc::ModelConfig{};
  windsr::fail(ErrorKind::kConfig, "unknown preset '" + name + "' (tiny, desk, full)");
}

void run_train(const TrainArgs& a) {
  std::string preset = a.preset;
  std::size_t n_train = a.n_train, n_test = a.n_test;
  std::uint64_t split_seed = a.split_seed;
  json model_j = json::object(), train_j = json::object();
  if (a.config) {
    const json cfg = read_json_file(*a.config, ErrorKind::kConfig);
    windsr::require(cfg.is_object(), ErrorKind::kConfig, "config must be a JSON object");
    for (const auto& [k, v] : cfg.items()) {
      if (k == "train") train_j = v;
      else if (k == "model") model_j = v;
      else if (k == "preset") preset = v.get<std::string>();
      else if (k == "split") {
        n_train = v.value("n_train", n_train);
        n_test = v.value("n_test", n_test);
        split_seed = v.value("seed", split_seed);
      } else {
        windsr::fail(ErrorKind::kConfig, "unknown config section '" + k + "'");
      }
    }
  }
  tr::TrainConfig tc = tr::train_config_from_json(train_j);
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.reduction) tc.reduction = *a.reduction;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.coords) tc.coords_per_instance = *a.coords;
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.scale_min) tc.scale_min = *a.scale_min;
  if (a.scale_max) tc.scale_max = *a.scale_max;
  if (a.seed) tc.seed = *a.seed;
  if (a.variant) tc.variant = nc::variant_from_string(*a.variant);
  tc.validate();

  const dh::ModalityPairBatch data = dh::load_batch(a.data);
  windsr::require(!data.normalized, ErrorKind::kConfig, "training data must be in physical units");
  if (n_train == 0 && n_test == 0) {
    n_test = data.size() / 5;
    n_train = data.size() - n_test;
  }
  const dh::DatasetSplit split = dh::normalize_split(dh::split(data, n_train, n_test, split_seed));
  fs::create_directories(a.out);
  dh::save_batch(split.test, a.out, "test");

  std::optional<tr::Checkpoint> ckpt;
  std::optional<nc::ModelBundle> fresh;
  std::optional<tr::Trainer> trainer;
  if (a.resume) {
    ckpt.emplace(tr::load_checkpoint(*a.resume));
    if (a.epochs) ckpt->train.epochs = *a.epochs;
    trainer.emplace(tr::resume(*ckpt));
  } else {
    nc::ModelConfig mc = tr::model_config_from_json(model_j, preset_config(preset));
    mc.reduction = tc.reduction;
    mc.variant = tc.variant;
    mc.seed = tc.seed;
    mc.validate();
    fresh.emplace(mc);
    trainer.emplace(*fresh, tc);
  }
  tr::TrainOptions opts;
  opts.out_dir = a.out;
  if (!a.quiet)
    opts.on_epoch = [](const tr::EpochLog& e) { std::cout << tr::to_json(e).dump() << std::endl; };
  tr::train(*trainer, split, opts);
  tr::save_checkpoint(a.out / "model.wsck", *trainer);
  if (!a.quiet) std::cout << (a.out / "model.wsck").string() << "\n";
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::optional<fs::path> plan;
  fs::path test;
  fs::path out;
  std::vector<std::string> models;  // VARIANT=checkpoint
  std::vector<double> scales;
  std::vector<std::string> directions;
  std::vector<std::uint32_t> ppm_levels, bicubic_factors;
};

void run_eval(const EvalArgs& a, eh::Study study) {
  eh::ExperimentPlan plan;
  if (a.plan) plan = eh::plan_from_json(read_json_file(*a.plan, ErrorKind::kPlan));
  plan.study = study;
  for (const auto& m : a.models) {
    const auto eq = m.find('=');
    windsr::require(eq != std::string::npos, ErrorKind::kPlan, "model must be VARIANT=checkpoint, got " + m);
    plan.models.push_back({nc::variant_from_string(m.substr(0, eq)), m.substr(eq + 1)});
  }
  if (!a.scales.empty()) plan.scales = a.scales;
  if (!a.directions.empty()) {
    plan.directions.clear();
    for (const auto& d : a.directions) plan.directions.push_back(parse_direction(d));
  }
  if (!a.ppm_levels.empty()) plan.ppm_levels = a.ppm_levels;
  if (!a.bicubic_factors.empty()) plan.bicubic_factors = a.bicubic_factors;
  if (plan.variants.empty())
    for (const auto& m : plan.models)
      if (std::find(plan.variants.begin(), plan.variants.end(), m.variant) == plan.variants.end())
        plan.variants.push_back(m.variant);

  const eh::ModelSet models = eh::ModelSet::load(plan);
  const dh::ModalityPairBatch test = dh::load_batch(a.test);
  const auto rows = study == eh::Study::kCompression ? eh::run_compression_study(plan, models, test)
                                                     : eh::run_sr_study(plan, models, test);
  write_text(a.out, windsr::metrics::to_json(rows));
  std::cout << a.out.string() << "\n";
}

struct ReportArgs {
  std::optional<fs::path> sr, compression;
  fs::path out = "report";
};

std::vector<windsr::metrics::MetricRecord> read_records(const fs::path& p) {
  std::ifstream in(p);
  windsr::require(bool(in), ErrorKind::kIo, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return windsr::metrics::from_json(ss.str());
}

void run_report(const ReportArgs& a) {
  eh::ReportTables t;
  if (a.sr) t.super_resolution = read_records(*a.sr);
  if (a.compression) t.compression = read_records(*a.compression);
  for (const auto& f : eh::emit_report(t, a.out)) std::cout << f.string() << "\n";
}

int report_error(std::string_view kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-altitude wind field reduction and super-resolution"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic multi-altitude wind fields");
  c_synth->add_option("--out", synth.out, "Output directory");
  c_synth->add_option("--name", synth.name, "Batch name");
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--rows", synth.spec.rows);
  c_synth->add_option("--cols", synth.spec.cols);
  c_synth->add_option("--count", synth.spec.count, "Number of timestamps");
  c_synth->add_option("--altitudes", synth.spec.altitudes, "Altitudes in meters; the lowest and highest are paired");
  c_synth->add_option("--beta", synth.spec.beta, "Spectral exponent");
  c_synth->add_option("--sigma-p", synth.spec.sigma_p, "Perturbation magnitude");
  c_synth->add_option("--alpha", synth.spec.alpha, "Power-law exponent");
  c_synth->add_option("--mean-speed", synth.spec.mean_speed);
  c_synth->add_option("--std-speed", synth.spec.std_speed);
  c_synth->add_option("--component", synth.component, "northern or eastern");
  c_synth->add_option("--h5", synth.h5, "Also export every altitude to this HDF5 file");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Read two altitudes from an HDF5 file");
  c_ingest->add_option("--input", ingest.input)->required();
  c_ingest->add_option("--out", ingest.out);
  c_ingest->add_option("--name", ingest.name);
  c_ingest->add_option("--altitudes", ingest.altitudes);
  c_ingest->add_option("--rows", ingest.rows, "Row window begin:end");
  c_ingest->add_option("--cols", ingest.cols, "Column window begin:end");
  c_ingest->add_option("--timestamps", ingest.timestamps, "Time indices; default all");
  c_ingest->add_option("--pattern", ingest.pattern, "Dataset name pattern, {h} is the altitude");
  c_ingest->add_option("--component", ingest.component);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model on a saved batch");
  c_train->add_option("--data", train.data, "Batch sidecar written by synth or ingest")->required();
  c_train->add_option("--out", train.out, "Run directory");
  c_train->add_option("--config", train.config, "JSON config with train, model, preset and split sections");
  c_train->add_option("--resume", train.resume, "Continue from a checkpoint");
  c_train->add_option("--preset", train.preset, "tiny, desk or full");
  c_train->add_option("--n-train", train.n_train);
  c_train->add_option("--n-test", train.n_test);
  c_train->add_option("--split-seed", train.split_seed);
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--d", train.reduction, "Reduction factor");
  c_train->add_option("--batch-size", train.batch_size);
  c_train->add_option("--coords", train.coords, "Coordinates per instance");
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--scale-min", train.scale_min);
  c_train->add_option("--scale-max", train.scale_max);
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--variant", train.variant, "LIIF, PEI-LIIF, GEI-LIIF or GPEI-LIIF");
  c_train->add_flag("--quiet", train.quiet);

  auto add_eval = [&app](const char* name, const char* help, EvalArgs& e, bool compression) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--plan", e.plan, "Experiment plan JSON");
    c->add_option("--test", e.test, "Normalized test batch sidecar")->required();
    c->add_option("--out", e.out, "Output JSON table")->required();
    c->add_option("--model", e.models, "VARIANT=checkpoint, repeatable");
    c->add_option("--directions", e.directions, "Source:target pairs such as 1:2");
    if (compression) {
      c->add_option("--ppm-levels", e.ppm_levels);
      c->add_option("--bicubic-factors", e.bicubic_factors);
    } else {
      c->add_option("--scales", e.scales);
    }
    return c;
  };
  EvalArgs eval_sr, eval_cmp;
  auto* c_sr = add_eval("eval-sr", "Super-resolution study", eval_sr, false);
  auto* c_cmp = add_eval("eval-compress", "Compression study", eval_cmp, true);

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Render CSV, JSON and SVG plots");
  c_report->add_option("--sr", report.sr, "Super-resolution table JSON");
  c_report->add_option("--compression", report.compression, "Compression table JSON");
  c_report->add_option("--out", report.out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), 2);
  }

  try {
    if (c_synth->parsed()) run_synth(synth);
    else if (c_ingest->parsed()) run_ingest(ingest);
    else if (c_train->parsed()) run_train(train);
    else if (c_sr->parsed()) run_eval(eval_sr, eh::Study::kSuperResolution);
    else if (c_cmp->parsed()) run_eval(eval_cmp, eh::Study::kCompression);
    else if (c_report->parsed()) run_report(report);
  } catch (const windsr::Error& e) {
    return report_error(windsr::to_string(e.kind()), e.what(), 1);
  } catch (const nlohmann::json::exception& e) {
    return report_error("config", e.what(), 1);
  } catch (const std::exception& e) {
    return report_error("internal", e.what(), 1);
  }
  return 0;
}
