#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "windsr/datahub.h"
#include "windsr/metrics.h"
#include "windsr/neuralcore.h"

namespace windsr::evalharness {

using metrics::MetricRecord;
using neuralcore::DecoderVariant;
using neuralcore::ModelBundle;

enum class Study { kSuperResolution, kCompression };

// Modality ids: 1 is the lower altitude h1, 2 the upper altitude h2.
struct Direction {
  int source = 1;
  int target = 2;
  bool operator==(const Direction&) const = default;
};

std::vector<Direction> all_directions();

struct ModelRef {
  DecoderVariant variant = DecoderVariant::kGei;
  std::filesystem::path checkpoint;
};

struct ExperimentPlan {
  Study study = Study::kSuperResolution;
  std::vector<DecoderVariant> variants;  // super-resolution rows
  std::vector<double> scales = {1.0, 1.25, 1.5, 2.0, 3.0, 4.0};
  std::vector<std::uint32_t> ppm_levels = {8, 16};
  std::vector<std::uint32_t> bicubic_factors = {8, 4};
  std::vector<ModelRef> models;
  std::vector<Direction> directions = {{1, 2}};
  double alpha = 0.16;

  // Scales >= 1, valid directions, and every checkpoint present (kPlan).
  void validate() const;
};

nlohmann::json to_json(const ExperimentPlan& p);
ExperimentPlan plan_from_json(const nlohmann::json& j);

class ModelSet {
 public:
  // Loads every checkpoint of the plan.
  static ModelSet load(const ExperimentPlan& plan);

  void add(ModelBundle model);
  // Models of a variant, in insertion order.
  std::vector<const ModelBundle*> find(DecoderVariant v) const;
  const std::vector<std::unique_ptr<ModelBundle>>& all() const { return models_; }

 private:
  std::vector<std::unique_ptr<ModelBundle>> models_;
};

// Latents shared between the super-resolution and compression studies so
// that the s = 1 rows of both decode the same encoding.
class LatentCache {
 public:
  const neuralcore::LatentGrid& get(const ModelBundle& model, Direction dir, std::size_t instance,
                                    const Grid& input);
  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::tuple<const ModelBundle*, int, int, std::size_t>, neuralcore::LatentGrid> cache_;
};

// The test batch must be normalized; metrics are computed in physical units.
std::vector<MetricRecord> run_sr_study(const ExperimentPlan& plan, const ModelSet& models,
                                       const datahub::ModalityPairBatch& test,
                                       LatentCache* cache = nullptr);

// Baseline rows via baseline_pipeline, neural rows at s = 1 for every model.
std::vector<MetricRecord> run_compression_study(const ExperimentPlan& plan, const ModelSet& models,
                                                const datahub::ModalityPairBatch& test,
                                                LatentCache* cache = nullptr);

std::string neural_method_id(DecoderVariant v, int reduction);

struct ReportTables {
  std::vector<MetricRecord> super_resolution;
  std::vector<MetricRecord> compression;
};

nlohmann::json to_json(const ReportTables& t);
ReportTables tables_from_json(const nlohmann::json& j);

// Writes <study>.csv, <study>.json, report.json and SVG plots: PSNR/SSIM
// against scale per direction, and per-method bars per direction. Returns the
// files written. Nothing is written when both tables are empty.
std::vector<std::filesystem::path> emit_report(const ReportTables& tables,
                                               const std::filesystem::path& out_dir);

}  // namespace windsr::evalharness
