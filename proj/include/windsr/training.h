#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "windsr/datahub.h"
#include "windsr/neuralcore.h"

namespace windsr::training {

using neuralcore::CoordinateBatch;
using neuralcore::DecoderVariant;
using neuralcore::ModelBundle;
using neuralcore::ModelConfig;
using neuralcore::Tensor;
using neuralcore::Var;

struct LossBreakdown {
  double l_self = 0.0;
  double l_cross = 0.0;
  double l_latent = 0.0;
  double total = 0.0;
};

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 4;
  std::size_t coords_per_instance = 1024;
  double learning_rate = 1e-4;
  double scale_min = 1.0;
  double scale_max = 2.0;
  int reduction = 8;
  std::uint64_t seed = 0;
  DecoderVariant variant = DecoderVariant::kGei;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// ---------------------------------------------------------------------------
// Losses for one instance. Targets are values at `coords` of the bicubic SR
// targets of each modality.

struct InstanceSample {
  Var x1, x2;  // [1,H,W] high-resolution inputs
  CoordinateBatch coords;
  std::vector<double> t1, t2;
};

// D1(FE1(E11(X1))) against t1 plus D2(FE2(E22(X2))) against t2.
Var loss_self(const ModelBundle& model, const InstanceSample& s);
// D1(FE1(E21(X2))) against t1 plus D2(FE2(E12(X1))) against t2.
Var loss_cross(const ModelBundle& model, const InstanceSample& s);
// Each latent against the elementwise mean of its pair: (a,b) and (c,e).
Var loss_latent(const Var& a, const Var& b, const Var& c, const Var& e);

struct LossTerms {
  Var self, cross, latent, total;
  LossBreakdown values() const;
};

// All three terms sharing one encoding pass, averaged over instances.
LossTerms compute_losses(const ModelBundle& model, std::span<const InstanceSample> samples);

// Draws s ~ U[scale_min, scale_max], builds bicubic targets and samples
// coords_per_instance target pixels without replacement.
std::vector<InstanceSample> sample_instances(const datahub::ModalityPairBatch& batch,
                                             std::span<const std::size_t> indices,
                                             const TrainConfig& cfg, std::mt19937_64& rng);

// ---------------------------------------------------------------------------

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void zero_grad();
  void step();

  double learning_rate() const { return lr_; }
  long steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

class Trainer {
 public:
  Trainer(ModelBundle& model, TrainConfig cfg);

  // One optimizer update on the given instances; returns the pre-update losses.
  LossBreakdown step(const datahub::ModalityPairBatch& data, std::span<const std::size_t> indices);
  // Every instance of the batch.
  LossBreakdown step(const datahub::ModalityPairBatch& data);

  ModelBundle& model() { return *model_; }
  const ModelBundle& model() const { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  std::mt19937_64& rng() { return rng_; }
  const std::mt19937_64& rng() const { return rng_; }
  long step_count() const { return adam_.steps(); }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }
  std::optional<double> initial_loss() const { return initial_; }
  void set_initial_loss(std::optional<double> v) { initial_ = v; }

 private:
  ModelBundle* model_;
  TrainConfig cfg_;
  Adam adam_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
  std::optional<double> initial_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "WSCK", u32 version, u64 manifest length, JSON manifest, then
// float64 little-endian tensor data with a crc32 recorded in the manifest.

struct Checkpoint {
  ModelBundle model;
  TrainConfig train;
  int epoch = 0;
  long step = 0;
  std::string rng_state;
  std::optional<double> initial_loss;
  std::vector<Tensor> adam_m, adam_v;
};

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Rebuilds a trainer from a checkpoint, restoring optimizer and sampler state.
Trainer resume(Checkpoint& ckpt);

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;  // epoch mean
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const EpochLog& e);

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoints and loss_log.jsonl; empty disables output
  std::function<void(const EpochLog&)> on_epoch;
};

// Runs epochs up to trainer.config().epochs. Writes checkpoint_epoch<N>.wsck
// (N = 0 before any training) and appends one JSON record per epoch.
std::vector<EpochLog> train(Trainer& trainer, const datahub::DatasetSplit& split,
                            const TrainOptions& opts = {});

// ---------------------------------------------------------------------------

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t within = 0;       // relative error <= tolerance
  double max_rel_error = 0.0;
  double tolerance = 1e-3;
  double fraction() const { return checked ? double(within) / double(checked) : 1.0; }
};

// Central differences on `count` random scalars of the total loss.
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(ModelBundle& model, std::span<const InstanceSample> samples,
                           std::size_t count, std::uint64_t seed, double step = 1e-5,
                           double tolerance = 1e-3, double floor = 1e-8);

}  // namespace windsr::training
