#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "windsr/autodiff.h"
#include "windsr/field.h"

namespace windsr::neuralcore {

using autodiff::Tensor;
using autodiff::Var;

enum class DecoderVariant { kLiif, kPei, kGei, kGpei };

std::string_view to_string(DecoderVariant v);
DecoderVariant variant_from_string(std::string_view s);
inline bool uses_global(DecoderVariant v) {
  return v == DecoderVariant::kGei || v == DecoderVariant::kGpei;
}
inline bool uses_positional(DecoderVariant v) {
  return v == DecoderVariant::kPei || v == DecoderVariant::kGpei;
}

struct ModelConfig {
  int reduction = 8;            // d; a power of two
  int latent_channels = 1;      // c_L
  int encoder_width = 32;
  int encoder_res_blocks = 2;   // per downsampling stage
  int feature_channels = 64;    // c_F
  int feature_blocks = 8;
  double feature_res_scale = 1.0;
  bool feature_unfold = false;  // 3x3 neighbourhood concatenation before querying
  int global_width = 16;        // first global stage; doubles per stage
  int global_dim = 128;         // g
  std::vector<int> decoder_hidden = {256, 256, 256, 256};
  DecoderVariant variant = DecoderVariant::kGei;
  int positional_freqs = 6;     // L
  std::uint64_t seed = 0;

  void validate() const;
  // Width of one LIIF candidate: latent feature, relative coordinate, cell.
  int local_width() const;
  int decoder_input_width() const;

  // Gradient-check scale: c_L=2, c_F=8, g=8, d=4.
  static ModelConfig tiny();
  // Reduced widths for CPU training runs on 64x64 fields.
  static ModelConfig desk();
};

// ---------------------------------------------------------------------------
// Domain types

struct LatentGrid {
  Tensor values;  // [c_L, h_L, w_L]
  int source = 1;
  int target = 1;
  int reduction = 1;
};

struct FeatureGrid {
  Tensor values;  // [c_F, h_F, w_F]
  double cell_y() const { return 2.0 / values.dim(1); }
  double cell_x() const { return 2.0 / values.dim(2); }
};

// Query points in normalized [-1,1]^2 as (y, x), plus the target-pixel extent.
struct CoordinateBatch {
  std::vector<double> coords;  // y0, x0, y1, x1, ...
  double cell_y = 0.0;
  double cell_x = 0.0;

  std::size_t size() const { return coords.size() / 2; }
  double y(std::size_t i) const { return coords[2 * i]; }
  double x(std::size_t i) const { return coords[2 * i + 1]; }
  void validate() const;

  // Pixel centers of an rows x cols grid, optionally restricted to `pixels`.
  static CoordinateBatch grid_centers(std::size_t rows, std::size_t cols);
  static CoordinateBatch grid_pixels(std::size_t rows, std::size_t cols,
                                     const std::vector<std::size_t>& pixels);
};

inline constexpr int kEnsembleSize = 4;

// Local-ensemble features for N queries, stored candidate-major: row k*N + n
// holds candidate k of query n. weights follow the same layout and sum to one
// per query.
struct LocalFeatures {
  Var features;                 // [4N, p]
  std::vector<double> weights;  // [4N]
  std::vector<double> relative; // [4N, 2] scaled relative coordinates
  std::size_t count = 0;

  std::size_t width() const { return static_cast<std::size_t>(features.shape()[1]); }
  std::vector<double> vector(std::size_t query, int candidate) const;
};

LocalFeatures liif_query(const Var& feature_grid, const CoordinateBatch& batch);
LocalFeatures liif_query(const FeatureGrid& grid, const CoordinateBatch& batch);

// [N, 4L]: sin/cos of 2^j pi y and 2^j pi x for j < L.
Tensor positional_encode(const CoordinateBatch& batch, int freqs);

// ---------------------------------------------------------------------------
// Layers

struct NamedParameter {
  std::string name;
  Var var;
};

class ParameterSet {
 public:
  Var create(const std::string& name, Tensor init);
  const std::vector<NamedParameter>& all() const { return params_; }
  std::size_t scalar_count() const;
  Var find(std::string_view name) const;

 private:
  std::vector<NamedParameter> params_;
};

struct Conv2d {
  Var weight, bias;
  int stride = 1, pad = 0;
  Var operator()(const Var& x) const;
};

struct Linear {
  Var weight, bias;  // bias may be undefined
  Var operator()(const Var& x) const;
};

struct ResBlock {
  Conv2d first, second;
  double res_scale = 1.0;
  Var operator()(const Var& x) const;
};

// Strided downsampling stages followed by a 1x1 projection to c_L channels.
class ReducingEncoder {
 public:
  ReducingEncoder() = default;
  ReducingEncoder(const ModelConfig& cfg, ParameterSet& params, const std::string& prefix,
                  std::mt19937_64& rng);
  Var forward(const Var& x) const;  // [1,H,W] -> [c_L, H/d, W/d]
  int reduction() const { return reduction_; }

 private:
  struct Stage {
    Conv2d down;
    std::vector<ResBlock> blocks;
  };
  std::vector<Stage> stages_;
  Conv2d head_;
  int reduction_ = 1;
};

// EDSR-style body without the upsampling tail.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(const ModelConfig& cfg, ParameterSet& params, const std::string& prefix,
                 std::mt19937_64& rng);
  Var forward(const Var& latent) const;  // [c_L,h,w] -> [c_F(*9),h,w]
  Var stem(const Var& latent) const;
  const std::vector<ResBlock>& blocks() const { return blocks_; }

 private:
  Conv2d stem_;
  std::vector<ResBlock> blocks_;
  bool unfold_ = false;
};

// Four strided conv stages then global average pooling -> [1, g].
class GlobalEncoder {
 public:
  GlobalEncoder() = default;
  GlobalEncoder(const ModelConfig& cfg, ParameterSet& params, const std::string& prefix,
                std::mt19937_64& rng);
  Var forward(const Var& latent) const;

 private:
  std::vector<Conv2d> stages_;
};

// Coordinate MLP. The first layer is split by input group so that each optional
// input (global vector, positional code) has its own weight block.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const ModelConfig& cfg, ParameterSet& params, const std::string& prefix,
          std::mt19937_64& rng);

  // local [M,p]; global [1,g] or undefined; positional [M,4L] or undefined -> [M,1]
  Var forward(const Var& local, const Var& global, const Var& positional) const;

  DecoderVariant variant() const { return variant_; }
  int input_width() const;
  const Linear& global_input() const { return global_in_; }
  const Linear& output_layer() const { return layers_.back(); }

 private:
  DecoderVariant variant_ = DecoderVariant::kLiif;
  int local_width_ = 0, global_width_ = 0, positional_width_ = 0;
  Linear local_in_, global_in_, positional_in_;
  std::vector<Linear> layers_;  // remaining hidden layers and the output layer
};

// ---------------------------------------------------------------------------

struct Route {
  int encoder_source = 1;
  int encoder_target = 1;
  int head = 1;  // FE_t, G_t, D_t
  bool operator==(const Route&) const = default;
};

// Modalities are numbered 1 and 2. Encoders E[s][t] map modality s to the
// latent space of modality t; heads (FE, G, D) are per target modality.
class ModelBundle {
 public:
  explicit ModelBundle(const ModelConfig& cfg);
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
  ModelBundle(ModelBundle&&) = default;
  ModelBundle& operator=(ModelBundle&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  static Route route(int source, int target);

  const ReducingEncoder& encoder(int source, int target) const;
  const FeatureEncoder& feature_encoder(int modality) const;
  const GlobalEncoder& global_encoder(int modality) const;
  const Decoder& decoder(int modality) const;

  // Differentiable pieces used by training and inference.
  Var encode(int source, int target, const Var& field) const;
  struct HeadState {
    Var features;  // FE_t(latent)
    Var global;    // G_t(latent), undefined when the variant has no global input
  };
  HeadState head(int target, const Var& latent) const;
  Var decode_points(int target, const HeadState& state, const CoordinateBatch& batch) const;
  Var predict_points(int source, int target, const Var& field, const CoordinateBatch& batch) const;

 private:
  ModelConfig cfg_;
  ParameterSet params_;
  std::array<std::array<ReducingEncoder, 2>, 2> encoders_;
  std::array<FeatureEncoder, 2> feature_encoders_;
  std::array<GlobalEncoder, 2> global_encoders_;
  std::array<Decoder, 2> decoders_;
};

void check_modality(int id);
Tensor field_tensor(const Grid& g);

// ---------------------------------------------------------------------------
// Inference-level operations (no gradient recording)

LatentGrid reduce(const ModelBundle& model, int source, int target, const Grid& field);
FeatureGrid extract_feature_grid(const ModelBundle& model, int modality, const LatentGrid& latent);
Tensor global_encode(const ModelBundle& model, int modality, const LatentGrid& latent);
// Ensemble-weighted decode of pre-extracted local features.
std::vector<double> decode(const ModelBundle& model, int modality, const LocalFeatures& local,
                           const Tensor* global, const Tensor* positional);
std::vector<double> predict(const ModelBundle& model, const Grid& field, int source, int target,
                            const CoordinateBatch& batch);
// Decodes from an already-computed latent; predict_grid reduces then calls this.
Grid decode_grid(const ModelBundle& model, const LatentGrid& latent, std::size_t rows,
                 std::size_t cols);
Grid predict_grid(const ModelBundle& model, const Grid& field, int source, int target, double scale);

}  // namespace windsr::neuralcore
