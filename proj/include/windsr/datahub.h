#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "windsr/field.h"

namespace windsr::datahub {

struct SynthSpec {
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::vector<double> altitudes = {10.0, 160.0};
  double beta = 3.0;         // spectral exponent of the power spectrum k^-beta
  double sigma_p = 0.1;      // perturbation magnitude relative to the fluctuation scale
  std::size_t count = 16;    // timestamps
  double mean_speed = 8.0;   // base field mean (m/s)
  double std_speed = 2.0;    // base field standard deviation (m/s)
  double alpha = 0.16;       // power-law exponent linking altitudes
  Component component = Component::kNorthern;

  void validate() const;
};

// All timestamps of one altitude, in timestamp order.
struct FieldStack {
  double altitude = 0.0;
  std::vector<WindField> fields;
};

// One stack per requested altitude. The lowest altitude holds a Gaussian random
// field; every other altitude is that field scaled by (h/h_min)^alpha plus an
// independent smooth perturbation of standard deviation
// sigma_p * std_speed * (h/h_min)^alpha.
std::vector<FieldStack> synth_stack(std::uint64_t seed, const SynthSpec& spec);

// Zero-mean, unit-variance periodic field with power spectrum k^-beta.
Grid gaussian_random_field(std::size_t rows, std::size_t cols, double beta, std::uint64_t seed);

struct FieldPair {
  WindField hr;
  WindField sr_target;
  double scale = 1.0;
};

// sr_target is the bicubic resize of hr to round(s*h) x round(s*w).
FieldPair make_pair(const WindField& hr, double s);

struct NormStats {
  double min = 0.0;
  double max = 1.0;

  double range() const { return max - min; }
  double apply(double v) const { return (v - min) / (max - min); }
  double invert(double v) const { return v * (max - min) + min; }
  bool operator==(const NormStats&) const = default;
};

Grid normalize_grid(const Grid& g, const NormStats& stats);
Grid denormalize_grid(const Grid& g, const NormStats& stats);

struct ModalityPairBatch {
  double altitude_m1 = 10.0;
  double altitude_m2 = 160.0;
  std::vector<WindField> fields_m1;
  std::vector<WindField> fields_m2;
  std::array<NormStats, 2> norm_stats{};
  bool normalized = false;

  std::size_t size() const { return fields_m1.size(); }
  const std::vector<WindField>& modality(int m) const;
  // Equal lengths, aligned timestamps, distinct altitudes, valid fields.
  void validate() const;
};

// Pairs the stacks at altitudes h1 and h2. Throws kIngestion if either is missing.
ModalityPairBatch pair_stacks(const std::vector<FieldStack>& stacks, double h1, double h2);

// Per-modality min and max. Throws kDegenerateRange for a constant modality.
std::array<NormStats, 2> compute_stats(const ModalityPairBatch& batch);
// Normalizes with the batch's own statistics.
ModalityPairBatch normalize(const ModalityPairBatch& batch);
// Normalizes with given statistics; values outside [0,1] are kept.
ModalityPairBatch apply_normalization(const ModalityPairBatch& batch,
                                      const std::array<NormStats, 2>& stats);
ModalityPairBatch denormalize(const ModalityPairBatch& batch);

struct IngestSpec {
  std::filesystem::path path;
  std::vector<double> altitudes;
  std::size_t row_begin = 0, row_end = 120;
  std::size_t col_begin = 0, col_end = 160;
  std::vector<long> timestamps;
  // "{h}" is replaced by the altitude in meters.
  std::string dataset_pattern = "windspeed_{h}m";
  Component component = Component::kNorthern;
};

std::string dataset_name(const std::string& pattern, double altitude);

// Reads windows of time x row x col datasets, one stack per altitude.
std::vector<FieldStack> ingest_stacks(const IngestSpec& spec);
// Two-altitude form of ingest_stacks.
ModalityPairBatch ingest_wtk(const IngestSpec& spec);
// Writes stacks in the layout ingest_stacks reads (float32, time x row x col).
void export_wtk(const std::filesystem::path& path, const std::vector<FieldStack>& stacks,
                const std::string& dataset_pattern = "windspeed_{h}m");

struct DatasetSplit {
  ModalityPairBatch train;
  ModalityPairBatch test;
  std::uint64_t seed = 0;
};

// Uniform sampling without replacement. Throws kSize when n_train + n_test
// exceeds the batch.
DatasetSplit split(const ModalityPairBatch& batch, std::size_t n_train, std::size_t n_test,
                   std::uint64_t seed);
// Statistics from the training half applied to both halves.
DatasetSplit normalize_split(const DatasetSplit& s);

// Raw little-endian float32 files, one per field, plus <name>.json.
void save_batch(const ModalityPairBatch& batch, const std::filesystem::path& dir,
                const std::string& name);
ModalityPairBatch load_batch(const std::filesystem::path& sidecar);

}  // namespace windsr::datahub
