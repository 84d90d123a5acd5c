#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "windsr/field.h"

namespace windsr::baselines {

// ---------------------------------------------------------------------------
// mu-law companding and uniform quantization

struct MuLawSpec {
  double mu = 255.0;
  std::uint32_t levels = 16;  // Q, number of quantization bins

  void validate() const;
};

double mu_law_encode(double x, double mu);
double mu_law_decode(double y, double mu);

std::uint32_t quantize(double y, std::uint32_t levels);
double dequantize(std::uint32_t symbol, std::uint32_t levels);

// ---------------------------------------------------------------------------
// PPM entropy coding

inline constexpr int kDefaultPpmOrder = 3;
inline constexpr std::uint32_t kMaxAlphabet = 4096;
inline constexpr std::size_t kBlobHeaderSize = 64;
inline constexpr std::uint16_t kBlobVersion = 1;

struct BlobHeader {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  double min = 0.0;
  double max = 0.0;
  double mu = 0.0;
  std::uint32_t levels = 0;  // alphabet size
  std::uint32_t ppm_order = kDefaultPpmOrder;
  std::uint64_t payload_size = 0;
  std::uint32_t crc32 = 0;
  std::uint16_t version = kBlobVersion;

  std::uint64_t symbol_count() const { return std::uint64_t{rows} * cols; }
};

struct CompressedBlob {
  BlobHeader header;
  std::vector<std::uint8_t> payload;

  std::size_t total_bytes() const { return kBlobHeaderSize + payload.size(); }

  // Fixed 64-byte little-endian header followed by the coded payload.
  std::vector<std::uint8_t> serialize() const;
  static CompressedBlob parse(std::span<const std::uint8_t> bytes);
};

// Order-k PPM with escape method C and symbol exclusion, coded with a 32-bit
// range coder. The symbol sequence is stored as a 1 x n shape.
CompressedBlob ppm_compress(std::span<const std::uint16_t> symbols, std::uint32_t alphabet,
                            int order = kDefaultPpmOrder);
std::vector<std::uint16_t> ppm_decompress(const CompressedBlob& blob);

// Field codec: range to [-1,1] with the field's min/max, mu-law, quantize, PPM.
CompressedBlob compress_field(const Grid& field, const MuLawSpec& spec,
                              int order = kDefaultPpmOrder);
Grid decompress_field(const CompressedBlob& blob);

// ---------------------------------------------------------------------------
// Bicubic resampling (cubic convolution, a = -0.5, clamped edges). Downsampling
// stretches the kernel by the inverse scale so the result is antialiased.

inline constexpr double kCubicA = -0.5;

double cubic_kernel(double x, double a = kCubicA);
Grid bicubic_resize(const Grid& field, std::size_t out_rows, std::size_t out_cols);
// Output dims are round(factor * dim).
Grid bicubic_resize(const Grid& field, double factor);

// ---------------------------------------------------------------------------
// Wind power law v_out = v_in * (h_out / h_in)^alpha

struct PowerLawSpec {
  double alpha = 0.16;
  double h_in = 10.0;
  double h_out = 160.0;
};

struct PowerLawResult {
  Grid field;
  std::size_t clamped = 0;  // negative inputs set to zero before scaling
};

PowerLawResult power_law_transform(const Grid& field, const PowerLawSpec& spec);

// ---------------------------------------------------------------------------

enum class BaselineKind { kPpm, kBicubic, kLossless };

struct BaselineMethod {
  BaselineKind kind = BaselineKind::kPpm;
  std::uint32_t param = 16;  // Q for PPM, d for bicubic, unused for lossless
  double mu = 255.0;
  int ppm_order = kDefaultPpmOrder;

  static BaselineMethod ppm(std::uint32_t levels) { return {BaselineKind::kPpm, levels}; }
  static BaselineMethod bicubic(std::uint32_t d) { return {BaselineKind::kBicubic, d}; }
  static BaselineMethod lossless() { return {BaselineKind::kLossless, 0}; }

  std::string id() const;
};

struct BaselineResult {
  Grid reconstruction;      // at h_out
  Grid reconstruction_in;   // at h_in, before the power law
  double cr_percent = 0.0;
  std::size_t compressed_size = 0;  // bytes (PPM) or elements (bicubic)
  std::size_t clamped = 0;
};

BaselineResult baseline_pipeline(const Grid& field, const BaselineMethod& method, double h_in,
                                 double h_out, double alpha = 0.16);

}  // namespace windsr::baselines
