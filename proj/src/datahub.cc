#include "windsr/datahub.h"

#include <fftw3.h>
#include <hdf5.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "windsr/baselines.h"
#include "windsr/error.h"

namespace windsr::datahub {

namespace {

// FFTW planning is not thread safe.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

std::string format_altitude(double h) {
  std::ostringstream os;
  if (h == std::round(h)) os << static_cast<long long>(h);
  else os << h;
  return os.str();
}

}  // namespace

void SynthSpec::validate() const {
  require(rows >= 16 && cols >= 16, ErrorKind::kConfig, "synthetic grid must be at least 16x16");
  require(beta > 0.0 && std::isfinite(beta), ErrorKind::kConfig, "spectral exponent must be > 0");
  require(sigma_p >= 0.0 && std::isfinite(sigma_p), ErrorKind::kConfig, "sigma_p must be >= 0");
  require(!altitudes.empty(), ErrorKind::kConfig, "no altitudes requested");
  for (double h : altitudes)
    require(h > 0.0 && std::isfinite(h), ErrorKind::kConfig, "altitudes must be positive");
  require(std::isfinite(mean_speed) && std_speed >= 0.0 && std::isfinite(std_speed),
          ErrorKind::kConfig, "invalid speed statistics");
  require(std::isfinite(alpha), ErrorKind::kConfig, "invalid power-law exponent");
}

Grid gaussian_random_field(std::size_t rows, std::size_t cols, double beta, std::uint64_t seed) {
  const std::size_t half = cols / 2 + 1;
  std::vector<double> real(rows * cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : real) v = normal(rng);

  fftw_complex* spec = fftw_alloc_complex(rows * half);
  fftw_plan forward, inverse;
  {
    std::lock_guard lock(fftw_mutex());
    forward = fftw_plan_dft_r2c_2d(static_cast<int>(rows), static_cast<int>(cols), real.data(),
                                   spec, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_2d(static_cast<int>(rows), static_cast<int>(cols), spec,
                                   real.data(), FFTW_ESTIMATE);
  }
  fftw_execute(forward);
  for (std::size_t r = 0; r < rows; ++r) {
    const double ky = r <= rows / 2 ? static_cast<double>(r) : static_cast<double>(r) - rows;
    for (std::size_t c = 0; c < half; ++c) {
      const double kx = static_cast<double>(c);
      const double k = std::hypot(ky, kx);
      const double amp = k == 0.0 ? 0.0 : std::pow(k, -beta / 2.0);
      spec[r * half + c][0] *= amp;
      spec[r * half + c][1] *= amp;
    }
  }
  fftw_execute(inverse);
  {
    std::lock_guard lock(fftw_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
  }
  fftw_free(spec);

  const double n = static_cast<double>(real.size());
  const double mean = std::accumulate(real.begin(), real.end(), 0.0) / n;
  double var = 0.0;
  for (double v : real) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : real) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return Grid(rows, cols, std::move(real));
}

std::vector<FieldStack> synth_stack(std::uint64_t seed, const SynthSpec& spec) {
  spec.validate();
  const double h0 = *std::min_element(spec.altitudes.begin(), spec.altitudes.end());
  std::vector<FieldStack> stacks(spec.altitudes.size());
  for (std::size_t a = 0; a < stacks.size(); ++a) {
    stacks[a].altitude = spec.altitudes[a];
    stacks[a].fields.reserve(spec.count);
  }
  std::mt19937_64 seeder(seed);
  for (std::size_t t = 0; t < spec.count; ++t) {
    Grid base = gaussian_random_field(spec.rows, spec.cols, spec.beta, seeder());
    for (double& v : base.values()) v = spec.mean_speed + spec.std_speed * v;
    for (std::size_t a = 0; a < stacks.size(); ++a) {
      const double h = spec.altitudes[a];
      const double ratio = std::pow(h / h0, spec.alpha);
      // Drawn for every altitude so the stream does not depend on sigma_p.
      const std::uint64_t pseed = seeder();
      WindField f{base, h, spec.component, static_cast<long>(t)};
      if (h != h0) {
        for (double& v : f.values.values()) v *= ratio;
        if (spec.sigma_p > 0.0) {
          const Grid p = gaussian_random_field(spec.rows, spec.cols, spec.beta, pseed);
          const double amp = spec.sigma_p * spec.std_speed * ratio;
          for (std::size_t i = 0; i < p.size(); ++i) f.values.values()[i] += amp * p.values()[i];
        }
      }
      stacks[a].fields.push_back(std::move(f));
    }
  }
  return stacks;
}

FieldPair make_pair(const WindField& hr, double s) {
  require(std::isfinite(s) && s >= 1.0, ErrorKind::kDomain, "scale must be >= 1");
  validate(hr);
  FieldPair p{hr, hr, s};
  if (s != 1.0) {
    const auto rows = static_cast<std::size_t>(std::round(s * static_cast<double>(hr.rows())));
    const auto cols = static_cast<std::size_t>(std::round(s * static_cast<double>(hr.cols())));
    p.sr_target.values = baselines::bicubic_resize(hr.values, rows, cols);
  }
  return p;
}

Grid normalize_grid(const Grid& g, const NormStats& stats) {
  require(stats.max > stats.min, ErrorKind::kDegenerateRange, "normalization range is empty");
  Grid out = g;
  for (double& v : out.values()) v = stats.apply(v);
  return out;
}

Grid denormalize_grid(const Grid& g, const NormStats& stats) {
  Grid out = g;
  for (double& v : out.values()) v = stats.invert(v);
  return out;
}

const std::vector<WindField>& ModalityPairBatch::modality(int m) const {
  require(m == 1 || m == 2, ErrorKind::kDomain, "modality must be 1 or 2");
  return m == 1 ? fields_m1 : fields_m2;
}

void ModalityPairBatch::validate() const {
  require(fields_m1.size() == fields_m2.size(), ErrorKind::kShape,
          "modalities hold different numbers of fields");
  require(altitude_m1 != altitude_m2, ErrorKind::kDomain, "paired modalities share an altitude");
  for (std::size_t i = 0; i < fields_m1.size(); ++i) {
    require(fields_m1[i].timestamp_id == fields_m2[i].timestamp_id, ErrorKind::kShape,
            "timestamps are not aligned at index " + std::to_string(i));
    if (!normalized) {
      windsr::validate(fields_m1[i]);
      windsr::validate(fields_m2[i]);
    }
  }
}

ModalityPairBatch pair_stacks(const std::vector<FieldStack>& stacks, double h1, double h2) {
  const auto find = [&](double h) -> const FieldStack& {
    for (const auto& s : stacks)
      if (s.altitude == h) return s;
    fail(ErrorKind::kIngestion, "no stack at altitude " + format_altitude(h) + " m");
  };
  ModalityPairBatch b;
  b.altitude_m1 = h1;
  b.altitude_m2 = h2;
  b.fields_m1 = find(h1).fields;
  b.fields_m2 = find(h2).fields;
  b.validate();
  return b;
}

std::array<NormStats, 2> compute_stats(const ModalityPairBatch& batch) {
  std::array<NormStats, 2> out;
  for (int m = 1; m <= 2; ++m) {
    const auto& fields = batch.modality(m);
    require(!fields.empty(), ErrorKind::kSize, "cannot compute statistics of an empty batch");
    double lo = fields.front().values.min(), hi = fields.front().values.max();
    for (const auto& f : fields) {
      lo = std::min(lo, f.values.min());
      hi = std::max(hi, f.values.max());
    }
    require(hi > lo, ErrorKind::kDegenerateRange,
            "modality " + std::to_string(m) + " is constant (" + std::to_string(lo) + ")");
    out[m - 1] = {lo, hi};
  }
  return out;
}

ModalityPairBatch apply_normalization(const ModalityPairBatch& batch,
                                      const std::array<NormStats, 2>& stats) {
  require(!batch.normalized, ErrorKind::kConfig, "batch is already normalized");
  ModalityPairBatch out = batch;
  for (auto& f : out.fields_m1) f.values = normalize_grid(f.values, stats[0]);
  for (auto& f : out.fields_m2) f.values = normalize_grid(f.values, stats[1]);
  out.norm_stats = stats;
  out.normalized = true;
  return out;
}

ModalityPairBatch normalize(const ModalityPairBatch& batch) {
  return apply_normalization(batch, compute_stats(batch));
}

ModalityPairBatch denormalize(const ModalityPairBatch& batch) {
  require(batch.normalized, ErrorKind::kConfig, "batch is not normalized");
  ModalityPairBatch out = batch;
  for (auto& f : out.fields_m1) f.values = denormalize_grid(f.values, batch.norm_stats[0]);
  for (auto& f : out.fields_m2) f.values = denormalize_grid(f.values, batch.norm_stats[1]);
  out.normalized = false;
  return out;
}

// ---------------------------------------------------------------------------
// HDF5

std::string dataset_name(const std::string& pattern, double altitude) {
  std::string out = pattern;
  const auto pos = out.find("{h}");
  require(pos != std::string::npos, ErrorKind::kConfig,
          "dataset pattern '" + pattern + "' has no {h} placeholder");
  out.replace(pos, 3, format_altitude(altitude));
  return out;
}

namespace {

class H5Handle {
 public:
  H5Handle(hid_t id, herr_t (*close)(hid_t)) : id_(id), close_(close) {}
  ~H5Handle() {
    if (id_ >= 0) close_(id_);
  }
  H5Handle(const H5Handle&) = delete;
  H5Handle& operator=(const H5Handle&) = delete;
  hid_t get() const { return id_; }
  bool valid() const { return id_ >= 0; }

 private:
  hid_t id_;
  herr_t (*close_)(hid_t);
};

// Silences the default HDF5 error printer for the lifetime of the object.
class H5Quiet {
 public:
  H5Quiet() {
    H5Eget_auto2(H5E_DEFAULT, &func_, &data_);
    H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  }
  ~H5Quiet() { H5Eset_auto2(H5E_DEFAULT, func_, data_); }

 private:
  H5E_auto2_t func_ = nullptr;
  void* data_ = nullptr;
};

std::vector<std::string> root_names(hid_t file) {
  std::vector<std::string> names;
  H5Literate(
      file, H5_INDEX_NAME, H5_ITER_INC, nullptr,
      [](hid_t, const char* name, const H5L_info_t*, void* op) -> herr_t {
        static_cast<std::vector<std::string>*>(op)->emplace_back(name);
        return 0;
      },
      &names);
  return names;
}

// Altitudes whose dataset name matches the pattern.
std::vector<std::string> available_altitudes(hid_t file, const std::string& pattern) {
  const auto pos = pattern.find("{h}");
  const std::string prefix = pattern.substr(0, pos), suffix = pattern.substr(pos + 3);
  std::vector<std::string> out;
  for (const auto& n : root_names(file)) {
    if (n.size() <= prefix.size() + suffix.size() || !n.starts_with(prefix) || !n.ends_with(suffix))
      continue;
    out.push_back(n.substr(prefix.size(), n.size() - prefix.size() - suffix.size()));
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s.empty() ? "none" : s;
}

}  // namespace

std::vector<FieldStack> ingest_stacks(const IngestSpec& spec) {
  require(spec.row_end > spec.row_begin && spec.col_end > spec.col_begin, ErrorKind::kRange,
          "empty ingestion window");
  require(std::filesystem::exists(spec.path), ErrorKind::kIngestion,
          "file not found: " + spec.path.string());
  H5Quiet quiet;
  H5Handle file(H5Fopen(spec.path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT), H5Fclose);
  require(file.valid(), ErrorKind::kIngestion, "cannot open HDF5 file " + spec.path.string());

  const hsize_t rows = spec.row_end - spec.row_begin, cols = spec.col_end - spec.col_begin;
  std::vector<FieldStack> stacks;
  for (double h : spec.altitudes) {
    const std::string name = dataset_name(spec.dataset_pattern, h);
    if (H5Lexists(file.get(), name.c_str(), H5P_DEFAULT) <= 0)
      fail(ErrorKind::kIngestion, "dataset '" + name + "' not found; available altitudes: " +
                                      join(available_altitudes(file.get(), spec.dataset_pattern)));
    H5Handle ds(H5Dopen2(file.get(), name.c_str(), H5P_DEFAULT), H5Dclose);
    require(ds.valid(), ErrorKind::kIngestion, "cannot open dataset '" + name + "'");
    H5Handle space(H5Dget_space(ds.get()), H5Sclose);
    require(H5Sget_simple_extent_ndims(space.get()) == 3, ErrorKind::kIngestion,
            "dataset '" + name + "' is not time x row x col");
    hsize_t dims[3];
    H5Sget_simple_extent_dims(space.get(), dims, nullptr);
    require(spec.row_end <= dims[1] && spec.col_end <= dims[2], ErrorKind::kRange,
            "window exceeds dataset '" + name + "' of " + std::to_string(dims[1]) + "x" +
                std::to_string(dims[2]));

    FieldStack stack{h, {}};
    H5Handle mem(H5Screate_simple(2, std::array<hsize_t, 2>{rows, cols}.data(), nullptr), H5Sclose);
    for (long t : spec.timestamps) {
      require(t >= 0 && static_cast<hsize_t>(t) < dims[0], ErrorKind::kRange,
              "timestamp " + std::to_string(t) + " outside dataset '" + name + "'");
      const hsize_t start[3] = {static_cast<hsize_t>(t), spec.row_begin, spec.col_begin};
      const hsize_t count[3] = {1, rows, cols};
      H5Sselect_hyperslab(space.get(), H5S_SELECT_SET, start, nullptr, count, nullptr);
      std::vector<double> buf(rows * cols);
      require(H5Dread(ds.get(), H5T_NATIVE_DOUBLE, mem.get(), space.get(), H5P_DEFAULT,
                      buf.data()) >= 0,
              ErrorKind::kIngestion, "read failed for dataset '" + name + "'");
      WindField f{Grid(rows, cols, std::move(buf)), h, spec.component, t};
      validate(f);
      stack.fields.push_back(std::move(f));
    }
    stacks.push_back(std::move(stack));
  }
  return stacks;
}

ModalityPairBatch ingest_wtk(const IngestSpec& spec) {
  require(spec.altitudes.size() == 2, ErrorKind::kConfig, "pair ingestion needs two altitudes");
  const auto stacks = ingest_stacks(spec);
  ModalityPairBatch b;
  b.altitude_m1 = spec.altitudes[0];
  b.altitude_m2 = spec.altitudes[1];
  b.fields_m1 = stacks[0].fields;
  b.fields_m2 = stacks[1].fields;
  b.validate();
  return b;
}

void export_wtk(const std::filesystem::path& path, const std::vector<FieldStack>& stacks,
                const std::string& dataset_pattern) {
  H5Quiet quiet;
  H5Handle file(H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT), H5Fclose);
  require(file.valid(), ErrorKind::kIo, "cannot create " + path.string());
  for (const auto& s : stacks) {
    require(!s.fields.empty(), ErrorKind::kSize, "cannot export an empty stack");
    const hsize_t dims[3] = {s.fields.size(), s.fields[0].rows(), s.fields[0].cols()};
    std::vector<float> buf;
    buf.reserve(dims[0] * dims[1] * dims[2]);
    for (const auto& f : s.fields) {
      require(f.rows() == dims[1] && f.cols() == dims[2], ErrorKind::kShape,
              "fields in a stack must share a shape");
      for (double v : f.values.values()) buf.push_back(static_cast<float>(v));
    }
    H5Handle space(H5Screate_simple(3, dims, nullptr), H5Sclose);
    const std::string name = dataset_name(dataset_pattern, s.altitude);
    H5Handle ds(H5Dcreate2(file.get(), name.c_str(), H5T_IEEE_F32LE, space.get(), H5P_DEFAULT,
                           H5P_DEFAULT, H5P_DEFAULT),
                H5Dclose);
    require(ds.valid(), ErrorKind::kIo, "cannot create dataset " + name);
    require(H5Dwrite(ds.get(), H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, buf.data()) >= 0,
            ErrorKind::kIo, "write failed for dataset " + name);
  }
}

// ---------------------------------------------------------------------------

DatasetSplit split(const ModalityPairBatch& batch, std::size_t n_train, std::size_t n_test,
                   std::uint64_t seed) {
  batch.validate();
  require(n_train + n_test <= batch.size(), ErrorKind::kSize,
          "requested " + std::to_string(n_train) + "+" + std::to_string(n_test) +
              " instances but only " + std::to_string(batch.size()) + " are available");
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with an explicit draw so the permutation is library independent.
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  DatasetSplit out;
  out.seed = seed;
  for (auto* part : {&out.train, &out.test}) {
    part->altitude_m1 = batch.altitude_m1;
    part->altitude_m2 = batch.altitude_m2;
    part->norm_stats = batch.norm_stats;
    part->normalized = batch.normalized;
  }
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    auto& part = i < n_train ? out.train : out.test;
    part.fields_m1.push_back(batch.fields_m1[order[i]]);
    part.fields_m2.push_back(batch.fields_m2[order[i]]);
  }
  return out;
}

DatasetSplit normalize_split(const DatasetSplit& s) {
  const auto stats = compute_stats(s.train);
  return {apply_normalization(s.train, stats), apply_normalization(s.test, stats), s.seed};
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void write_f32(const std::filesystem::path& p, const Grid& g) {
  std::string bytes(g.size() * 4, '\0');
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(g.values()[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + p.string());
}

Grid read_f32(const std::filesystem::path& p, std::size_t rows, std::size_t cols) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() == rows * cols * 4, ErrorKind::kIo,
          p.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
              std::to_string(rows * cols * 4));
  Grid g(rows, cols);
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    g.values()[i] = std::bit_cast<float>(bits);
  }
  return g;
}

}  // namespace

void save_batch(const ModalityPairBatch& batch, const std::filesystem::path& dir,
                const std::string& name) {
  batch.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["altitudes"] = {batch.altitude_m1, batch.altitude_m2};
  j["normalized"] = batch.normalized;
  j["norm_stats"] = nlohmann::json::array();
  for (const auto& s : batch.norm_stats) j["norm_stats"].push_back({{"min", s.min}, {"max", s.max}});
  j["fields"] = nlohmann::json::array();
  for (int m = 1; m <= 2; ++m) {
    const auto& fields = batch.modality(m);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const auto& f = fields[i];
      const std::string file = name + "_m" + std::to_string(m) + "_" + std::to_string(i) + ".f32";
      write_f32(dir / file, f.values);
      j["fields"].push_back({{"file", file},
                             {"modality", m},
                             {"rows", f.rows()},
                             {"cols", f.cols()},
                             {"altitude", f.altitude},
                             {"component", std::string(to_string(f.component))},
                             {"timestamp_id", f.timestamp_id}});
    }
  }
  std::ofstream out(dir / (name + ".json"));
  out << j.dump(2) << "\n";
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write sidecar for " + name);
}

ModalityPairBatch load_batch(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + sidecar.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    ModalityPairBatch b;
    b.altitude_m1 = j.at("altitudes").at(0).get<double>();
    b.altitude_m2 = j.at("altitudes").at(1).get<double>();
    b.normalized = j.at("normalized").get<bool>();
    for (int m = 0; m < 2; ++m)
      b.norm_stats[m] = {j.at("norm_stats").at(m).at("min").get<double>(),
                         j.at("norm_stats").at(m).at("max").get<double>()};
    const auto dir = sidecar.parent_path();
    for (const auto& f : j.at("fields")) {
      WindField w{read_f32(dir / f.at("file").get<std::string>(), f.at("rows").get<std::size_t>(),
                           f.at("cols").get<std::size_t>()),
                  f.at("altitude").get<double>(),
                  component_from_string(f.at("component").get<std::string>()),
                  f.at("timestamp_id").get<long>()};
      (f.at("modality").get<int>() == 1 ? b.fields_m1 : b.fields_m2).push_back(std::move(w));
    }
    b.validate();
    return b;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIo, "malformed sidecar " + sidecar.string() + ": " + e.what());
  }
}

}  // namespace windsr::datahub
