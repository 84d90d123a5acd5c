#include "windsr/training.h"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "windsr/error.h"

namespace windsr::training {

namespace ad = windsr::autodiff;
namespace nc = windsr::neuralcore;
using nlohmann::json;

void TrainConfig::validate() const {
  require(epochs >= 0, ErrorKind::kConfig, "epochs must be >= 0");
  require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  require(coords_per_instance >= 1, ErrorKind::kConfig, "coords_per_instance must be >= 1");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::kConfig,
          "learning_rate must be finite and >= 0");
  require(scale_min >= 1.0 && scale_max >= scale_min && std::isfinite(scale_max),
          ErrorKind::kConfig, "scale range must satisfy 1 <= s_min <= s_max");
  require(reduction >= 1, ErrorKind::kConfig, "reduction must be >= 1");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"coords_per_instance", c.coords_per_instance},
          {"learning_rate", c.learning_rate},
          {"scale_range", {c.scale_min, c.scale_max}},
          {"d", c.reduction},
          {"seed", c.seed},
          {"decoder_variant", std::string(nc::to_string(c.variant))}};
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* what) {
  require(j.is_object(), ErrorKind::kConfig, std::string(what) + " must be a JSON object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    require(known.count(k) > 0, ErrorKind::kConfig, std::string("unknown ") + what + " key '" + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  reject_unknown(j,
                 {"epochs", "batch_size", "coords_per_instance", "learning_rate", "scale_range",
                  "d", "seed", "decoder_variant"},
                 "train config");
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "coords_per_instance", c.coords_per_instance);
  read(j, "learning_rate", c.learning_rate);
  read(j, "d", c.reduction);
  read(j, "seed", c.seed);
  if (j.contains("scale_range")) {
    std::vector<double> r;
    read(j, "scale_range", r);
    require(r.size() == 2, ErrorKind::kConfig, "scale_range needs two values");
    c.scale_min = r[0];
    c.scale_max = r[1];
  }
  if (j.contains("decoder_variant")) {
    std::string v;
    read(j, "decoder_variant", v);
    c.variant = nc::variant_from_string(v);
  }
  c.validate();
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"reduction", c.reduction},
          {"latent_channels", c.latent_channels},
          {"encoder_width", c.encoder_width},
          {"encoder_res_blocks", c.encoder_res_blocks},
          {"feature_channels", c.feature_channels},
          {"feature_blocks", c.feature_blocks},
          {"feature_res_scale", c.feature_res_scale},
          {"feature_unfold", c.feature_unfold},
          {"global_width", c.global_width},
          {"global_dim", c.global_dim},
          {"decoder_hidden", c.decoder_hidden},
          {"variant", std::string(nc::to_string(c.variant))},
          {"positional_freqs", c.positional_freqs},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  reject_unknown(j,
                 {"reduction", "latent_channels", "encoder_width", "encoder_res_blocks",
                  "feature_channels", "feature_blocks", "feature_res_scale", "feature_unfold",
                  "global_width", "global_dim", "decoder_hidden", "variant", "positional_freqs",
                  "seed"},
                 "model config");
  read(j, "reduction", c.reduction);
  read(j, "latent_channels", c.latent_channels);
  read(j, "encoder_width", c.encoder_width);
  read(j, "encoder_res_blocks", c.encoder_res_blocks);
  read(j, "feature_channels", c.feature_channels);
  read(j, "feature_blocks", c.feature_blocks);
  read(j, "feature_res_scale", c.feature_res_scale);
  read(j, "feature_unfold", c.feature_unfold);
  read(j, "global_width", c.global_width);
  read(j, "global_dim", c.global_dim);
  read(j, "decoder_hidden", c.decoder_hidden);
  read(j, "positional_freqs", c.positional_freqs);
  read(j, "seed", c.seed);
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v);
    c.variant = nc::variant_from_string(v);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

void check_sample(const InstanceSample& s) {
  require(s.t1.size() == s.coords.size() && s.t2.size() == s.coords.size(), ErrorKind::kShape,
          "targets hold " + std::to_string(s.t1.size()) + "/" + std::to_string(s.t2.size()) +
              " values for " + std::to_string(s.coords.size()) + " coordinates");
}

struct Latents {
  Var a, b, c, e;  // E11(X1), E21(X2), E22(X2), E12(X1)
};

Latents encode_all(const ModelBundle& m, const InstanceSample& s) {
  return {m.encode(1, 1, s.x1), m.encode(2, 1, s.x2), m.encode(2, 2, s.x2), m.encode(1, 2, s.x1)};
}

Var point_loss(const ModelBundle& m, int target, const Var& latent, const InstanceSample& s) {
  const Var pred = m.decode_points(target, m.head(target, latent), s.coords);
  return ad::mse(pred, target == 1 ? s.t1 : s.t2);
}

}  // namespace

Var loss_self(const ModelBundle& model, const InstanceSample& s) {
  check_sample(s);
  return ad::add(point_loss(model, 1, model.encode(1, 1, s.x1), s),
                 point_loss(model, 2, model.encode(2, 2, s.x2), s));
}

Var loss_cross(const ModelBundle& model, const InstanceSample& s) {
  check_sample(s);
  return ad::add(point_loss(model, 1, model.encode(2, 1, s.x2), s),
                 point_loss(model, 2, model.encode(1, 2, s.x1), s));
}

Var loss_latent(const Var& a, const Var& b, const Var& c, const Var& e) {
  require(a.shape() == b.shape() && c.shape() == e.shape(), ErrorKind::kShape,
          "latent pairs must share a shape: " + ad::shape_string(a.shape()) + " vs " +
              ad::shape_string(b.shape()) + ", " + ad::shape_string(c.shape()) + " vs " +
              ad::shape_string(e.shape()));
  const Var m1 = ad::scale(ad::add(a, b), 0.5);
  const Var m2 = ad::scale(ad::add(c, e), 0.5);
  return ad::add(ad::add(ad::mse(a, m1), ad::mse(b, m1)), ad::add(ad::mse(c, m2), ad::mse(e, m2)));
}

LossBreakdown LossTerms::values() const {
  LossBreakdown b;
  b.l_self = self.value()[0];
  b.l_cross = cross.value()[0];
  b.l_latent = latent.value()[0];
  b.total = total.value()[0];
  return b;
}

LossTerms compute_losses(const ModelBundle& model, std::span<const InstanceSample> samples) {
  require(!samples.empty(), ErrorKind::kSize, "no instances to compute losses on");
  Var self, cross, latent;
  for (const auto& s : samples) {
    check_sample(s);
    const Latents l = encode_all(model, s);
    const Var ls = ad::add(point_loss(model, 1, l.a, s), point_loss(model, 2, l.c, s));
    const Var lc = ad::add(point_loss(model, 1, l.b, s), point_loss(model, 2, l.e, s));
    const Var ll = loss_latent(l.a, l.b, l.c, l.e);
    self = self.defined() ? ad::add(self, ls) : ls;
    cross = cross.defined() ? ad::add(cross, lc) : lc;
    latent = latent.defined() ? ad::add(latent, ll) : ll;
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  LossTerms t;
  t.self = ad::scale(self, inv);
  t.cross = ad::scale(cross, inv);
  t.latent = ad::scale(latent, inv);
  t.total = ad::add(ad::add(t.self, t.cross), t.latent);
  return t;
}

std::vector<InstanceSample> sample_instances(const datahub::ModalityPairBatch& batch,
                                             std::span<const std::size_t> indices,
                                             const TrainConfig& cfg, std::mt19937_64& rng) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  const double s = cfg.scale_min + (cfg.scale_max - cfg.scale_min) * u;
  std::vector<InstanceSample> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) {
    require(idx < batch.size(), ErrorKind::kRange, "instance index outside batch");
    const WindField& f1 = batch.fields_m1[idx];
    const WindField& f2 = batch.fields_m2[idx];
    const Grid g1 = datahub::make_pair(f1, s).sr_target.values;
    const Grid g2 = datahub::make_pair(f2, s).sr_target.values;
    require(g1.rows() == g2.rows() && g1.cols() == g2.cols(), ErrorKind::kShape,
            "paired fields differ in shape");
    const std::size_t total = g1.size();
    const std::size_t n = std::min(cfg.coords_per_instance, total);
    std::vector<std::size_t> pix(total);
    std::iota(pix.begin(), pix.end(), 0);
    for (std::size_t i = 0; i < n; ++i) std::swap(pix[i], pix[i + rng() % (total - i)]);
    pix.resize(n);

    InstanceSample is;
    is.x1 = ad::constant(nc::field_tensor(f1.values));
    is.x2 = ad::constant(nc::field_tensor(f2.values));
    is.coords = CoordinateBatch::grid_pixels(g1.rows(), g1.cols(), pix);
    is.t1.reserve(n);
    is.t2.reserve(n);
    for (std::size_t p : pix) {
      is.t1.push_back(g1.values()[p]);
      is.t2.push_back(g2.values()[p]);
    }
    out.push_back(std::move(is));
  }
  return out;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var p = params_[i];
    const Tensor& g = p.grad();
    if (g.size() == 0) continue;
    double* w = p.mutable_value().data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

namespace {

std::vector<Var> parameter_vars(const ModelBundle& m) {
  std::vector<Var> out;
  for (const auto& p : m.parameters().all()) out.push_back(p.var);
  return out;
}

}  // namespace

Trainer::Trainer(ModelBundle& model, TrainConfig cfg)
    : model_(&model), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  require(cfg_.reduction == model.config().reduction, ErrorKind::kConfig,
          "train config d=" + std::to_string(cfg_.reduction) + " but model d=" +
              std::to_string(model.config().reduction));
  require(cfg_.variant == model.config().variant, ErrorKind::kConfig,
          "train config variant differs from the model variant");
  adam_ = Adam(parameter_vars(model), cfg_.learning_rate);
}

LossBreakdown Trainer::step(const datahub::ModalityPairBatch& data,
                            std::span<const std::size_t> indices) {
  const auto samples = sample_instances(data, indices, cfg_, rng_);
  adam_.zero_grad();
  const LossTerms terms = compute_losses(*model_, samples);
  const LossBreakdown b = terms.values();
  const auto diagnostics = [&] {
    std::ostringstream os;
    os << "training diverged at step " << adam_.steps() + 1 << ": total=" << b.total
       << " self=" << b.l_self << " cross=" << b.l_cross << " latent=" << b.l_latent;
    if (initial_) os << " initial=" << *initial_;
    return os.str();
  };
  require(std::isfinite(b.total), ErrorKind::kDivergence, diagnostics());
  if (!initial_) initial_ = b.total;
  require(b.total <= 1e4 * *initial_, ErrorKind::kDivergence, diagnostics());
  ad::backward(terms.total);
  adam_.step();
  return b;
}

LossBreakdown Trainer::step(const datahub::ModalityPairBatch& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return step(data, all);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'W', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}
std::uint64_t get_le(const std::string& s, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + b])) << (8 * b);
  return v;
}

void put_tensor(std::string& s, const Tensor& t) {
  for (double v : t.values()) put_u64(s, std::bit_cast<std::uint64_t>(v));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  const ModelBundle& model = trainer.model();
  std::string data;
  json tensors = json::array();
  const auto& params = model.parameters().all();
  const auto& m = trainer.optimizer().first_moments();
  const auto& v = trainer.optimizer().second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", params[i].name}, {"shape", params[i].var.shape()}});
    put_tensor(data, params[i].var.value());
    put_tensor(data, m[i]);
    put_tensor(data, v[i]);
  }
  std::ostringstream rng;
  rng << trainer.rng();
  json manifest = {{"format", "windsr-checkpoint"},
                   {"model", to_json(model.config())},
                   {"train", to_json(trainer.config())},
                   {"epoch", trainer.epoch()},
                   {"step", trainer.step_count()},
                   {"rng", rng.str()},
                   {"tensors", tensors},
                   {"layout", "per tensor: value, adam_m, adam_v (float64 LE)"},
                   {"data_bytes", data.size()},
                   {"crc32", crc32(0L, reinterpret_cast<const Bytef*>(data.data()),
                                   static_cast<uInt>(data.size()))}};
  if (trainer.initial_loss()) manifest["initial_loss"] = *trainer.initial_loss();
  const std::string text = manifest.dump();

  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out += text;
  out += data;
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(static_cast<bool>(f), ErrorKind::kIo, "cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::kDecode,
          path.string() + " is not a checkpoint");
  const auto version = get_le(bytes, 4, 4);
  require(version == kVersion, ErrorKind::kDecode,
          "unsupported checkpoint version " + std::to_string(version));
  const auto mlen = get_le(bytes, 8, 8);
  require(16 + mlen <= bytes.size(), ErrorKind::kDecode, "truncated checkpoint manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, mlen));
  } catch (const json::exception& e) {
    fail(ErrorKind::kDecode, std::string("corrupt checkpoint manifest: ") + e.what());
  }
  const std::string data = bytes.substr(16 + mlen);
  try {
    require(data.size() == manifest.at("data_bytes").get<std::size_t>(), ErrorKind::kDecode,
            "checkpoint data is truncated");
    require(crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())) ==
                manifest.at("crc32").get<unsigned long>(),
            ErrorKind::kDecode, "checkpoint checksum mismatch");
    Checkpoint c{ModelBundle(model_config_from_json(manifest.at("model"))),
                 train_config_from_json(manifest.at("train")),
                 manifest.at("epoch").get<int>(),
                 manifest.at("step").get<long>(),
                 manifest.at("rng").get<std::string>(),
                 std::nullopt,
                 {},
                 {}};
    if (manifest.contains("initial_loss")) c.initial_loss = manifest["initial_loss"].get<double>();
    const auto& params = c.model.parameters().all();
    const auto& tensors = manifest.at("tensors");
    require(tensors.size() == params.size(), ErrorKind::kDecode,
            "checkpoint tensor count does not match the model");
    std::size_t off = 0;
    const auto read_tensor = [&](Tensor& t) {
      require(off + 8 * t.size() <= data.size(), ErrorKind::kDecode, "checkpoint data too short");
      for (double& v : t.values()) {
        v = std::bit_cast<double>(get_le(data, off, 8));
        off += 8;
      }
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      require(tensors[i].at("name").get<std::string>() == params[i].name &&
                  tensors[i].at("shape").get<ad::Shape>() == params[i].var.shape(),
              ErrorKind::kDecode, "checkpoint tensor " + params[i].name + " does not match");
      Var p = params[i].var;
      read_tensor(p.mutable_value());
      c.adam_m.emplace_back(p.shape());
      c.adam_v.emplace_back(p.shape());
      read_tensor(c.adam_m.back());
      read_tensor(c.adam_v.back());
    }
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::kDecode, std::string("malformed checkpoint manifest: ") + e.what());
  }
}

Trainer resume(Checkpoint& ckpt) {
  Trainer t(ckpt.model, ckpt.train);
  t.optimizer().first_moments() = ckpt.adam_m;
  t.optimizer().second_moments() = ckpt.adam_v;
  t.optimizer().set_steps(ckpt.step);
  std::istringstream is(ckpt.rng_state);
  is >> t.rng();
  t.set_epoch(ckpt.epoch);
  t.set_initial_loss(ckpt.initial_loss);
  return t;
}

json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"l_self", e.loss.l_self},
          {"l_cross", e.loss.l_cross},
          {"l_latent", e.loss.l_latent},
          {"total", e.loss.total},
          {"wall_seconds", e.wall_seconds}};
}

std::vector<EpochLog> train(Trainer& trainer, const datahub::DatasetSplit& split,
                            const TrainOptions& opts) {
  const auto& data = split.train;
  require(data.normalized, ErrorKind::kConfig, "training data must be normalized");
  require(data.size() > 0, ErrorKind::kSize, "training split is empty");
  const auto checkpoint = [&] {
    if (opts.out_dir.empty()) return;
    save_checkpoint(opts.out_dir / ("checkpoint_epoch" + std::to_string(trainer.epoch()) + ".wsck"),
                    trainer);
  };
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);
  if (trainer.epoch() == 0) checkpoint();

  std::vector<EpochLog> logs;
  const std::size_t bs = trainer.config().batch_size;
  while (trainer.epoch() < trainer.config().epochs) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[trainer.rng()() % i]);

    LossBreakdown sum;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(bs, order.size() - b));
      const LossBreakdown l = trainer.step(data, idx);
      sum.l_self += l.l_self;
      sum.l_cross += l.l_cross;
      sum.l_latent += l.l_latent;
      sum.total += l.total;
      ++steps;
    }
    trainer.set_epoch(trainer.epoch() + 1);
    EpochLog log;
    log.epoch = trainer.epoch();
    log.loss = {sum.l_self / steps, sum.l_cross / steps, sum.l_latent / steps, 0.0};
    log.loss.total = log.loss.l_self + log.loss.l_cross + log.loss.l_latent;
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    logs.push_back(log);
    if (!opts.out_dir.empty()) {
      std::ofstream f(opts.out_dir / "loss_log.jsonl", std::ios::app);
      f << to_json(log).dump() << "\n";
      require(static_cast<bool>(f), ErrorKind::kIo, "cannot append to the loss log");
    }
    checkpoint();
    if (opts.on_epoch) opts.on_epoch(log);
  }
  return logs;
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(ModelBundle& model, std::span<const InstanceSample> samples,
                           std::size_t count, std::uint64_t seed, double step, double tolerance,
                           double floor) {
  const auto& params = model.parameters().all();
  for (const auto& p : params) Var(p.var).zero_grad();
  ad::backward(compute_losses(model, samples).total);

  const auto total_at = [&] {
    ad::NoGradGuard guard;
    return compute_losses(model, samples).total.value()[0];
  };

  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : params) {
    offsets.push_back(total);
    total += p.var.value().size();
  }
  GradCheckResult r;
  r.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t flat = rng() % total;
    const std::size_t pi = std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1;
    const std::size_t k = flat - offsets[pi];
    Var p = params[pi].var;
    const double analytic = p.grad().size() ? p.grad()[k] : 0.0;
    double& w = p.mutable_value()[k];
    const double orig = w;
    w = orig + step;
    const double up = total_at();
    w = orig - step;
    const double down = total_at();
    w = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.checked++;
    if (err <= tolerance) r.within++;
  }
  return r;
}

}  // namespace windsr::training
