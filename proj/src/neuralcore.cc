#include "windsr/neuralcore.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "windsr/error.h"

namespace windsr::neuralcore {

namespace ad = windsr::autodiff;

std::string_view to_string(DecoderVariant v) {
  switch (v) {
    case DecoderVariant::kLiif: return "LIIF";
    case DecoderVariant::kPei: return "PEI-LIIF";
    case DecoderVariant::kGei: return "GEI-LIIF";
    case DecoderVariant::kGpei: return "GPEI-LIIF";
  }
  return "unknown";
}

DecoderVariant variant_from_string(std::string_view s) {
  if (s == "LIIF" || s == "liif") return DecoderVariant::kLiif;
  if (s == "PEI-LIIF" || s == "PEI" || s == "pei") return DecoderVariant::kPei;
  if (s == "GEI-LIIF" || s == "GEI" || s == "gei") return DecoderVariant::kGei;
  if (s == "GPEI-LIIF" || s == "GPEI" || s == "gpei") return DecoderVariant::kGpei;
  fail(ErrorKind::kConfig, "unknown decoder variant '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  require(reduction >= 1 && (reduction & (reduction - 1)) == 0, ErrorKind::kConfig,
          "reduction factor must be a power of two");
  require(latent_channels >= 1 && encoder_width >= 1 && encoder_res_blocks >= 0,
          ErrorKind::kConfig, "invalid encoder sizes");
  require(feature_channels >= 1 && feature_blocks >= 0, ErrorKind::kConfig,
          "invalid feature encoder sizes");
  require(global_width >= 1 && global_dim >= 1, ErrorKind::kConfig, "invalid global encoder sizes");
  require(!decoder_hidden.empty(), ErrorKind::kConfig, "decoder needs at least one hidden layer");
  for (int h : decoder_hidden) require(h >= 1, ErrorKind::kConfig, "invalid decoder width");
  require(!uses_positional(variant) || positional_freqs >= 1, ErrorKind::kConfig,
          "positional encoding needs at least one frequency");
}

int ModelConfig::local_width() const {
  return feature_channels * (feature_unfold ? 9 : 1) + 4;
}

int ModelConfig::decoder_input_width() const {
  int w = local_width();
  if (uses_global(variant)) w += global_dim;
  if (uses_positional(variant)) w += 4 * positional_freqs;
  return w;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.reduction = 4;
  c.latent_channels = 2;
  c.encoder_width = 4;
  c.encoder_res_blocks = 2;
  c.feature_channels = 8;
  c.feature_blocks = 1;
  c.global_width = 2;
  c.global_dim = 8;
  c.decoder_hidden = {16, 16};
  c.variant = DecoderVariant::kGpei;
  c.positional_freqs = 2;
  return c;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.reduction = 4;
  c.latent_channels = 1;
  c.encoder_width = 12;
  c.encoder_res_blocks = 2;
  c.feature_channels = 24;
  c.feature_blocks = 3;
  c.global_width = 8;
  c.global_dim = 32;
  c.decoder_hidden = {64, 64, 64};
  c.variant = DecoderVariant::kGei;
  c.positional_freqs = 6;
  return c;
}

// ---------------------------------------------------------------------------

void CoordinateBatch::validate() const {
  require(coords.size() % 2 == 0, ErrorKind::kShape, "coordinate list has odd length");
  constexpr double kSlack = 1.0 + 1e-6;
  for (double v : coords)
    require(std::isfinite(v) && std::abs(v) <= kSlack, ErrorKind::kDomain,
            "query coordinate outside [-1, 1]: " + std::to_string(v));
  require(cell_y >= 0.0 && cell_x >= 0.0, ErrorKind::kDomain, "negative query cell");
}

namespace {

double center(std::size_t i, std::size_t n) {
  return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
}

}  // namespace

CoordinateBatch CoordinateBatch::grid_centers(std::size_t rows, std::size_t cols) {
  CoordinateBatch b;
  b.cell_y = 2.0 / static_cast<double>(rows);
  b.cell_x = 2.0 / static_cast<double>(cols);
  b.coords.reserve(2 * rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      b.coords.push_back(center(r, rows));
      b.coords.push_back(center(c, cols));
    }
  return b;
}

CoordinateBatch CoordinateBatch::grid_pixels(std::size_t rows, std::size_t cols,
                                             const std::vector<std::size_t>& pixels) {
  CoordinateBatch b;
  b.cell_y = 2.0 / static_cast<double>(rows);
  b.cell_x = 2.0 / static_cast<double>(cols);
  b.coords.reserve(2 * pixels.size());
  for (std::size_t p : pixels) {
    require(p < rows * cols, ErrorKind::kRange, "pixel index outside grid");
    b.coords.push_back(center(p / cols, rows));
    b.coords.push_back(center(p % cols, cols));
  }
  return b;
}

std::vector<double> LocalFeatures::vector(std::size_t query, int candidate) const {
  const std::size_t row = static_cast<std::size_t>(candidate) * count + query;
  const std::size_t p = width();
  const double* base = features.value().data() + row * p;
  return {base, base + p};
}

LocalFeatures liif_query(const Var& feature_grid, const CoordinateBatch& batch) {
  require(feature_grid.defined() && feature_grid.value().rank() == 3, ErrorKind::kShape,
          "liif_query needs a [C,H,W] feature grid");
  const int h = feature_grid.shape()[1];
  const int w = feature_grid.shape()[2];
  require(h >= 1 && w >= 1 && feature_grid.shape()[0] >= 1, ErrorKind::kShape,
          "liif_query on an empty feature grid");
  batch.validate();

  const std::size_t n = batch.size();
  const std::size_t rows = kEnsembleSize * n;
  constexpr double kShift = 1e-6;
  const double half_y = 1.0 / h;
  const double half_x = 1.0 / w;

  LocalFeatures out;
  out.count = n;
  out.weights.assign(rows, 0.0);
  out.relative.assign(2 * rows, 0.0);
  std::vector<int> index(rows);
  std::vector<double> area(rows);
  Tensor extra({static_cast<int>(rows), 4});

  int k = 0;
  for (int sy : {-1, 1}) {
    for (int sx : {-1, 1}) {
      for (std::size_t q = 0; q < n; ++q) {
        const double y = batch.y(q), x = batch.x(q);
        const double cy = std::clamp(y + sy * half_y + kShift, -1.0 + kShift, 1.0 - kShift);
        const double cx = std::clamp(x + sx * half_x + kShift, -1.0 + kShift, 1.0 - kShift);
        const int iy = std::clamp(static_cast<int>(std::floor((cy + 1.0) * 0.5 * h)), 0, h - 1);
        const int ix = std::clamp(static_cast<int>(std::floor((cx + 1.0) * 0.5 * w)), 0, w - 1);
        const double rel_y = (y - (-1.0 + (2.0 * iy + 1.0) / h)) * h;
        const double rel_x = (x - (-1.0 + (2.0 * ix + 1.0) / w)) * w;
        const std::size_t row = static_cast<std::size_t>(k) * n + q;
        index[row] = iy * w + ix;
        area[row] = std::abs(rel_y * rel_x) + 1e-9;
        out.relative[2 * row] = rel_y;
        out.relative[2 * row + 1] = rel_x;
        double* e = extra.data() + 4 * row;
        e[0] = rel_y;
        e[1] = rel_x;
        e[2] = batch.cell_y * h;
        e[3] = batch.cell_x * w;
      }
      ++k;
    }
  }
  // Each candidate is weighted by the area of the diagonally opposite one.
  for (std::size_t q = 0; q < n; ++q) {
    double total = 0.0;
    for (int c = 0; c < kEnsembleSize; ++c) total += area[c * n + q];
    for (int c = 0; c < kEnsembleSize; ++c)
      out.weights[c * n + q] = area[(kEnsembleSize - 1 - c) * n + q] / total;
  }
  out.features = ad::concat_cols({ad::gather_cells(feature_grid, index), ad::constant(std::move(extra))});
  return out;
}

LocalFeatures liif_query(const FeatureGrid& grid, const CoordinateBatch& batch) {
  return liif_query(ad::constant(grid.values), batch);
}

Tensor positional_encode(const CoordinateBatch& batch, int freqs) {
  require(freqs >= 1, ErrorKind::kConfig, "positional encoding needs L >= 1");
  const int n = static_cast<int>(batch.size());
  Tensor out({n, 4 * freqs});
  for (int q = 0; q < n; ++q) {
    double* row = out.data() + static_cast<std::size_t>(q) * 4 * freqs;
    for (int j = 0; j < freqs; ++j) {
      const double f = std::ldexp(std::numbers::pi, j);
      row[4 * j + 0] = std::sin(f * batch.y(q));
      row[4 * j + 1] = std::cos(f * batch.y(q));
      row[4 * j + 2] = std::sin(f * batch.x(q));
      row[4 * j + 3] = std::cos(f * batch.x(q));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Var ParameterSet::create(const std::string& name, Tensor init) {
  for (const auto& p : params_)
    require(p.name != name, ErrorKind::kConfig, "duplicate parameter name " + name);
  Var v = ad::leaf(std::move(init), true);
  params_.push_back({name, v});
  return v;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

Var ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.var;
  fail(ErrorKind::kConfig, "no parameter named " + std::string(name));
}

namespace {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
Tensor uniform_init(autodiff::Shape shape, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

Conv2d make_conv(ParameterSet& ps, const std::string& name, int cin, int cout, int k, int stride,
                 int pad, std::mt19937_64& rng) {
  const int fan_in = cin * k * k;
  Conv2d c;
  c.weight = ps.create(name + ".weight", uniform_init({cout, cin, k, k}, fan_in, rng));
  c.bias = ps.create(name + ".bias", uniform_init({cout}, fan_in, rng));
  c.stride = stride;
  c.pad = pad;
  return c;
}

Linear make_linear(ParameterSet& ps, const std::string& name, int in, int out, bool bias,
                   std::mt19937_64& rng, int fan_in = 0) {
  if (fan_in == 0) fan_in = in;
  Linear l;
  l.weight = ps.create(name + ".weight", uniform_init({out, in}, fan_in, rng));
  if (bias) l.bias = ps.create(name + ".bias", uniform_init({out}, fan_in, rng));
  return l;
}

ResBlock make_block(ParameterSet& ps, const std::string& name, int ch, double scale,
                    std::mt19937_64& rng) {
  return {make_conv(ps, name + ".conv1", ch, ch, 3, 1, 1, rng),
          make_conv(ps, name + ".conv2", ch, ch, 3, 1, 1, rng), scale};
}

}  // namespace

Var Conv2d::operator()(const Var& x) const { return ad::conv2d(x, weight, bias, stride, pad); }

Var Linear::operator()(const Var& x) const { return ad::linear(x, weight, bias); }

Var ResBlock::operator()(const Var& x) const {
  Var r = second(ad::relu(first(x)));
  if (res_scale != 1.0) r = ad::scale(r, res_scale);
  return ad::add(x, r);
}

ReducingEncoder::ReducingEncoder(const ModelConfig& cfg, ParameterSet& ps,
                                 const std::string& prefix, std::mt19937_64& rng)
    : reduction_(cfg.reduction) {
  int in = 1;
  for (int d = cfg.reduction, s = 0; d > 1; d /= 2, ++s) {
    const std::string name = prefix + ".stage" + std::to_string(s);
    Stage stage;
    stage.down = make_conv(ps, name + ".down", in, cfg.encoder_width, 3, 2, 1, rng);
    for (int b = 0; b < cfg.encoder_res_blocks; ++b)
      stage.blocks.push_back(
          make_block(ps, name + ".block" + std::to_string(b), cfg.encoder_width, 1.0, rng));
    stages_.push_back(std::move(stage));
    in = cfg.encoder_width;
  }
  head_ = make_conv(ps, prefix + ".head", in, cfg.latent_channels, 1, 1, 0, rng);
}

Var ReducingEncoder::forward(const Var& x) const {
  require(x.defined() && x.value().rank() == 3 && x.shape()[0] == 1, ErrorKind::kShape,
          "encoder expects a [1,H,W] field");
  const int h = x.shape()[1], w = x.shape()[2];
  require(h % reduction_ == 0 && w % reduction_ == 0, ErrorKind::kShape,
          "field " + std::to_string(h) + "x" + std::to_string(w) +
              " is not divisible by the reduction factor " + std::to_string(reduction_));
  Var y = x;
  for (const auto& stage : stages_) {
    y = stage.down(y);
    for (const auto& block : stage.blocks) y = block(y);
    y = ad::relu(y);
  }
  return head_(y);
}

FeatureEncoder::FeatureEncoder(const ModelConfig& cfg, ParameterSet& ps,
                               const std::string& prefix, std::mt19937_64& rng)
    : unfold_(cfg.feature_unfold) {
  stem_ = make_conv(ps, prefix + ".stem", cfg.latent_channels, cfg.feature_channels, 3, 1, 1, rng);
  for (int b = 0; b < cfg.feature_blocks; ++b)
    blocks_.push_back(make_block(ps, prefix + ".block" + std::to_string(b), cfg.feature_channels,
                                 cfg.feature_res_scale, rng));
}

Var FeatureEncoder::stem(const Var& latent) const { return stem_(latent); }

Var FeatureEncoder::forward(const Var& latent) const {
  Var y = stem_(latent);
  for (const auto& block : blocks_) y = block(y);
  return unfold_ ? ad::unfold3x3(y) : y;
}

GlobalEncoder::GlobalEncoder(const ModelConfig& cfg, ParameterSet& ps, const std::string& prefix,
                             std::mt19937_64& rng) {
  const std::array<int, 4> widths = {cfg.global_width, 2 * cfg.global_width,
                                     4 * cfg.global_width, cfg.global_dim};
  int in = cfg.latent_channels;
  for (std::size_t s = 0; s < widths.size(); ++s) {
    stages_.push_back(
        make_conv(ps, prefix + ".stage" + std::to_string(s), in, widths[s], 3, 2, 1, rng));
    in = widths[s];
  }
}

Var GlobalEncoder::forward(const Var& latent) const {
  Var y = latent;
  for (const auto& stage : stages_) y = ad::relu(stage(y));
  return ad::global_avg_pool(y);
}

Decoder::Decoder(const ModelConfig& cfg, ParameterSet& ps, const std::string& prefix,
                 std::mt19937_64& rng)
    : variant_(cfg.variant),
      local_width_(cfg.local_width()),
      global_width_(uses_global(cfg.variant) ? cfg.global_dim : 0),
      positional_width_(uses_positional(cfg.variant) ? 4 * cfg.positional_freqs : 0) {
  const int fan_in = cfg.decoder_input_width();
  const int first = cfg.decoder_hidden.front();
  local_in_ = make_linear(ps, prefix + ".local_in", local_width_, first, true, rng, fan_in);
  if (global_width_ > 0)
    global_in_ = make_linear(ps, prefix + ".global_in", global_width_, first, false, rng, fan_in);
  if (positional_width_ > 0)
    positional_in_ =
        make_linear(ps, prefix + ".positional_in", positional_width_, first, false, rng, fan_in);
  int in = first;
  for (std::size_t i = 1; i < cfg.decoder_hidden.size(); ++i) {
    layers_.push_back(make_linear(ps, prefix + ".hidden" + std::to_string(i), in,
                                  cfg.decoder_hidden[i], true, rng));
    in = cfg.decoder_hidden[i];
  }
  layers_.push_back(make_linear(ps, prefix + ".out", in, 1, true, rng));
}

int Decoder::input_width() const { return local_width_ + global_width_ + positional_width_; }

Var Decoder::forward(const Var& local, const Var& global, const Var& positional) const {
  require(local.defined() && local.value().rank() == 2 && local.shape()[1] == local_width_,
          ErrorKind::kShape,
          "decoder local input must be [M," + std::to_string(local_width_) + "]");
  const std::string name(to_string(variant_));
  if (global_width_ > 0) {
    require(global.defined() && global.value().size() == static_cast<std::size_t>(global_width_),
            ErrorKind::kShape, name + " decoder needs a global vector of width " +
                                   std::to_string(global_width_));
  } else {
    require(!global.defined(), ErrorKind::kShape, name + " decoder takes no global input");
  }
  if (positional_width_ > 0) {
    require(positional.defined() && positional.value().rank() == 2 &&
                positional.shape()[0] == local.shape()[0] &&
                positional.shape()[1] == positional_width_,
            ErrorKind::kShape, name + " decoder needs positional codes of width " +
                                   std::to_string(positional_width_));
  } else {
    require(!positional.defined(), ErrorKind::kShape, name + " decoder takes no positional input");
  }

  Var h = local_in_(local);
  if (global_width_ > 0)
    h = ad::add_row(h, global_in_(ad::reshape(global, {1, global_width_})));
  if (positional_width_ > 0) h = ad::add(h, positional_in_(positional));
  h = ad::relu(h);
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = ad::relu(layers_[i](h));
  return layers_.back()(h);
}

// ---------------------------------------------------------------------------

void check_modality(int id) {
  require(id == 1 || id == 2, ErrorKind::kDomain,
          "unknown modality id " + std::to_string(id) + " (expected 1 or 2)");
}

Tensor field_tensor(const Grid& g) {
  return Tensor({1, static_cast<int>(g.rows()), static_cast<int>(g.cols())}, g.data());
}

ModelBundle::ModelBundle(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  for (int s = 1; s <= 2; ++s)
    for (int t = 1; t <= 2; ++t)
      encoders_[s - 1][t - 1] =
          ReducingEncoder(cfg_, params_, "E" + std::to_string(s) + std::to_string(t), rng);
  for (int m = 1; m <= 2; ++m)
    feature_encoders_[m - 1] = FeatureEncoder(cfg_, params_, "FE" + std::to_string(m), rng);
  if (uses_global(cfg_.variant))
    for (int m = 1; m <= 2; ++m)
      global_encoders_[m - 1] = GlobalEncoder(cfg_, params_, "G" + std::to_string(m), rng);
  for (int m = 1; m <= 2; ++m)
    decoders_[m - 1] = Decoder(cfg_, params_, "D" + std::to_string(m), rng);
}

Route ModelBundle::route(int source, int target) {
  check_modality(source);
  check_modality(target);
  return {source, target, target};
}

const ReducingEncoder& ModelBundle::encoder(int source, int target) const {
  const Route r = route(source, target);
  return encoders_[r.encoder_source - 1][r.encoder_target - 1];
}

const FeatureEncoder& ModelBundle::feature_encoder(int modality) const {
  check_modality(modality);
  return feature_encoders_[modality - 1];
}

const GlobalEncoder& ModelBundle::global_encoder(int modality) const {
  check_modality(modality);
  require(uses_global(cfg_.variant), ErrorKind::kConfig,
          std::string(to_string(cfg_.variant)) + " has no global encoder");
  return global_encoders_[modality - 1];
}

const Decoder& ModelBundle::decoder(int modality) const {
  check_modality(modality);
  return decoders_[modality - 1];
}

Var ModelBundle::encode(int source, int target, const Var& field) const {
  return encoder(source, target).forward(field);
}

ModelBundle::HeadState ModelBundle::head(int target, const Var& latent) const {
  HeadState st;
  st.features = feature_encoder(target).forward(latent);
  if (uses_global(cfg_.variant)) st.global = global_encoder(target).forward(latent);
  return st;
}

namespace {

// Repeats each row block `times` times: [N,D] -> [times*N, D].
Tensor tile_rows(const Tensor& t, int times) {
  const int n = t.dim(0), d = t.dim(1);
  Tensor out({times * n, d});
  for (int k = 0; k < times; ++k)
    std::copy(t.data(), t.data() + t.size(), out.data() + static_cast<std::size_t>(k) * n * d);
  return out;
}

}  // namespace

Var ModelBundle::decode_points(int target, const HeadState& state,
                               const CoordinateBatch& batch) const {
  const LocalFeatures local = liif_query(state.features, batch);
  Var positional;
  if (uses_positional(cfg_.variant))
    positional = ad::constant(tile_rows(positional_encode(batch, cfg_.positional_freqs), kEnsembleSize));
  const Var pred = decoder(target).forward(local.features, state.global, positional);
  return ad::ensemble_combine(pred, local.weights, kEnsembleSize);
}

Var ModelBundle::predict_points(int source, int target, const Var& field,
                                const CoordinateBatch& batch) const {
  const Route r = route(source, target);
  const Var latent = encode(r.encoder_source, r.encoder_target, field);
  return decode_points(r.head, head(r.head, latent), batch);
}

// ---------------------------------------------------------------------------

LatentGrid reduce(const ModelBundle& model, int source, int target, const Grid& field) {
  ad::NoGradGuard guard;
  LatentGrid out;
  out.values = model.encode(source, target, ad::constant(field_tensor(field))).value();
  out.source = source;
  out.target = target;
  out.reduction = model.config().reduction;
  return out;
}

FeatureGrid extract_feature_grid(const ModelBundle& model, int modality, const LatentGrid& latent) {
  ad::NoGradGuard guard;
  return {model.feature_encoder(modality).forward(ad::constant(latent.values)).value()};
}

Tensor global_encode(const ModelBundle& model, int modality, const LatentGrid& latent) {
  ad::NoGradGuard guard;
  return model.global_encoder(modality).forward(ad::constant(latent.values)).value();
}

std::vector<double> decode(const ModelBundle& model, int modality, const LocalFeatures& local,
                           const Tensor* global, const Tensor* positional) {
  ad::NoGradGuard guard;
  Var g = global ? ad::constant(*global) : Var();
  Var p;
  if (positional) {
    require(positional->rank() == 2 && static_cast<std::size_t>(positional->dim(0)) == local.count,
            ErrorKind::kShape, "positional codes must have one row per query");
    p = ad::constant(tile_rows(*positional, kEnsembleSize));
  }
  const Var pred = model.decoder(modality).forward(ad::constant(local.features.value()), g, p);
  const Var out = ad::ensemble_combine(pred, local.weights, kEnsembleSize);
  return {out.value().values().begin(), out.value().values().end()};
}

std::vector<double> predict(const ModelBundle& model, const Grid& field, int source, int target,
                            const CoordinateBatch& batch) {
  ad::NoGradGuard guard;
  const Var out = model.predict_points(source, target, ad::constant(field_tensor(field)), batch);
  return {out.value().values().begin(), out.value().values().end()};
}

Grid decode_grid(const ModelBundle& model, const LatentGrid& latent, std::size_t rows,
                 std::size_t cols) {
  ad::NoGradGuard guard;
  require(rows >= 1 && cols >= 1, ErrorKind::kDomain, "decode grid must be non-empty");
  const auto state = model.head(latent.target, ad::constant(latent.values));
  const CoordinateBatch all = CoordinateBatch::grid_centers(rows, cols);
  Grid out(rows, cols);
  constexpr std::size_t kChunk = 4096;
  for (std::size_t start = 0; start < all.size(); start += kChunk) {
    const std::size_t end = std::min(all.size(), start + kChunk);
    CoordinateBatch chunk{{all.coords.begin() + 2 * start, all.coords.begin() + 2 * end},
                          all.cell_y, all.cell_x};
    const Var v = model.decode_points(latent.target, state, chunk);
    std::copy(v.value().data(), v.value().data() + (end - start), out.values().data() + start);
  }
  return out;
}

Grid predict_grid(const ModelBundle& model, const Grid& field, int source, int target,
                  double scale) {
  require(scale >= 1.0 && std::isfinite(scale), ErrorKind::kDomain,
          "super-resolution scale must be >= 1");
  const auto rows = static_cast<std::size_t>(std::round(scale * static_cast<double>(field.rows())));
  const auto cols = static_cast<std::size_t>(std::round(scale * static_cast<double>(field.cols())));
  return decode_grid(model, reduce(model, source, target, field), rows, cols);
}

}  // namespace windsr::neuralcore
