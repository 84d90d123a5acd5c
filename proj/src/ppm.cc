#include <algorithm>
#include <array>
#include <cstring>
#include <type_traits>
#include <unordered_map>
#include <zlib.h>

#include "range_coder.h"
#include "windsr/baselines.h"
#include "windsr/error.h"

namespace windsr::baselines {

namespace {

using detail::RangeDecoder;
using detail::RangeEncoder;

constexpr int kMaxOrder = 4;
constexpr int kSymbolBits = 12;
constexpr std::uint32_t kRescaleAt = 1u << 15;

struct Entry {
  std::uint16_t symbol;
  std::uint16_t count;
};

struct Context {
  std::vector<Entry> entries;
  std::uint32_t sum = 0;

  void add(std::uint16_t symbol) {
    auto it = std::find_if(entries.begin(), entries.end(),
                           [symbol](const Entry& e) { return e.symbol == symbol; });
    if (it == entries.end()) {
      entries.push_back({symbol, 1});
    } else {
      ++it->count;
    }
    if (++sum > kRescaleAt) {
      sum = 0;
      for (auto& e : entries) {
        e.count = static_cast<std::uint16_t>((e.count + 1) / 2);
        sum += e.count;
      }
    }
  }
};

// PPMC: the escape frequency equals the number of distinct (non-excluded)
// symbols seen in the context. Symbols already offered by a longer context are
// excluded from every shorter one; the final order -1 table is uniform over the
// remaining alphabet.
class PpmModel {
 public:
  PpmModel(std::uint32_t alphabet, int order)
      : alphabet_(alphabet), order_(order), stamp_(alphabet, 0) {}

  void encode(std::uint16_t symbol, RangeEncoder& enc) {
    begin_symbol();
    for (int k = usable_order(); k >= 0; --k) {
      auto it = contexts_.find(key(k));
      if (it == contexts_.end()) continue;
      const Context& ctx = it->second;
      std::uint32_t sum = 0, distinct = 0, cum = 0, freq = 0;
      for (const auto& e : ctx.entries) {
        if (excluded(e.symbol)) continue;
        if (e.symbol == symbol) {
          cum = sum;
          freq = e.count;
        }
        sum += e.count;
        ++distinct;
      }
      if (distinct == 0) continue;
      if (freq != 0) {
        enc.encode(cum, freq, sum + distinct);
        update(symbol);
        return;
      }
      enc.encode(sum, distinct, sum + distinct);
      exclude_all(ctx);
    }
    std::uint32_t rank = 0;
    for (std::uint32_t s = 0; s < symbol; ++s)
      if (!excluded(static_cast<std::uint16_t>(s))) ++rank;
    enc.encode(rank, 1, alphabet_ - excluded_count_);
    update(symbol);
  }

  std::uint16_t decode(RangeDecoder& dec) {
    begin_symbol();
    for (int k = usable_order(); k >= 0; --k) {
      auto it = contexts_.find(key(k));
      if (it == contexts_.end()) continue;
      const Context& ctx = it->second;
      std::uint32_t sum = 0, distinct = 0;
      for (const auto& e : ctx.entries) {
        if (excluded(e.symbol)) continue;
        sum += e.count;
        ++distinct;
      }
      if (distinct == 0) continue;
      const std::uint32_t f = dec.get_freq(sum + distinct);
      if (f < sum) {
        std::uint32_t cum = 0;
        for (const auto& e : ctx.entries) {
          if (excluded(e.symbol)) continue;
          if (f < cum + e.count) {
            dec.decode(cum, e.count);
            const std::uint16_t symbol = e.symbol;
            update(symbol);
            return symbol;
          }
          cum += e.count;
        }
      }
      dec.decode(sum, distinct);
      exclude_all(ctx);
    }
    const std::uint32_t f = dec.get_freq(alphabet_ - excluded_count_);
    std::uint32_t rank = 0;
    for (std::uint32_t s = 0; s < alphabet_; ++s) {
      const auto sym = static_cast<std::uint16_t>(s);
      if (excluded(sym)) continue;
      if (rank == f) {
        dec.decode(rank, 1);
        update(sym);
        return sym;
      }
      ++rank;
    }
    fail(ErrorKind::kDecode, "ppm payload decodes outside the alphabet");
  }

 private:
  void begin_symbol() {
    ++generation_;
    excluded_count_ = 0;
  }

  int usable_order() const { return std::min(order_, history_len_); }

  bool excluded(std::uint16_t s) const { return stamp_[s] == generation_; }

  void exclude_all(const Context& ctx) {
    for (const auto& e : ctx.entries) {
      if (!excluded(e.symbol)) {
        stamp_[e.symbol] = generation_;
        ++excluded_count_;
      }
    }
  }

  std::uint64_t key(int k) const {
    std::uint64_t packed = static_cast<std::uint64_t>(k) << 60;
    for (int i = 0; i < k; ++i)
      packed |= static_cast<std::uint64_t>(history_[i]) << (kSymbolBits * i);
    return packed;
  }

  void update(std::uint16_t symbol) {
    for (int k = 0; k <= usable_order(); ++k) contexts_[key(k)].add(symbol);
    for (int i = kMaxOrder - 1; i > 0; --i) history_[i] = history_[i - 1];
    history_[0] = symbol;
    history_len_ = std::min(history_len_ + 1, kMaxOrder);
  }

  std::uint32_t alphabet_;
  int order_;
  std::unordered_map<std::uint64_t, Context> contexts_;
  std::array<std::uint16_t, kMaxOrder> history_{};
  int history_len_ = 0;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t generation_ = 0;
  std::uint32_t excluded_count_ = 0;
};

void check_params(std::uint32_t alphabet, int order) {
  require(alphabet >= 2 && alphabet <= kMaxAlphabet, ErrorKind::kDomain,
          "ppm alphabet must be in [2, " + std::to_string(kMaxAlphabet) + "]");
  require(order >= 0 && order <= kMaxOrder, ErrorKind::kDomain,
          "ppm order must be in [0, " + std::to_string(kMaxOrder) + "]");
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
void put_le(std::uint8_t* dst, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &value, 8);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* src) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{src[i]} << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
  } else {
    return static_cast<T>(bits);
  }
}

constexpr std::array<std::uint8_t, 4> kMagic = {'W', 'S', 'P', 'M'};

}  // namespace

// Header layout (little-endian):
//   0 magic "WSPM" | 4 u16 version | 6 u16 reserved | 8 u32 rows | 12 u32 cols
//   16 f64 min | 24 f64 max | 32 f64 mu | 40 u32 levels | 44 u32 ppm order
//   48 u64 payload bytes | 56 u32 crc32(payload) | 60 u32 reserved
std::vector<std::uint8_t> CompressedBlob::serialize() const {
  std::vector<std::uint8_t> out(kBlobHeaderSize, 0);
  std::copy(kMagic.begin(), kMagic.end(), out.begin());
  put_le<std::uint16_t>(&out[4], header.version);
  put_le<std::uint32_t>(&out[8], header.rows);
  put_le<std::uint32_t>(&out[12], header.cols);
  put_le<double>(&out[16], header.min);
  put_le<double>(&out[24], header.max);
  put_le<double>(&out[32], header.mu);
  put_le<std::uint32_t>(&out[40], header.levels);
  put_le<std::uint32_t>(&out[44], header.ppm_order);
  put_le<std::uint64_t>(&out[48], payload.size());
  put_le<std::uint32_t>(&out[56], crc_of(payload));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

CompressedBlob CompressedBlob::parse(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= kBlobHeaderSize, ErrorKind::kDecode, "blob shorter than its header");
  require(std::equal(kMagic.begin(), kMagic.end(), bytes.begin()), ErrorKind::kDecode,
          "blob magic mismatch");
  CompressedBlob blob;
  auto& h = blob.header;
  h.version = get_le<std::uint16_t>(&bytes[4]);
  require(h.version == kBlobVersion, ErrorKind::kDecode,
          "unsupported blob version " + std::to_string(h.version));
  h.rows = get_le<std::uint32_t>(&bytes[8]);
  h.cols = get_le<std::uint32_t>(&bytes[12]);
  h.min = get_le<double>(&bytes[16]);
  h.max = get_le<double>(&bytes[24]);
  h.mu = get_le<double>(&bytes[32]);
  h.levels = get_le<std::uint32_t>(&bytes[40]);
  h.ppm_order = get_le<std::uint32_t>(&bytes[44]);
  h.payload_size = get_le<std::uint64_t>(&bytes[48]);
  h.crc32 = get_le<std::uint32_t>(&bytes[56]);
  require(bytes.size() - kBlobHeaderSize == h.payload_size, ErrorKind::kDecode,
          "blob payload length mismatch");
  blob.payload.assign(bytes.begin() + kBlobHeaderSize, bytes.end());
  require(crc_of(blob.payload) == h.crc32, ErrorKind::kDecode, "blob checksum mismatch");
  return blob;
}

CompressedBlob ppm_compress(std::span<const std::uint16_t> symbols, std::uint32_t alphabet,
                            int order) {
  check_params(alphabet, order);
  CompressedBlob blob;
  blob.header.rows = symbols.empty() ? 0 : 1;
  blob.header.cols = static_cast<std::uint32_t>(symbols.size());
  blob.header.levels = alphabet;
  blob.header.ppm_order = static_cast<std::uint32_t>(order);
  if (!symbols.empty()) {
    PpmModel model(alphabet, order);
    RangeEncoder enc(blob.payload);
    for (auto s : symbols) {
      require(s < alphabet, ErrorKind::kDomain,
              "symbol " + std::to_string(s) + " outside alphabet " + std::to_string(alphabet));
      model.encode(s, enc);
    }
    enc.finish();
  }
  blob.header.payload_size = blob.payload.size();
  blob.header.crc32 = crc_of(blob.payload);
  return blob;
}

std::vector<std::uint16_t> ppm_decompress(const CompressedBlob& blob) {
  const auto& h = blob.header;
  require(crc_of(blob.payload) == h.crc32, ErrorKind::kDecode, "blob checksum mismatch");
  const auto count = h.symbol_count();
  std::vector<std::uint16_t> out;
  if (count == 0) return out;
  check_params(h.levels, static_cast<int>(h.ppm_order));
  out.reserve(count);
  PpmModel model(h.levels, static_cast<int>(h.ppm_order));
  RangeDecoder dec(blob.payload);
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(model.decode(dec));
  require(dec.overrun() == 0, ErrorKind::kDecode, "ppm payload truncated");
  return out;
}

}  // namespace windsr::baselines
