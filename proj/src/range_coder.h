#pragma once

// Carry-propagating 32-bit range coder for multi-symbol frequency tables.
// Totals passed to encode/decode must not exceed kMaxTotal.

#include <cstdint>
#include <span>
#include <vector>

namespace windsr::baselines::detail {

inline constexpr std::uint32_t kTop = 1u << 24;
inline constexpr std::uint32_t kMaxTotal = 1u << 16;

class RangeEncoder {
 public:
  explicit RangeEncoder(std::vector<std::uint8_t>& out) : out_(out) {}

  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    range_ /= total;
    low_ += static_cast<std::uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void finish() {
    for (int i = 0; i < 5; ++i) shift_low();
  }

 private:
  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t temp = cache_;
      do {
        out_.push_back(static_cast<std::uint8_t>(temp + carry));
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  std::vector<std::uint8_t>& out_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in) {
    for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
  }

  std::uint32_t get_freq(std::uint32_t total) {
    range_ /= total;
    const std::uint32_t v = code_ / range_;
    return v < total ? v : total - 1;
  }

  void decode(std::uint32_t cum, std::uint32_t freq) {
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next();
      range_ <<= 8;
    }
  }

  // Bytes requested past the end of the payload.
  std::size_t overrun() const { return overrun_; }

 private:
  std::uint32_t next() {
    if (pos_ < in_.size()) return in_[pos_++];
    ++overrun_;
    return 0;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::size_t overrun_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

}  // namespace windsr::baselines::detail
