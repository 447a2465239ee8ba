#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace plac {

// Inclusive integer support of a coded channel.
struct SymbolAlphabet {
  int lo = 0;
  int hi = 255;

  int size() const { return hi - lo + 1; }
  bool contains(int s) const { return s >= lo && s <= hi; }
  bool operator==(const SymbolAlphabet&) const = default;
};

inline constexpr SymbolAlphabet kLumaAlphabet{0, 255};
inline constexpr SymbolAlphabet kChromaAlphabet{-255, 255};

inline constexpr int kCdfBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfBits;

// Laplace distribution in symbol units.
double laplace_cdf(double t, double mu, double b);
// Mass of [y - 1/2, y + 1/2].
double laplace_pmf(int y, double mu, double b);
// As laplace_pmf, with the mass below lo folded into lo and above hi into hi.
double laplace_pmf_folded(int y, double mu, double b, const SymbolAlphabet& alphabet);
// Natural log of laplace_pmf_folded and its partial derivatives with respect
// to mu and b, computed without cancellation for far tails.
struct LogPmf {
  double value;
  double d_mu;
  double d_b;
};
LogPmf laplace_log_pmf_folded(int y, double mu, double b, const SymbolAlphabet& alphabet);

// Frequency table with total 2^16 and every symbol at least one count.
struct QuantizedCdf {
  SymbolAlphabet alphabet;
  std::vector<std::uint32_t> cumulative;  // size + 1 entries

  std::uint32_t start(int symbol) const { return cumulative[symbol - alphabet.lo]; }
  std::uint32_t freq(int symbol) const {
    return cumulative[symbol - alphabet.lo + 1] - cumulative[symbol - alphabet.lo];
  }
  // -log2 of the quantized probability.
  double bits(int symbol) const;
};

// Per-symbol masses evaluated in float, tails folded, floor-scaled to 2^16;
// the remainder goes one count at a time to symbols in descending mass order
// (ties to the smaller symbol) and empty bins take a count from the largest.
QuantizedCdf quantize_cdf(float mu, float b, const SymbolAlphabet& alphabet);
// Weights-only helper used by quantize_cdf; exposed for tests.
QuantizedCdf quantize_masses(std::span<const float> masses, const SymbolAlphabet& alphabet);

// Carry-propagating range coder over quantized tables: 32-bit range,
// byte-wise renormalization, exact 64-bit interval split.
class RangeEncoder {
 public:
  void encode(int symbol, const QuantizedCdf& cdf);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

// Throws StreamError on reads past the end of the buffer or on an
// inconsistent code value.
class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);
  int decode(const QuantizedCdf& cdf);
  std::size_t bytes_consumed() const { return pos_; }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

std::vector<std::uint8_t> range_encode(std::span<const int> symbols, std::span<const QuantizedCdf> cdfs);
std::vector<int> range_decode(std::span<const std::uint8_t> bytes, std::span<const QuantizedCdf> cdfs,
                              std::size_t count);

// Fixed-width, MSB-first bit packing; the final byte is zero-padded.
std::vector<std::uint8_t> uniform_encode(std::span<const std::uint32_t> values, int bit_width);
std::vector<std::uint32_t> uniform_decode(std::span<const std::uint8_t> bytes, int bit_width, std::size_t count);

}  // namespace plac
