#include "plac/entropy.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "plac/error.hpp"

namespace plac {

namespace {

constexpr double kLogHalf = -0.69314718055994530942;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Standardized interval [u, v] = ([a, c] - mu) / b, either end may be infinite.
LogPmf log_interval_mass(double u, double v, double b) {
  const bool lo_inf = std::isinf(u);
  const bool hi_inf = std::isinf(v);
  if (lo_inf && hi_inf) return {0.0, 0.0, 0.0};
  if (v <= 0.0) {
    // Entirely left of mu: P = (e^v - e^u) / 2.
    if (lo_inf) return {kLogHalf + v, -1.0 / b, -v / b};
    const double r = std::exp(u - v);
    const double value = kLogHalf + v + std::log1p(-r);
    const double d_b = (-v + u * r) / (b * (1.0 - r));
    return {value, -1.0 / b, d_b};
  }
  if (u >= 0.0) {
    // Entirely right of mu: P = (e^-u - e^-v) / 2.
    if (hi_inf) return {kLogHalf - u, 1.0 / b, u / b};
    const double r = std::exp(u - v);
    const double value = kLogHalf - u + std::log1p(-r);
    const double d_b = (u - v * r) / (b * (1.0 - r));
    return {value, 1.0 / b, d_b};
  }
  // Straddles mu: P = 1 - e^u / 2 - e^-v / 2.
  const double eu = lo_inf ? 0.0 : std::exp(u);
  const double ev = hi_inf ? 0.0 : std::exp(-v);
  const double p = (lo_inf ? 0.5 : -0.5 * std::expm1(u)) + (hi_inf ? 0.5 : -0.5 * std::expm1(-v));
  const double ueu = lo_inf ? 0.0 : u * eu;
  const double vev = hi_inf ? 0.0 : v * ev;
  const double dp_dmu = (eu - ev) / (2.0 * b);
  const double dp_db = (ueu - vev) / (2.0 * b);
  return {std::log(p), dp_dmu / p, dp_db / p};
}

}  // namespace

double laplace_cdf(double t, double mu, double b) {
  const double z = (t - mu) / b;
  return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
}

double laplace_pmf(int y, double mu, double b) {
  const double u = (y - 0.5 - mu) / b;
  const double v = (y + 0.5 - mu) / b;
  return std::exp(log_interval_mass(u, v, b).value);
}

double laplace_pmf_folded(int y, double mu, double b, const SymbolAlphabet& alphabet) {
  return std::exp(laplace_log_pmf_folded(y, mu, b, alphabet).value);
}

LogPmf laplace_log_pmf_folded(int y, double mu, double b, const SymbolAlphabet& alphabet) {
  const double u = y <= alphabet.lo ? -kInf : (y - 0.5 - mu) / b;
  const double v = y >= alphabet.hi ? kInf : (y + 0.5 - mu) / b;
  return log_interval_mass(u, v, b);
}

double QuantizedCdf::bits(int symbol) const {
  return static_cast<double>(kCdfBits) - std::log2(static_cast<double>(freq(symbol)));
}

QuantizedCdf quantize_masses(std::span<const float> masses, const SymbolAlphabet& alphabet) {
  const int size = alphabet.size();
  if (size < 1 || size > 4096) throw Error("alphabet size must be in [1, 4096]");
  if (static_cast<int>(masses.size()) != size) throw Error("mass vector does not match alphabet");

  float total = 0.0f;
  for (float m : masses) total += m;
  std::vector<std::int32_t> counts(size, 0);
  std::int64_t sum = 0;
  int occupied = 0;
  if (total > 0.0f && std::isfinite(total)) {
    constexpr float kTop = static_cast<float>(kCdfTotal);
    // Truncation is the floor once clamped to [0, 2^16].
    for (int i = 0; i < size; ++i) {
      counts[i] = static_cast<std::int32_t>(std::min(std::max(masses[i] / total * kTop, 0.0f), kTop));
    }
    for (int i = 0; i < size; ++i) {
      sum += counts[i];
      occupied += counts[i] > 0 ? 1 : 0;
    }
  }

  std::int64_t remainder = static_cast<std::int64_t>(kCdfTotal) - sum;
  if (remainder != 0) {
    if (remainder > 0) {
      // Handing out one count at a time in heaviest-first order, cycling,
      // gives every symbol remainder / size counts and one more to the
      // remainder % size heaviest; only that set matters, not its order.
      const auto rounds = static_cast<std::int32_t>(remainder / size);
      const std::int64_t extra = remainder % size;
      if (extra > 0) {
        // Select by value first: everything strictly heavier than the
        // extra-th largest mass gets a count, then ties in symbol order.
        // Bins that already hold a count are strictly heavier than empty
        // ones, so when there are enough of them the search stays there.
        std::vector<float> pool;
        if (occupied >= extra) {
          pool.reserve(occupied);
          for (int i = 0; i < size; ++i) {
            if (counts[i] > 0) pool.push_back(masses[i]);
          }
        } else {
          pool.assign(masses.begin(), masses.end());
        }
        std::nth_element(pool.begin(), pool.begin() + (extra - 1), pool.end(), std::greater<float>());
        const float cut = pool[static_cast<std::size_t>(extra - 1)];
        std::int64_t left = extra;
        for (int i = 0; i < size; ++i) {
          if (masses[i] > cut) {
            ++counts[i];
            --left;
          }
        }
        for (int i = 0; i < size && left > 0; ++i) {
          if (masses[i] == cut) {
            ++counts[i];
            --left;
          }
        }
      }
      if (rounds > 0) {
        for (std::int32_t& c : counts) c += rounds;
      }
    } else {
      // Float rounding pushed the floors past the total; take back from the
      // heaviest symbols first.
      std::vector<int> order(size);
      std::iota(order.begin(), order.end(), 0);
      auto heavier = [&](int a, int b) { return masses[a] > masses[b] || (masses[a] == masses[b] && a < b); };
      std::sort(order.begin(), order.end(), heavier);
      for (std::int64_t j = 0; remainder < 0; ++j) {
        std::int32_t& c = counts[order[j % size]];
        if (c > 0) {
          --c;
          ++remainder;
        }
      }
    }
  }

  std::int32_t zeros = 0;
  int top = 0;
  for (int i = 0; i < size; ++i) {
    if (counts[i] == 0) {
      counts[i] = 1;
      ++zeros;
    }
    if (counts[i] > counts[top]) top = i;
  }
  if (zeros > 0) {
    std::int32_t second = 0;
    for (int i = 0; i < size; ++i) {
      if (i != top) second = std::max(second, counts[i]);
    }
    if (counts[top] - zeros >= second) {
      // Every count is taken from the single largest bin.
      counts[top] -= zeros;
    } else {
      // Taking one count at a time from the largest bin (ties to the smaller
      // symbol), never below 1, ends with every bin capped at some level T
      // and the first few bins sitting at T lowered once more. Find T
      // directly: the smallest level whose excess above it does not exceed
      // `zeros`. The top bin alone exceeds any level below top - zeros by
      // more than `zeros`, so only bins above that bound take part.
      std::int32_t lo = std::max<std::int32_t>(1, counts[top] - zeros);
      std::vector<std::int32_t> tall;
      for (std::int32_t c : counts) {
        if (c > lo) tall.push_back(c);
      }
      auto excess = [&](std::int32_t level) {
        std::int64_t total_excess = 0;
        for (std::int32_t c : tall) total_excess += std::max<std::int32_t>(0, c - level);
        return total_excess;
      };
      std::int32_t hi = counts[top];
      while (lo < hi) {
        const std::int32_t mid = lo + (hi - lo) / 2;
        if (excess(mid) <= zeros) {
          hi = mid;
        } else {
          lo = mid + 1;
        }
      }
      const std::int32_t level = lo;
      std::int64_t extra = zeros - excess(level);
      for (std::int32_t& c : counts) {
        if (c >= level) {
          c = level;
          if (extra > 0) {
            --c;
            --extra;
          }
        }
      }
    }
  }

  QuantizedCdf cdf;
  cdf.alphabet = alphabet;
  cdf.cumulative.resize(size + 1);
  cdf.cumulative[0] = 0;
  for (int i = 0; i < size; ++i) cdf.cumulative[i + 1] = cdf.cumulative[i] + static_cast<std::uint32_t>(counts[i]);
  return cdf;
}

QuantizedCdf quantize_cdf(float mu, float b, const SymbolAlphabet& alphabet) {
  const int size = alphabet.size();
  if (size < 1 || size > 4096) throw Error("alphabet size must be in [1, 4096]");
  if (!std::isfinite(mu)) mu = 0.0f;
  if (!std::isfinite(b) || !(b > 0.0f)) b = static_cast<float>(1e-6);
  const float inv_b = 1.0f / b;

  // e[k] = exp(-|t_k - mu| / b) at internal boundaries t_k = lo - 1/2 + k;
  // the two outer boundaries are infinite and keep e = 0.
  Eigen::ArrayXf e = Eigen::ArrayXf::Zero(size + 1);
  int last_left = 0;  // boundaries 1..last_left lie left of mu
  for (int k = 1; k < size; ++k) {
    const float d = static_cast<float>(alphabet.lo) - 0.5f + static_cast<float>(k) - mu;
    last_left += d < 0.0f ? 1 : 0;
    e[k] = -std::fabs(d) * inv_b;
  }
  if (size > 1) e.segment(1, size - 1) = e.segment(1, size - 1).exp();  // one vectorized pass
  // Bins left of the one holding mu see increasing e, bins right of it
  // decreasing e; bin last_left straddles mu.
  std::vector<float> masses(size);
  for (int i = 0; i < last_left; ++i) masses[i] = std::max(0.5f * (e[i + 1] - e[i]), 0.0f);
  masses[last_left] = std::max(1.0f - 0.5f * e[last_left] - 0.5f * e[last_left + 1], 0.0f);
  for (int i = last_left + 1; i < size; ++i) masses[i] = std::max(0.5f * (e[i] - e[i + 1]), 0.0f);
  return quantize_masses(masses, alphabet);
}

namespace {

// Offset of cumulative count c inside a range of r; exact, and split(r, 2^16) = r.
std::uint64_t split(std::uint32_t r, std::uint32_t c) { return (static_cast<std::uint64_t>(r) * c) >> kCdfBits; }

}  // namespace

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t temp = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(temp + carry));
      temp = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(static_cast<std::uint32_t>(low_) >> 24);
  }
  ++cache_size_;
  low_ = static_cast<std::uint64_t>(static_cast<std::uint32_t>(low_) << 8);
}

void RangeEncoder::encode(int symbol, const QuantizedCdf& cdf) {
  if (!cdf.alphabet.contains(symbol)) throw Error("symbol " + std::to_string(symbol) + " outside alphabet");
  // Exact 64-bit split of the range instead of range >> 16 times the table
  // entries: the truncation of the shifted form costs about 2^-12 bits per
  // symbol on average, which adds up over long payloads.
  const std::uint64_t lo = split(range_, cdf.start(symbol));
  const std::uint64_t hi = split(range_, cdf.start(symbol) + cdf.freq(symbol));
  low_ += lo;
  range_ = static_cast<std::uint32_t>(hi - lo);
  while (range_ < (1u << 24)) {
    range_ <<= 8;
    shift_low();
  }
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size()) throw StreamError(StreamErrorKind::kTruncated, "range-coded payload truncated");
  return bytes_[pos_++];
}

int RangeDecoder::decode(const QuantizedCdf& cdf) {
  if (code_ >= range_) throw StreamError(StreamErrorKind::kCorrupt, "range decoder out of sync");
  // split(range, c) <= code  <=>  c <= ((code + 1) * 2^16 - 1) / range.
  const std::uint64_t limit = (((static_cast<std::uint64_t>(code_) + 1) << kCdfBits) - 1) / range_;
  const auto it = std::upper_bound(cdf.cumulative.begin(), cdf.cumulative.end(), limit);
  const int index = static_cast<int>(it - cdf.cumulative.begin()) - 1;
  const std::uint64_t lo = split(range_, cdf.cumulative[index]);
  const std::uint64_t hi = split(range_, cdf.cumulative[index + 1]);
  code_ -= static_cast<std::uint32_t>(lo);
  range_ = static_cast<std::uint32_t>(hi - lo);
  while (range_ < (1u << 24)) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
  return index + cdf.alphabet.lo;
}

std::vector<std::uint8_t> range_encode(std::span<const int> symbols, std::span<const QuantizedCdf> cdfs) {
  if (symbols.size() != cdfs.size()) throw Error("range_encode: one table per symbol required");
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) enc.encode(symbols[i], cdfs[i]);
  return enc.finish();
}

std::vector<int> range_decode(std::span<const std::uint8_t> bytes, std::span<const QuantizedCdf> cdfs,
                              std::size_t count) {
  if (cdfs.size() < count) throw Error("range_decode: one table per symbol required");
  RangeDecoder dec(bytes);
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = dec.decode(cdfs[i]);
  return out;
}

std::vector<std::uint8_t> uniform_encode(std::span<const std::uint32_t> values, int bit_width) {
  if (bit_width < 1 || bit_width > 32) throw Error("bit width must be in [1, 32]");
  std::vector<std::uint8_t> out((values.size() * bit_width + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::uint32_t v : values) {
    if (bit_width < 32 && (v >> bit_width) != 0) throw Error("value does not fit in bit width");
    for (int i = bit_width - 1; i >= 0; --i, ++bit) {
      if ((v >> i) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint32_t> uniform_decode(std::span<const std::uint8_t> bytes, int bit_width, std::size_t count) {
  if (bit_width < 1 || bit_width > 32) throw Error("bit width must be in [1, 32]");
  if (bytes.size() * 8 < count * bit_width) throw StreamError(StreamErrorKind::kTruncated, "uniform payload truncated");
  std::vector<std::uint32_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t n = 0; n < count; ++n) {
    std::uint32_t v = 0;
    for (int i = 0; i < bit_width; ++i, ++bit) v = (v << 1) | ((bytes[bit / 8] >> (7 - bit % 8)) & 1u);
    out[n] = v;
  }
  return out;
}

}  // namespace plac
