#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace plac {

struct GroupingConfig {
  std::uint32_t ratio = 2;        // growth ratio r
  std::uint32_t alpha = 128;      // first group is N / alpha points
  std::uint32_t s_star = 1u << 14;  // per-group size cap
  std::uint64_t seed = 42;

  void validate() const;
};

// Coding order shared by encoder and decoder: group i is the slice
// permutation[offsets[i], offsets[i] + sizes[i]).
struct GroupPlan {
  std::vector<std::uint32_t> permutation;
  std::vector<std::uint32_t> sizes;
  std::vector<std::uint32_t> offsets;

  std::size_t group_count() const { return sizes.size(); }
  bool operator==(const GroupPlan&) const = default;
};

// First group max(1, min(N / alpha, s*)); each later group the minimum of
// r times its predecessor, the remaining point count, and s*.
std::vector<std::uint32_t> group_sizes(std::size_t n, const GroupingConfig& cfg);

struct SplitMix64Step {
  std::uint64_t value;
  std::uint64_t state;
};

constexpr SplitMix64Step splitmix64_next(std::uint64_t state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return {z ^ (z >> 31), state};
}

// Stateful wrapper; also usable as a UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t operator()() {
    const auto step = splitmix64_next(state_);
    state_ = step.state;
    return step.value;
  }
  // Uniform real in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  // Index in [0, n) by modulo reduction.
  std::uint64_t below(std::uint64_t n) { return (*this)() % n; }

  std::uint64_t state() const { return state_; }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

 private:
  std::uint64_t state_;
};

// Fisher-Yates: for i = N-1 down to 1, j = next % (i + 1), swap(i, j).
// If `draws` is given it receives the number of generator calls made.
std::vector<std::uint32_t> prg_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t* draws = nullptr);

GroupPlan make_plan(std::size_t n, const GroupingConfig& cfg, std::size_t* draws = nullptr);

}  // namespace plac
