#include "plac/grouping.hpp"

#include <algorithm>
#include <numeric>

#include "plac/error.hpp"

namespace plac {

void GroupingConfig::validate() const {
  if (ratio < 2) throw Error("grouping ratio must be >= 2");
  if (alpha < 1) throw Error("grouping alpha must be >= 1");
  if (s_star < 1) throw Error("grouping s_star must be >= 1");
}

std::vector<std::uint32_t> group_sizes(std::size_t n, const GroupingConfig& cfg) {
  cfg.validate();
  if (n == 0) throw Error("group_sizes: N must be >= 1");
  std::vector<std::uint32_t> sizes;
  std::size_t first = std::min<std::size_t>(n / cfg.alpha, cfg.s_star);
  first = std::max<std::size_t>(first, 1);
  sizes.push_back(static_cast<std::uint32_t>(first));
  std::size_t coded = first;
  while (coded < n) {
    const std::size_t grown = static_cast<std::size_t>(sizes.back()) * cfg.ratio;
    const std::size_t next = std::min({grown, n - coded, static_cast<std::size_t>(cfg.s_star)});
    sizes.push_back(static_cast<std::uint32_t>(next));
    coded += next;
  }
  return sizes;
}

std::vector<std::uint32_t> prg_permutation(std::size_t n, std::uint64_t seed, std::size_t* draws) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  SplitMix64 rng(seed);
  std::size_t calls = 0;
  for (std::size_t i = n; i-- > 1;) {
    const std::size_t j = rng.below(i + 1);
    ++calls;
    std::swap(perm[i], perm[j]);
  }
  if (draws != nullptr) *draws = calls;
  return perm;
}

GroupPlan make_plan(std::size_t n, const GroupingConfig& cfg, std::size_t* draws) {
  GroupPlan plan;
  plan.sizes = group_sizes(n, cfg);
  plan.permutation = prg_permutation(n, cfg.seed, draws);
  plan.offsets.resize(plan.sizes.size());
  std::uint32_t offset = 0;
  for (std::size_t i = 0; i < plan.sizes.size(); ++i) {
    plan.offsets[i] = offset;
    offset += plan.sizes[i];
  }
  return plan;
}

}  // namespace plac
