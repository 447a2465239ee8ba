// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance [criterion numbers...] [--trained weights.bin]
// Criterion 1 uses the weights trained by criterion 9 unless --trained is given.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "plac/codec.hpp"
#include "plac/context.hpp"
#include "plac/entropy.hpp"
#include "plac/error.hpp"
#include "plac/grouping.hpp"
#include "plac/qma_net.hpp"
#include "plac/synth_data.hpp"
#include "plac/trainer.hpp"

using namespace plac;

namespace {

// Pinned tolerances and sizes.
constexpr double kLosslessBudgetSeconds = 120.0;
constexpr double kPmfAbsTol = 1e-12;
constexpr double kPmfSumTol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr std::size_t kGradSamples = 256;
constexpr std::int64_t kCoderSlackBits = 128;
constexpr double kTrainedBppLimit = 18.0;
constexpr double kMonotoneShare = 0.80;
constexpr double kModelBytesTarget = 2.6e6;
constexpr double kModelBytesTol = 0.25;
constexpr int kFuzzTrials = 1000;

constexpr std::size_t kTrainClouds = 500;
constexpr std::size_t kTestClouds = 100;
constexpr std::size_t kTrainPoints = 2048;
constexpr int kTrainSteps = 5000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::optional<ModelWeights> g_trained;

const ModelWeights& random_weights() {
  static const ModelWeights w = init_weights(NetworkConfig{}, 2024);
  return w;
}

Outcome lossless() {
  if (!g_trained) return {false, "no trained weights (run criterion 9 first or pass --trained)"};
  const std::size_t sizes[] = {1, 2, 100, 2048, 50000};
  SplitMix64 rng(101);
  int ok = 0, total = 0;
  const auto t0 = Clock::now();
  for (std::size_t n : sizes) {
    for (int rep = 0; rep < 10; ++rep) {
      const ModelWeights& w = rep % 2 == 0 ? random_weights() : *g_trained;
      const PointCloud cloud = gen_cloud(n, rng());
      CodecConfig cfg;
      cfg.grouping.seed = rng();
      const auto stream = encode(cloud, w, cfg);
      const PointCloud back = decode(stream, cloud.positions, w);
      ++total;
      if (back.attributes == cloud.attributes) ++ok;
    }
  }
  const double secs = seconds_since(t0);
  return {ok == total && secs < kLosslessBudgetSeconds,
          fmt("%d/%d clouds exact, %.1f s (limit %.0f s)", ok, total, secs, kLosslessBudgetSeconds)};
}

Outcome group_sizes_law() {
  const auto a = group_sizes(2048, GroupingConfig{});
  const auto b = group_sizes(300, GroupingConfig{});
  const std::vector<std::uint32_t> ea{16, 32, 64, 128, 256, 512, 1024, 16};
  const std::vector<std::uint32_t> eb{2, 4, 8, 16, 32, 64, 128, 46};
  return {a == ea && b == eb, "group_sizes(2048) and group_sizes(300) compared element-wise"};
}

Outcome first_group_cost() {
  SplitMix64 rng(303);
  std::set<double> seen;
  for (std::size_t n : {1u, 17u, 300u, 2048u, 10000u}) {
    const EncodeReport r = estimate_bpp(gen_cloud(n, rng()), random_weights(), CodecConfig{});
    seen.insert(r.groups.front().bpp());
  }
  const bool pass = seen.size() == 1 && *seen.begin() == 24.0;
  return {pass, fmt("group-1 bpp %.17g over 5 clouds", *seen.begin())};
}

Outcome laplace_check() {
  const double err = std::fabs(laplace_pmf(0, 0.0, 1.0) - (1.0 - std::exp(-0.5)));
  double worst = 0.0;
  SplitMix64 rng(404);
  for (const SymbolAlphabet& a : {kLumaAlphabet, kChromaAlphabet, SymbolAlphabet{-3, 17}, SymbolAlphabet{5, 5}}) {
    for (int t = 0; t < 500; ++t) {
      const double mu = 1600.0 * rng.uniform() - 800.0;
      const double b = std::exp(16.0 * rng.uniform() - 8.0);
      double sum = 0.0;
      for (int y = a.lo; y <= a.hi; ++y) sum += laplace_pmf_folded(y, mu, b, a);
      worst = std::max(worst, std::fabs(sum - 1.0));
    }
  }
  return {err <= kPmfAbsTol && worst <= kPmfSumTol,
          fmt("|pmf(0;0,1) - (1-e^-1/2)| = %.3g (tol %.0e), worst |sum - 1| = %.3g (tol %.0e)", err, kPmfAbsTol,
              worst, kPmfSumTol)};
}

Outcome gradient_fidelity() {
  const PointCloud cloud = gen_cloud(600, 505);
  const PointCloud net = to_ycocgr(cloud);
  std::vector<Attribute> attrs(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) attrs[i] = network_attribute(net.attributes[i], net.channel_mode);
  double worst = 0.0;
  std::size_t checked = 0;
  bool pass = true;
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t split = 100 + 150 * trial;
    const std::span<const Position> ante(cloud.positions.data(), split);
    const ContextWindow window = build_window(cloud.positions[split], ante, attrs, 8);
    const GradCheckReport r = grad_check(random_weights(), window, kGradRelTol, kGradSamples, 11 + trial);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
    pass = pass && r.passed && r.checked >= 200;
  }
  return {pass && worst < kGradRelTol,
          fmt("%zu parameters, max relative error %.3g (tol %.0e)", checked, worst, kGradRelTol)};
}

Outcome scale_invariance() {
  SplitMix64 rng(606);
  int identical = 0, total = 0;
  for (int c = 0; c < 10; ++c) {
    const PointCloud cloud = gen_cloud(2048, rng());
    CodecConfig cfg;
    cfg.grouping.seed = rng();
    const auto base = encode(cloud, random_weights(), cfg);
    const auto bp = stream_payload(base);
    for (double lambda : {std::ldexp(1.0, -10), 1000.0}) {
      PointCloud s = cloud;
      for (auto& p : s.positions) {
        for (double& v : p) v *= lambda;
      }
      const auto scaled = encode(s, random_weights(), cfg);
      const auto sp = stream_payload(scaled);
      ++total;
      if (std::equal(bp.begin(), bp.end(), sp.begin(), sp.end())) ++identical;
    }
  }
  return {identical == total, fmt("%d/%d scaled payloads byte-identical", identical, total)};
}

Outcome knn_oracle() {
  SplitMix64 rng(707);
  std::vector<Position> pts;
  for (int i = 0; i < 20000; ++i) pts.push_back({1000 * rng.uniform(), 1000 * rng.uniform(), 1000 * rng.uniform()});
  // Lattice points and exact duplicates make distance ties common.
  for (int i = 0; i < 4000; ++i) {
    pts.push_back({static_cast<double>(rng.below(20)) * 50, static_cast<double>(rng.below(20)) * 50,
                   static_cast<double>(rng.below(20)) * 50});
  }
  const KdTree tree(pts);
  int same = 0;
  const int queries = 10000;
  for (int q = 0; q < queries; ++q) {
    Position p;
    if (q % 4 == 0) {
      p = pts[rng.below(pts.size())];
    } else if (q % 4 == 1) {
      p = {static_cast<double>(rng.below(40)) * 25, static_cast<double>(rng.below(40)) * 25,
           static_cast<double>(rng.below(40)) * 25};
    } else {
      p = {1200 * rng.uniform() - 100, 1200 * rng.uniform() - 100, 1200 * rng.uniform() - 100};
    }
    const int k = 1 + static_cast<int>(rng.below(16));
    if (tree.knn(p, k) == knn_brute(p, pts, k)) ++same;
  }
  return {same == queries, fmt("%d/%d queries identical index-for-index", same, queries)};
}

Outcome coder_tightness() {
  SplitMix64 rng(808);
  double worst = -1e300;
  int runs = 0;
  bool pass = true;
  for (std::size_t n : {1000u, 4096u, 30000u, 200000u}) {
    std::vector<QuantizedCdf> cdfs;
    std::vector<int> symbols;
    double ideal = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const SymbolAlphabet a = i % 3 == 0 ? kLumaAlphabet : kChromaAlphabet;
      const float mu = static_cast<float>(a.lo + (a.hi - a.lo) * rng.uniform());
      const float b = static_cast<float>(std::exp(7.0 * rng.uniform() - 2.0));
      QuantizedCdf q = quantize_cdf(mu, b, a);
      // Draw the symbol from the table itself.
      const auto u = static_cast<std::uint32_t>(rng.below(kCdfTotal));
      const auto it = std::upper_bound(q.cumulative.begin(), q.cumulative.end(), u);
      const int y = a.lo + static_cast<int>(it - q.cumulative.begin()) - 1;
      ideal += q.bits(y);
      symbols.push_back(y);
      cdfs.push_back(std::move(q));
    }
    const auto bytes = range_encode(symbols, cdfs);
    const double slack = 8.0 * static_cast<double>(bytes.size()) - ideal;
    worst = std::max(worst, slack);
    pass = pass && slack <= kCoderSlackBits && range_decode(bytes, cdfs, n) == symbols;
    ++runs;
  }
  return {pass, fmt("worst slack %.1f bits over %d sequences (limit %lld)", worst, runs,
                    static_cast<long long>(kCoderSlackBits))};
}

Outcome training() {
  const auto train_seeds = dataset_seeds(kTrainClouds, 9001);
  const auto test_seeds = dataset_seeds(kTestClouds, 9002);
  std::vector<PointCloud> train_set, test_set;
  for (auto s : train_seeds) train_set.push_back(gen_cloud(kTrainPoints, s));
  for (auto s : test_seeds) test_set.push_back(gen_cloud(kTrainPoints, s));

  TrainConfig cfg;
  cfg.steps = kTrainSteps;
  cfg.validate_every = 0;
  cfg.log_every = 500;
  const auto t0 = Clock::now();
  const TrainResult r = train(train_set, init_weights(NetworkConfig{}, cfg.seed), cfg, {}, [&](const TrainLogRow& row) {
    std::printf("  [train] step %5d loss %.4f (%.0f s)\n", row.step, row.loss, seconds_since(t0));
    std::fflush(stdout);
  });
  g_trained = r.weights;
  try {
    save_weights_file("acceptance_trained.bin", r.weights);
  } catch (const Error&) {
  }

  double sum = 0.0;
  int monotone = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    CodecConfig cc;
    cc.grouping.seed = 7000 + i;
    EncodeReport rep;
    encode(test_set[i], r.weights, cc, &rep);
    sum += rep.actual_bpp();
    bool dec = true;
    for (std::size_t g = 2; g < rep.groups.size(); ++g) dec = dec && rep.groups[g].bpp() < rep.groups[g - 1].bpp();
    monotone += dec ? 1 : 0;
  }
  const double mean = sum / test_set.size();
  const double share = static_cast<double>(monotone) / test_set.size();
  return {mean <= kTrainedBppLimit && share >= kMonotoneShare,
          fmt("held-out mean %.3f bpp (limit %.1f), decreasing per-group trend on %.0f%% of %zu clouds (need %.0f%%), "
              "training %.0f s",
              mean, kTrainedBppLimit, 100 * share, test_set.size(), 100 * kMonotoneShare, seconds_since(t0))};
}

Outcome model_size() {
  const double bytes = static_cast<double>(save_weights(init_weights(NetworkConfig{}, 1)).size());
  const double rel = bytes / kModelBytesTarget - 1.0;
  return {std::fabs(rel) <= kModelBytesTol,
          fmt("%.0f bytes (%.3f MB, %.3f MiB), %+.1f%% vs 2.6 MB (tol 25%%)", bytes, bytes / 1e6,
              bytes / (1024.0 * 1024.0), 100 * rel)};
}

Outcome fuzz() {
  const PointCloud cloud = gen_cloud(256, 1101);
  CodecConfig cfg;
  cfg.geometry_checksum = true;
  const auto stream = encode(cloud, random_weights(), cfg);
  SplitMix64 rng(1102);
  int clean_errors = 0, decoded = 0, crashes = 0;
  for (int t = 0; t < kFuzzTrials; ++t) {
    std::vector<std::uint8_t> bad(stream);
    if (t % 2 == 0) {
      bad.resize(rng.below(stream.size()));
    } else {
      const int flips = 1 + static_cast<int>(rng.below(8));
      for (int f = 0; f < flips; ++f) bad[rng.below(bad.size())] ^= static_cast<std::uint8_t>(1u << rng.below(8));
    }
    DecodeOptions opt;
    // Half the trials skip the trailer check so corrupt payloads reach the
    // range decoder.
    opt.verify_checksum = t % 4 < 2;
    try {
      const PointCloud out = decode(bad, cloud.positions, random_weights(), opt);
      out.validate();
      ++decoded;
    } catch (const Error&) {
      ++clean_errors;
    } catch (...) {
      ++crashes;
    }
  }
  return {crashes == 0 && clean_errors + decoded == kFuzzTrials,
          fmt("%d trials: %d clean errors, %d decoded to a valid cloud, %d other failures", kFuzzTrials, clean_errors,
              decoded, crashes)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--trained") == 0 && i + 1 < argc) {
      g_trained = load_weights_file(argv[++i]);
    } else {
      only.insert(std::atoi(argv[i]));
    }
  }
  // Training runs before losslessness so criterion 1 can use its weights.
  const std::vector<Criterion> all{
      {2, "group-size law", group_sizes_law},   {3, "first-group cost", first_group_cost},
      {4, "Laplace analytic check", laplace_check}, {5, "gradient fidelity", gradient_fidelity},
      {6, "scale invariance", scale_invariance}, {7, "KNN oracle", knn_oracle},
      {8, "coder tightness", coder_tightness},   {10, "model size", model_size},
      {11, "decoder robustness", fuzz},          {9, "desk-scale training", training},
      {1, "losslessness", lossless},
  };
  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %s: %s (%s) [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
