#include "plac/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>

#include "plac/codec.hpp"
#include "plac/entropy.hpp"
#include "plac/error.hpp"

namespace plac {

namespace {

constexpr std::size_t kTrainChunk = 32;
constexpr double kKinkRatio = 1e-3;

// One prediction target with its context and loss weight per channel.
struct Target {
  ContextWindow window;
  Attribute symbol;
  double weight;
};

SymbolAlphabet alphabet_for(ChannelMode mode, int c) {
  return (mode == ChannelMode::kColor3 && c > 0) ? kChromaAlphabet : kLumaAlphabet;
}

// Network-domain attributes of a cloud in its original order.
std::vector<Attribute> net_attributes(const PointCloud& cloud) {
  const PointCloud net = to_ycocgr(cloud);
  std::vector<Attribute> out(net.size());
  for (std::size_t i = 0; i < net.size(); ++i) out[i] = network_attribute(net.attributes[i], net.channel_mode);
  return out;
}

// Appends the targets of one cloud; weights sum to `scale` over all targets
// and channels so the weighted bit count is the cloud's group loss.
void collect_targets(const PointCloud& cloud, const std::vector<Attribute>& attrs, const GroupingConfig& grouping,
                     int points_per_group, const WindowOptions& opts, int k, double scale,
                     std::vector<Target>& out) {
  const GroupPlan plan = make_plan(cloud.size(), grouping);
  if (plan.group_count() < 2) throw Error("group cross-entropy needs at least two groups");
  const int channels = channel_count(cloud.channel_mode);
  std::vector<Position> pos(cloud.size());
  std::vector<Attribute> att(cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    pos[n] = cloud.positions[plan.permutation[n]];
    att[n] = attrs[plan.permutation[n]];
  }
  const double per_group = scale / static_cast<double>(plan.group_count() - 1);
  for (std::size_t g = 1; g < plan.group_count(); ++g) {
    const std::size_t begin = plan.offsets[g];
    std::size_t used = plan.sizes[g];
    if (points_per_group > 0) used = std::min<std::size_t>(used, points_per_group);
    const std::span<const Position> antecedents(pos.data(), begin);
    const double w = per_group / (static_cast<double>(used) * channels);
    const KdTree tree = used <= 32 ? KdTree() : KdTree(antecedents);  // brute force is cheaper for a few queries
    for (std::size_t j = 0; j < used; ++j) {
      const Position& q = pos[begin + j];
      const auto ids = tree.size() > 0 ? tree.knn(q, k) : knn_brute(q, antecedents, k);
      out.push_back({make_window(q, antecedents, att, ids, opts), att[begin + j], w});
    }
  }
}

// Weighted bits of all targets, with gradients scaled into `grad` if given.
double evaluate_targets(const std::vector<Target>& targets, const ModelWeights& w, ChannelMode mode,
                        std::span<float> grad) {
  std::map<int, std::vector<std::size_t>> buckets;
  for (std::size_t i = 0; i < targets.size(); ++i) buckets[targets[i].window.k_effective()].push_back(i);
  const int ch = w.config.channels;
  const int coded = channel_count(mode);
  const double to_bits = 1.0 / std::numbers::ln2;
  double total = 0.0;
  std::vector<ContextWindow> windows;
  ForwardCache<float> cache;
  for (const auto& [k, all_members] : buckets) {
    // Small chunks keep the activations cache-resident; the chunking is
    // fixed, so gradient accumulation order does not vary between runs.
    for (std::size_t lo = 0; lo < all_members.size(); lo += kTrainChunk) {
      const std::span<const std::size_t> members(all_members.data() + lo,
                                                 std::min(kTrainChunk, all_members.size() - lo));
      windows.clear();
      for (std::size_t i : members) windows.push_back(targets[i].window);
      const auto batch = make_batch<float>(windows);
      const Mat<float> out = forward_batch(w, batch, grad.empty() ? nullptr : &cache);
      Mat<float> grad_out = Mat<float>::Zero(out.rows(), out.cols());
      for (std::size_t r = 0; r < members.size(); ++r) {
        const Target& t = targets[members[r]];
        const auto row = static_cast<Eigen::Index>(r);
        for (int c = 0; c < coded; ++c) {
          const double mu = 255.0 * out(row, c);
          const double b = 255.0 * out(row, ch + c);
          const LogPmf lp = laplace_log_pmf_folded(t.symbol[c], mu, b, alphabet_for(mode, c));
          total += -lp.value * to_bits * t.weight;
          grad_out(row, c) = static_cast<float>(-lp.d_mu * 255.0 * to_bits * t.weight);
          grad_out(row, ch + c) = static_cast<float>(-lp.d_b * 255.0 * to_bits * t.weight);
        }
      }
      if (!grad.empty()) backward_batch(w, batch, cache, grad_out, grad);
    }
  }
  return total;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning_rate must be finite and >= 0");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (steps < 0) throw Error("steps must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw Error("Adam epsilon must be > 0");
  if (points_per_group < 0) throw Error("points_per_group must be >= 0");
  grouping.validate();
}

double average_group_losses(std::span<const double> per_group_bits) {
  if (per_group_bits.empty()) throw Error("group cross-entropy needs at least two groups");
  double sum = 0.0;
  for (double v : per_group_bits) sum += v;
  return sum / static_cast<double>(per_group_bits.size());
}

double cloud_loss(const PointCloud& cloud, const ModelWeights& w, const GroupingConfig& grouping, int points_per_group,
                  std::span<float> grad, double scale) {
  cloud.validate();
  std::vector<Target> targets;
  collect_targets(cloud, net_attributes(cloud), grouping, points_per_group, w.config.normalization, w.config.K, scale,
                  targets);
  return evaluate_targets(targets, w, cloud.channel_mode, grad);
}

double group_cross_entropy(const PointCloud& cloud, const ModelWeights& w, const GroupingConfig& grouping) {
  return cloud_loss(cloud, w, grouping, 0, {}, 1.0);
}

double mean_bpp(std::span<const PointCloud> clouds, const ModelWeights& w, const GroupingConfig& grouping) {
  if (clouds.empty()) return std::numeric_limits<double>::quiet_NaN();
  CodecConfig cfg;
  cfg.grouping = grouping;
  cfg.K = w.config.K;
  double sum = 0.0;
  for (const PointCloud& c : clouds) sum += estimate_bpp(c, w, cfg).estimated_bpp();
  return sum / static_cast<double>(clouds.size());
}

TrainResult train(std::span<const PointCloud> dataset, const ModelWeights& init, const TrainConfig& cfg,
                  std::span<const PointCloud> validation, const TrainCallback& on_log) {
  cfg.validate();
  if (dataset.empty()) throw Error("training dataset is empty");
  const std::size_t n_params = make_layout(init.config).total;
  if (init.values.size() != n_params) throw Error("initial weights do not match their config");
  std::vector<std::vector<Attribute>> attrs;
  attrs.reserve(dataset.size());
  for (const PointCloud& c : dataset) {
    c.validate();
    if (channel_count(c.channel_mode) > init.config.channels) throw Error("model has too few channels for the data");
    if (c.channel_mode != dataset.front().channel_mode) throw Error("dataset mixes color and reflectance clouds");
    attrs.push_back(net_attributes(c));
  }

  TrainResult result{init, {}};
  ModelWeights& w = result.weights;
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);
  ParamVector<float> grad(n_params);
  SplitMix64 rng(cfg.seed);
  const ChannelMode mode = dataset.front().channel_mode;
  const double inv_batch = 1.0 / cfg.batch_size;

  auto maybe_validate = [&](int step) {
    if (cfg.validate_every <= 0 || validation.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (step % cfg.validate_every != 0 && step != cfg.steps) return std::numeric_limits<double>::quiet_NaN();
    return mean_bpp(validation, w, cfg.grouping);
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Target> targets;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = rng.below(dataset.size());
      GroupingConfig g = cfg.grouping;
      g.seed = rng();
      collect_targets(dataset[idx], attrs[idx], g, cfg.points_per_group, w.config.normalization, w.config.K, inv_batch,
                      targets);
    }
    std::fill(grad.begin(), grad.end(), 0.0f);
    const double loss = evaluate_targets(targets, w, mode, grad);
    if (!std::isfinite(loss)) {
      throw Error("non-finite training loss at step " + std::to_string(step) + " (loss=" + std::to_string(loss) +
                  ", lr=" + std::to_string(cfg.learning_rate) + ")");
    }

    const bool log_now = cfg.log_every > 0 && step % cfg.log_every == 0;
    const double val = maybe_validate(step);
    if (log_now || !std::isnan(val)) {
      result.log.push_back({step, loss, val});
      if (on_log) on_log(result.log.back());
    }

    const double t = step + 1.0;
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < n_params; ++i) {
      const double gi = grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double update = cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
      w.values[i] = static_cast<float>(w.values[i] - update);
    }
  }
  const double final_val = cfg.validate_every > 0 && !validation.empty() ? mean_bpp(validation, w, cfg.grouping)
                                                                         : std::numeric_limits<double>::quiet_NaN();
  if (!std::isnan(final_val)) {
    result.log.push_back({cfg.steps, std::numeric_limits<double>::quiet_NaN(), final_val});
    if (on_log) on_log(result.log.back());
  }
  return result;
}

ModelWeights train(std::span<const PointCloud> dataset, const TrainConfig& cfg, const NetworkConfig& net) {
  return train(dataset, init_weights(net, cfg.seed), cfg).weights;
}

std::string format_log_csv(std::span<const TrainLogRow> rows) {
  std::string out = "step,loss,val_bpp\n";
  char line[96];
  for (const TrainLogRow& r : rows) {
    std::snprintf(line, sizeof(line), "%d,", r.step);
    out += line;
    if (!std::isnan(r.loss)) {
      std::snprintf(line, sizeof(line), "%.6f", r.loss);
      out += line;
    }
    out += ',';
    if (!std::isnan(r.val_bpp)) {
      std::snprintf(line, sizeof(line), "%.6f", r.val_bpp);
      out += line;
    }
    out += '\n';
  }
  return out;
}

GradCheckReport compare_gradients(const Weights<double>& w, const ContextWindow& window, const Mat<double>& grad_out,
                                  std::span<const double> analytic, std::span<const std::size_t> indices,
                                  double tolerance, double h) {
  const ContextWindow windows[1] = {window};
  const auto batch = make_batch<double>(windows);
  auto objective = [&](const Weights<double>& ww) { return (forward_batch(ww, batch).array() * grad_out.array()).sum(); };
  Weights<double> probe = w;
  GradCheckReport rep;
  const double f0 = objective(probe);
  auto central = [&](std::size_t idx, double step, double* left, double* right) {
    const double saved = probe.values[idx];
    probe.values[idx] = saved + step;
    const double up = objective(probe);
    probe.values[idx] = saved - step;
    const double down = objective(probe);
    probe.values[idx] = saved;
    *left = (f0 - down) / step;
    *right = (up - f0) / step;
    return (up - down) / (2.0 * step);
  };
  for (std::size_t idx : indices) {
    double left = 0.0, right = 0.0;
    double numeric = central(idx, h, &left, &right);
    // A ReLU switching inside [x - h, x + h] shows up as one-sided slopes that
    // disagree; the derivative at x is then taken from a much smaller step.
    if (std::fabs(right - left) > kKinkRatio * std::max({std::fabs(left), std::fabs(right), kGradCheckFloor})) {
      numeric = central(idx, h * 1e-2, &left, &right);
      ++rep.kink_retries;
    }
    const double a = analytic[idx];
    const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), kGradCheckFloor});
    if (rel > rep.max_rel_error || rep.checked == 0) {
      rep.max_rel_error = rel;
      rep.worst_index = idx;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
    ++rep.checked;
  }
  rep.passed = rep.checked > 0 && rep.max_rel_error < tolerance;
  return rep;
}

GradCheckReport grad_check(const ModelWeights& w, const ContextWindow& window, double tolerance, std::size_t samples,
                           std::uint64_t seed) {
  const Weights<double> wd = cast_weights<double>(w);
  const ContextWindow windows[1] = {window};
  const auto batch = make_batch<double>(windows);
  ForwardCache<double> cache;
  const Mat<double> out = forward_batch(wd, batch, &cache);
  SplitMix64 rng(seed);
  Mat<double> grad_out(out.rows(), out.cols());
  for (Eigen::Index c = 0; c < out.cols(); ++c) grad_out(0, c) = 2.0 * rng.uniform() - 1.0;
  ParamVector<double> analytic(wd.values.size(), 0.0);
  backward_batch(wd, batch, cache, grad_out, std::span<double>(analytic));
  std::vector<std::size_t> indices(samples);
  for (auto& i : indices) i = rng.below(wd.values.size());
  return compare_gradients(wd, window, grad_out, analytic, indices, tolerance);
}

}  // namespace plac
