#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "plac/cloud_io.hpp"
#include "plac/context.hpp"
#include "plac/grouping.hpp"
#include "plac/qma_net.hpp"

namespace plac {

struct TrainConfig {
  double learning_rate = 0.0005;
  int batch_size = 8;
  int steps = 5000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  // Targets drawn per group per cloud each step; 0 uses every point. Group
  // order is already a uniform shuffle, so the first P points of a group are
  // an unbiased sample of it.
  int points_per_group = 8;
  // r, alpha and s* for training groupings; the seed is replaced each step.
  GroupingConfig grouping{};
  int validate_every = 500;  // 0 disables validation
  int log_every = 50;

  void validate() const;
};

// Mean over groups 2..M of the per-group mean (over points and channels) of
// -log2 of the folded, unquantized Laplace pmf. Throws when M < 2.
double group_cross_entropy(const PointCloud& cloud, const ModelWeights& w, const GroupingConfig& grouping);

// The averaging step of group_cross_entropy on its own: entry i is the mean
// bits of group i + 1 (group 1 is not listed).
double average_group_losses(std::span<const double> per_group_bits);

// Loss of one cloud under a given grouping, with the gradient of the loss
// (times `scale`) added into `grad` when it is non-empty.
double cloud_loss(const PointCloud& cloud, const ModelWeights& w, const GroupingConfig& grouping,
                  int points_per_group, std::span<float> grad, double scale = 1.0);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;     // batch loss in bits before the update
  double val_bpp = 0.0;  // NaN unless validation ran at this step
};

struct TrainResult {
  ModelWeights weights;
  std::vector<TrainLogRow> log;
};

using TrainCallback = std::function<void(const TrainLogRow&)>;

// Adam over randomly drawn batches; throws plac::Error on a non-finite loss.
TrainResult train(std::span<const PointCloud> dataset, const ModelWeights& init, const TrainConfig& cfg,
                  std::span<const PointCloud> validation = {}, const TrainCallback& on_log = {});

ModelWeights train(std::span<const PointCloud> dataset, const TrainConfig& cfg,
                   const NetworkConfig& net = NetworkConfig{});

std::string format_log_csv(std::span<const TrainLogRow> rows);

// Mean codec bpp over a set of clouds.
double mean_bpp(std::span<const PointCloud> clouds, const ModelWeights& w, const GroupingConfig& grouping);

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t kink_retries = 0;  // samples re-measured with h / 100
  bool passed = false;
};

// Relative error uses max(|analytic|, |numeric|, 1e-6) as its denominator so
// parameters with (near) zero gradient do not divide by zero.
inline constexpr double kGradCheckFloor = 1e-6;

// Central differences (h = 1e-4, double precision) of the scalar
// <grad_out, forward(window)> against backward, on `samples` random
// parameter indices (or on `indices` when given). When the two one-sided
// slopes disagree by more than 0.1% a ReLU kink lies inside the step, and that
// sample is measured again with h / 100.
GradCheckReport grad_check(const ModelWeights& w, const ContextWindow& window, double tolerance,
                           std::size_t samples = 256, std::uint64_t seed = 7);

// Harness core, exposed so tests can feed it a deliberately wrong gradient or
// a reduced output functional.
GradCheckReport compare_gradients(const Weights<double>& w, const ContextWindow& window, const Mat<double>& grad_out,
                                  std::span<const double> analytic, std::span<const std::size_t> indices,
                                  double tolerance, double h = 1e-4);

}  // namespace plac
