#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plac/context.hpp"

namespace plac {

struct NetworkConfig {
  int K = 8;         // context window size
  int L = 5;         // residual attention units
  int C = 128;       // feature width
  int channels = 3;  // coded channels (1 reflectance, 3 color)
  WindowOptions normalization{};

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

// Offsets into the flat parameter vector. Weights are stored row-major as
// (in x out) so a layer computes X * W + b.
struct LinearSlot {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in = 0;
  int out = 0;
};

struct MlpSlot {  // Linear -> ReLU -> Linear
  LinearSlot hidden;
  LinearSlot output;
};

struct UnitSlot {
  MlpSlot embed;
  LinearSlot key;
  LinearSlot value;
  MlpSlot pos_multiplier;
  MlpSlot pos_bias;
  MlpSlot out;
};

// Serialization order is the order of declaration: attribute map, then each
// unit (embed, key, value, pos_multiplier, pos_bias, out), then the head.
struct ParameterLayout {
  LinearSlot attr_map;
  std::vector<UnitSlot> units;
  MlpSlot head;
  std::size_t total = 0;
};

ParameterLayout make_layout(const NetworkConfig& cfg);

// Parameter and gradient storage. Eigen's kernels choose their vector peeling
// from the runtime address, so an unaligned buffer can change float rounding
// from one copy of the weights to the next; a fixed alignment keeps results
// identical across copies and processes.
template <typename T>
using ParamVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct Weights {
  NetworkConfig config;
  ParamVector<T> values;

  bool operator==(const Weights&) const = default;
};

using ModelWeights = Weights<float>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, except
// the head's output layer, which starts shrunk towards a broad Laplace prior.
ModelWeights init_weights(const NetworkConfig& cfg, std::uint64_t seed);

template <typename To, typename From>
Weights<To> cast_weights(const Weights<From>& w) {
  Weights<To> out{w.config, {}};
  out.values.assign(w.values.begin(), w.values.end());
  return out;
}

inline constexpr double kMinScale = 1e-6;

// Network-scale outputs: multiply by 255 for symbol units.
struct LaplaceParams {
  int channels = 3;
  std::array<float, 3> mu{};
  std::array<float, 3> b{};
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A set of windows sharing one effective size k, flattened to (count*k) rows.
template <typename T>
struct WindowBatch {
  int count = 0;
  int k = 0;
  Mat<T> positions;
  Mat<T> attrs;
  std::vector<std::uint32_t> sources;  // antecedent id behind each row
};

template <typename T>
WindowBatch<T> make_batch(std::span<const ContextWindow> windows);

template <typename T>
struct UnitCache {
  Mat<T> input, embed_hidden, embed, key, value, pm_hidden, pm, pb_hidden, pb, score, gated, out_hidden;
};

template <typename T>
struct ForwardCache {
  std::vector<UnitCache<T>> units;
  Mat<T> pooled, head_hidden, head_out;
  bool valid = false;
};

// Returns (count x 2*channels): mu in the first half, b = softplus(.) + 1e-6
// in the second.
template <typename T>
Mat<T> forward_batch(const Weights<T>& w, const WindowBatch<T>& batch, ForwardCache<T>* cache = nullptr);

// Inference-only state tied to one set of weights. The attribute map and the
// first unit's key and value read nothing but a point's own attribute, so a
// codec computes them once per point and gathers rows into each window rather
// than recomputing them K times over. In later units nothing but key and value
// reads the embedding, so its output layer is folded into both of them.
template <typename T>
struct InferenceCache {
  struct Folded {
    Mat<T> key_w, value_w;  // embed output weight times key / value weight
    Mat<T> key_b, value_b;  // 1 x C
  };
  std::vector<Folded> folded;  // one per unit; the first is unused
  Mat<T> feat, key, value;     // first-unit rows per point
  std::size_t points() const { return static_cast<std::size_t>(feat.rows()); }
};

template <typename T>
InferenceCache<T> make_inference_cache(const Weights<T>& w);

// Appends first-unit rows for `attrs` (n x 3, network domain / 255).
template <typename T>
void append_points(const Weights<T>& w, const Mat<T>& attrs, InferenceCache<T>& cache);

// Same result layout as above; first-unit rows are gathered from `cache` by
// batch.sources. Agrees with the plain forward up to float rounding.
template <typename T>
Mat<T> forward_batch(const Weights<T>& w, const WindowBatch<T>& batch, const InferenceCache<T>& cache);

// Accumulates d(loss)/d(parameters) into `grad` (same layout as w.values)
// given d(loss)/d(output) shaped like forward_batch's result.
template <typename T>
void backward_batch(const Weights<T>& w, const WindowBatch<T>& batch, const ForwardCache<T>& cache,
                    const Mat<T>& grad_out, std::span<T> grad);

LaplaceParams forward(const ContextWindow& window, const ModelWeights& w);

// Single-window reverse pass. `grad_mu` / `grad_b` are d(loss)/d(mu, b).
std::vector<float> backward(const ContextWindow& window, const ModelWeights& w,
                            std::span<const float> grad_mu, std::span<const float> grad_b);

std::vector<std::uint8_t> save_weights(const ModelWeights& w);
ModelWeights load_weights(std::span<const std::uint8_t> bytes);
ModelWeights load_weights_file(const std::string& path);
void save_weights_file(const std::string& path, const ModelWeights& w);

// 64-bit FNV-1a of the serialized form (excluding the trailing hash itself).
std::uint64_t weights_hash(const ModelWeights& w);
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace plac
