#include "plac/qma_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "plac/cloud_io.hpp"
#include "plac/error.hpp"
#include "plac/grouping.hpp"

namespace plac {

namespace {

constexpr char kWeightsMagic[4] = {'P', 'L', 'W', '1'};
constexpr std::uint32_t kWeightsVersion = 1;
constexpr std::size_t kWeightsHeaderSize = 4 + 4 * 5 + 4 + 8;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct LinearView {
  Eigen::Map<const Mat<T>> w;
  Eigen::Map<const RowVec<T>> b;
};

template <typename T>
LinearView<T> view(const ParamVector<T>& values, const LinearSlot& s) {
  return {Eigen::Map<const Mat<T>>(values.data() + s.weight, s.in, s.out),
          Eigen::Map<const RowVec<T>>(values.data() + s.bias, s.out)};
}

template <typename T>
void linear(const LinearView<T>& l, const Mat<T>& x, Mat<T>& y) {
  y.noalias() = x * l.w;
  y.rowwise() += l.b;
}

// y = relu(x * W + b), bias and clamp in one pass.
template <typename T>
void linear_relu(const LinearView<T>& l, const Mat<T>& x, Mat<T>& y) {
  const Eigen::Index cols = l.w.cols();
  if (x.cols() == 3) {
    // Position inputs: three multiply-adds per output beat a depth-3 GEMM.
    y.resize(x.rows(), cols);
    const T* w0 = l.w.data();
    const T* w1 = w0 + cols;
    const T* w2 = w1 + cols;
    const T* b = l.b.data();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T p0 = x(r, 0), p1 = x(r, 1), p2 = x(r, 2);
      T* out = y.data() + r * cols;
      for (Eigen::Index c = 0; c < cols; ++c) out[c] = std::max(p0 * w0[c] + p1 * w1[c] + p2 * w2[c] + b[c], T(0));
    }
    return;
  }
  y.noalias() = x * l.w;
  const T* b = l.b.data();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    T* out = y.data() + r * cols;
    for (Eigen::Index c = 0; c < cols; ++c) out[c] = std::max(out[c] + b[c], T(0));
  }
}

template <typename T>
void mlp(const ParamVector<T>& values, const MlpSlot& s, const Mat<T>& x, Mat<T>& hidden, Mat<T>& y) {
  linear_relu(view(values, s.hidden), x, hidden);
  linear(view(values, s.output), hidden, y);
}

// Accumulates weight/bias gradients; writes dX when requested.
template <typename T>
void linear_backward(const ParamVector<T>& values, const LinearSlot& s, const Mat<T>& x, const Mat<T>& dy,
                     std::span<T> grad, Mat<T>* dx) {
  Eigen::Map<Mat<T>> gw(grad.data() + s.weight, s.in, s.out);
  Eigen::Map<RowVec<T>> gb(grad.data() + s.bias, s.out);
  gw.noalias() += x.transpose() * dy;
  gb += dy.colwise().sum();
  if (dx != nullptr) dx->noalias() = dy * view(values, s).w.transpose();
}

template <typename T>
void mlp_backward(const ParamVector<T>& values, const MlpSlot& s, const Mat<T>& x, const Mat<T>& hidden,
                  const Mat<T>& dy, std::span<T> grad, Mat<T>* dx) {
  Mat<T> dh;
  linear_backward(values, s.output, hidden, dy, grad, &dh);
  dh = (hidden.array() > T(0)).select(dh, T(0));
  linear_backward(values, s.hidden, x, dh, grad, dx);
}

template <typename T>
T softplus(T z) {
  return z > T(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// Softmax over the k rows of each window, independently per feature column.
template <typename T>
void window_softmax(Mat<T>& z, int count, int k) {
  // Softmax down each column of every k-row window block. The max shift and
  // normalization run as plain row loops; the exponential is one vectorized
  // pass over the whole matrix.
  const int cols = static_cast<int>(z.cols());
  std::vector<T> acc(cols);
  for (int b = 0; b < count; ++b) {
    T* base = z.data() + static_cast<std::ptrdiff_t>(b) * k * cols;
    std::copy(base, base + cols, acc.begin());
    for (int r = 1; r < k; ++r) {
      const T* row = base + static_cast<std::ptrdiff_t>(r) * cols;
      for (int c = 0; c < cols; ++c) acc[c] = std::max(acc[c], row[c]);
    }
    for (int r = 0; r < k; ++r) {
      T* row = base + static_cast<std::ptrdiff_t>(r) * cols;
      for (int c = 0; c < cols; ++c) row[c] -= acc[c];
    }
  }
  z.array() = z.array().exp();
  for (int b = 0; b < count; ++b) {
    T* base = z.data() + static_cast<std::ptrdiff_t>(b) * k * cols;
    std::copy(base, base + cols, acc.begin());
    for (int r = 1; r < k; ++r) {
      const T* row = base + static_cast<std::ptrdiff_t>(r) * cols;
      for (int c = 0; c < cols; ++c) acc[c] += row[c];
    }
    for (int c = 0; c < cols; ++c) acc[c] = T(1) / acc[c];
    for (int r = 0; r < k; ++r) {
      T* row = base + static_cast<std::ptrdiff_t>(r) * cols;
      for (int c = 0; c < cols; ++c) row[c] *= acc[c];
    }
  }
}

template <typename T>
Mat<T> sum_pool(const Mat<T>& f, int count, int k) {
  const int cols = static_cast<int>(f.cols());
  Mat<T> pooled = Mat<T>::Zero(count, cols);
  for (int b = 0; b < count; ++b) {
    for (int r = 0; r < k; ++r) pooled.row(b) += f.row(static_cast<Eigen::Index>(b) * k + r);
  }
  return pooled;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> serialize_unhashed(const ModelWeights& w) {
  const ParameterLayout layout = make_layout(w.config);
  if (w.values.size() != layout.total) throw WeightsError(WeightsErrorKind::kConfigMismatch, "parameter count does not match config");
  std::vector<std::uint8_t> out;
  out.reserve(kWeightsHeaderSize + 4 * w.values.size() + 8);
  out.insert(out.end(), kWeightsMagic, kWeightsMagic + 4);
  put_u32(out, kWeightsVersion);
  put_u32(out, static_cast<std::uint32_t>(w.config.K));
  put_u32(out, static_cast<std::uint32_t>(w.config.L));
  put_u32(out, static_cast<std::uint32_t>(w.config.C));
  put_u32(out, static_cast<std::uint32_t>(w.config.channels));
  const std::uint32_t flags = (w.config.normalization.center ? 1u : 0u) | (w.config.normalization.rescale ? 2u : 0u);
  put_u32(out, flags);
  put_u64(out, static_cast<std::uint64_t>(w.values.size()));
  for (float v : w.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

}  // namespace

void NetworkConfig::validate() const {
  if (K < 1 || K > 64) throw Error("network K must be in [1, 64]");
  if (L < 1) throw Error("network L must be >= 1");
  if (C < 8) throw Error("network C must be >= 8");
  if (channels != 1 && channels != 3) throw Error("network channels must be 1 or 3");
}

ParameterLayout make_layout(const NetworkConfig& cfg) {
  cfg.validate();
  ParameterLayout layout;
  std::size_t cursor = 0;
  auto lin = [&](int in, int out) {
    LinearSlot s;
    s.in = in;
    s.out = out;
    s.weight = cursor;
    cursor += static_cast<std::size_t>(in) * out;
    s.bias = cursor;
    cursor += static_cast<std::size_t>(out);
    return s;
  };
  auto two_layer = [&](int in, int hidden, int out) {
    MlpSlot m;
    m.hidden = lin(in, hidden);
    m.output = lin(hidden, out);
    return m;
  };
  const int c = cfg.C;
  layout.attr_map = lin(3, c);
  for (int l = 0; l < cfg.L; ++l) {
    UnitSlot u;
    u.embed = two_layer(c, c, c);
    u.key = lin(c, c);
    u.value = lin(c, c);
    u.pos_multiplier = two_layer(3, c, c);
    u.pos_bias = two_layer(3, c, c);
    u.out = two_layer(c, c, c);
    layout.units.push_back(u);
  }
  layout.head = two_layer(c, c, 2 * cfg.channels);
  layout.total = cursor;
  return layout;
}

ModelWeights init_weights(const NetworkConfig& cfg, std::uint64_t seed) {
  const ParameterLayout layout = make_layout(cfg);
  ModelWeights w{cfg, ParamVector<float>(layout.total, 0.0f)};
  SplitMix64 rng(seed);
  auto fill = [&](const LinearSlot& s) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i) {
      w.values[s.weight + i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
    }
    for (int i = 0; i < s.out; ++i) w.values[s.bias + i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  };
  auto fill_mlp = [&](const MlpSlot& m) {
    fill(m.hidden);
    fill(m.output);
  };
  fill(layout.attr_map);
  for (const UnitSlot& u : layout.units) {
    fill_mlp(u.embed);
    fill(u.key);
    fill(u.value);
    fill_mlp(u.pos_multiplier);
    fill_mlp(u.pos_bias);
    fill_mlp(u.out);
  }
  fill_mlp(layout.head);
  // Start the head near a broad prior: mid-range luma, zero chroma and a
  // scale of about 50 symbol units, so an untrained model costs close to a
  // uniform code instead of far more.
  const LinearSlot& o = layout.head.output;
  for (std::size_t i = 0; i < static_cast<std::size_t>(o.in) * o.out; ++i) w.values[o.weight + i] *= 0.1f;
  const float b_bias = static_cast<float>(std::log(std::expm1(0.2)));
  for (int c = 0; c < cfg.channels; ++c) {
    w.values[o.bias + c] = c == 0 ? 0.5f : 0.0f;
    w.values[o.bias + cfg.channels + c] = b_bias;
  }
  return w;
}

template <typename T>
WindowBatch<T> make_batch(std::span<const ContextWindow> windows) {
  WindowBatch<T> batch;
  batch.count = static_cast<int>(windows.size());
  if (windows.empty()) return batch;
  batch.k = windows.front().k_effective();
  if (batch.k < 1) throw Error("context window is empty");
  batch.positions.resize(static_cast<Eigen::Index>(batch.count) * batch.k, 3);
  batch.attrs.resize(static_cast<Eigen::Index>(batch.count) * batch.k, 3);
  batch.sources.reserve(static_cast<std::size_t>(batch.count) * batch.k);
  Eigen::Index row = 0;
  for (const ContextWindow& w : windows) {
    batch.sources.insert(batch.sources.end(), w.ids.begin(), w.ids.end());
    if (w.k_effective() != batch.k) throw Error("windows in a batch must share one size");
    for (int m = 0; m < batch.k; ++m, ++row) {
      for (int c = 0; c < 3; ++c) {
        batch.positions(row, c) = static_cast<T>(w.rel_positions[m][c]);
        batch.attrs(row, c) = static_cast<T>(w.attrs[m][c]);
      }
    }
  }
  return batch;
}

template <typename T>
void gather_rows(const Mat<T>& src, std::span<const std::uint32_t> rows, Mat<T>& dst) {
  dst.resize(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) dst.row(static_cast<Eigen::Index>(r)) = src.row(rows[r]);
}

template <typename T>
LinearView<T> folded_view(const Mat<T>& w, const Mat<T>& b) {
  return {Eigen::Map<const Mat<T>>(w.data(), w.rows(), w.cols()), Eigen::Map<const RowVec<T>>(b.data(), b.cols())};
}

template <typename T>
Mat<T> forward_impl(const Weights<T>& w, const WindowBatch<T>& batch, ForwardCache<T>* cache,
                    const InferenceCache<T>* pre) {
  const ParameterLayout layout = make_layout(w.config);
  if (w.values.size() != layout.total) throw Error("weights do not match their config");
  if (batch.count == 0) return Mat<T>(0, 2 * w.config.channels);
  if (batch.positions.rows() != static_cast<Eigen::Index>(batch.count) * batch.k || batch.positions.cols() != 3 ||
      batch.attrs.rows() != batch.positions.rows() || batch.attrs.cols() != 3) {
    throw Error("window batch has inconsistent shape");
  }
  const auto& v = w.values;
  // Inference keeps its buffers per thread: at these sizes a fresh set per
  // call costs page faults comparable to the arithmetic.
  struct Workspace {
    UnitCache<T> unit;
    Mat<T> feat, delta;
  };
  thread_local Workspace ws;
  Mat<T> local_feat;
  Mat<T>& feat = cache != nullptr ? local_feat : ws.feat;
  if (pre != nullptr) {
    if (pre->folded.size() != layout.units.size()) throw Error("inference cache does not match the weights");
    if (batch.sources.size() != static_cast<std::size_t>(batch.positions.rows())) {
      throw Error("window batch carries no source ids");
    }
    for (std::uint32_t id : batch.sources) {
      if (id >= pre->points()) throw Error("window source id outside the inference cache");
    }
    gather_rows(pre->feat, batch.sources, feat);
  } else {
    linear(view(v, layout.attr_map), batch.attrs, feat);
  }

  if (cache != nullptr) {
    cache->units.resize(layout.units.size());  // every field is rewritten below, so buffers carry over
    cache->valid = false;
  }
  UnitCache<T>& scratch = ws.unit;
  for (std::size_t l = 0; l < layout.units.size(); ++l) {
    const UnitSlot& u = layout.units[l];
    UnitCache<T>& s = cache != nullptr ? cache->units[l] : scratch;
    if (cache != nullptr) s.input = feat;
    if (l == 0 && pre != nullptr) {
      gather_rows(pre->key, batch.sources, s.key);
      gather_rows(pre->value, batch.sources, s.value);
    } else if (pre != nullptr) {
      const auto& f = pre->folded[l];
      linear_relu(view(v, u.embed.hidden), feat, s.embed_hidden);
      linear(folded_view(f.key_w, f.key_b), s.embed_hidden, s.key);
      linear(folded_view(f.value_w, f.value_b), s.embed_hidden, s.value);
    } else {
      mlp(v, u.embed, feat, s.embed_hidden, s.embed);
      linear(view(v, u.key), s.embed, s.key);
      linear(view(v, u.value), s.embed, s.value);
    }
    mlp(v, u.pos_multiplier, batch.positions, s.pm_hidden, s.pm);
    mlp(v, u.pos_bias, batch.positions, s.pb_hidden, s.pb);
    // No query term: the target attribute is unknown, so the key carries the
    // positional fusion directly.
    s.score = s.pm.cwiseProduct(s.key) + s.pb;
    window_softmax(s.score, batch.count, batch.k);
    s.gated = (s.value + s.pb).cwiseProduct(s.score);
    if (l + 1 < layout.units.size()) {
      mlp(v, u.out, s.gated, s.out_hidden, ws.delta);
      feat += ws.delta;
    } else {
      linear_relu(view(v, u.out.hidden), s.gated, s.out_hidden);
    }
  }

  // Only the window sum of the last unit's output is read, and its output
  // layer is affine, so that layer runs on pooled hidden rows:
  // sum(h W + b) = (sum h) W + k b.
  const LinearView<T> last = view(v, layout.units.back().out.output);
  const UnitCache<T>& s_last = cache != nullptr ? cache->units.back() : scratch;
  Mat<T> pooled = sum_pool(feat, batch.count, batch.k);
  pooled.noalias() += sum_pool(s_last.out_hidden, batch.count, batch.k) * last.w;
  pooled.rowwise() += static_cast<T>(batch.k) * last.b;
  Mat<T> head_hidden, head_out;
  mlp(v, layout.head, pooled, head_hidden, head_out);
  const int ch = w.config.channels;
  Mat<T> out = head_out;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (int c = 0; c < ch; ++c) out(i, ch + c) = softplus(head_out(i, ch + c)) + static_cast<T>(kMinScale);
  }
  if (cache != nullptr) {
    cache->pooled = std::move(pooled);
    cache->head_hidden = std::move(head_hidden);
    cache->head_out = std::move(head_out);
    cache->valid = true;
  }
  return out;
}

template <typename T>
Mat<T> forward_batch(const Weights<T>& w, const WindowBatch<T>& batch, ForwardCache<T>* cache) {
  return forward_impl(w, batch, cache, static_cast<const InferenceCache<T>*>(nullptr));
}

template <typename T>
Mat<T> forward_batch(const Weights<T>& w, const WindowBatch<T>& batch, const InferenceCache<T>& cache) {
  return forward_impl(w, batch, static_cast<ForwardCache<T>*>(nullptr), &cache);
}

template <typename T>
InferenceCache<T> make_inference_cache(const Weights<T>& w) {
  const ParameterLayout layout = make_layout(w.config);
  if (w.values.size() != layout.total) throw Error("weights do not match their config");
  InferenceCache<T> cache;
  const int c = w.config.C;
  cache.feat.resize(0, c);
  cache.key.resize(0, c);
  cache.value.resize(0, c);
  for (const UnitSlot& u : layout.units) {
    const LinearView<T> e = view(w.values, u.embed.output);
    const LinearView<T> k = view(w.values, u.key);
    const LinearView<T> val = view(w.values, u.value);
    typename InferenceCache<T>::Folded f;
    f.key_w.noalias() = e.w * k.w;
    f.value_w.noalias() = e.w * val.w;
    f.key_b = e.b * k.w + k.b;
    f.value_b = e.b * val.w + val.b;
    cache.folded.push_back(std::move(f));
  }
  return cache;
}

template <typename T>
void append_points(const Weights<T>& w, const Mat<T>& attrs, InferenceCache<T>& cache) {
  const ParameterLayout layout = make_layout(w.config);
  if (w.values.size() != layout.total) throw Error("weights do not match their config");
  if (cache.folded.size() != layout.units.size()) throw Error("inference cache does not match the weights");
  if (attrs.cols() != 3) throw Error("point attributes must have three columns");
  const auto& v = w.values;
  const UnitSlot& u = layout.units.front();
  Mat<T> feat, hidden, embed, key, value;
  linear(view(v, layout.attr_map), attrs, feat);
  mlp(v, u.embed, feat, hidden, embed);
  linear(view(v, u.key), embed, key);
  linear(view(v, u.value), embed, value);
  auto append = [](Mat<T>& dst, const Mat<T>& rows) {
    const Eigen::Index old = dst.rows();
    dst.conservativeResize(old + rows.rows(), rows.cols());
    dst.bottomRows(rows.rows()) = rows;
  };
  append(cache.feat, feat);
  append(cache.key, key);
  append(cache.value, value);
}

template <typename T>
void backward_batch(const Weights<T>& w, const WindowBatch<T>& batch, const ForwardCache<T>& cache,
                    const Mat<T>& grad_out, std::span<T> grad) {
  if (!cache.valid) throw Error("backward called without a forward cache");
  const ParameterLayout layout = make_layout(w.config);
  if (grad.size() != layout.total) throw Error("gradient buffer does not match the weights");
  const int ch = w.config.channels;
  if (grad_out.rows() != batch.count || grad_out.cols() != 2 * ch) throw Error("grad_out has wrong shape");
  const auto& v = w.values;

  Mat<T> d_head = grad_out;
  for (Eigen::Index i = 0; i < d_head.rows(); ++i) {
    for (int c = 0; c < ch; ++c) d_head(i, ch + c) *= sigmoid(cache.head_out(i, ch + c));
  }
  Mat<T> d_pooled;
  mlp_backward(v, layout.head, cache.pooled, cache.head_hidden, d_head, grad, &d_pooled);

  const Eigen::Index rows = static_cast<Eigen::Index>(batch.count) * batch.k;
  Mat<T> d_feat(rows, d_pooled.cols());
  for (int b = 0; b < batch.count; ++b) {
    for (int r = 0; r < batch.k; ++r) d_feat.row(static_cast<Eigen::Index>(b) * batch.k + r) = d_pooled.row(b);
  }

  for (std::size_t l = layout.units.size(); l-- > 0;) {
    const UnitSlot& u = layout.units[l];
    const UnitCache<T>& s = cache.units[l];
    // feat_out = feat_in + out(gated); d_feat flows to both branches.
    Mat<T> d_gated;
    if (l + 1 < layout.units.size()) {
      mlp_backward(v, u.out, s.gated, s.out_hidden, d_feat, grad, &d_gated);
    } else {
      // Mirror of the pooled output layer in the forward pass.
      const Mat<T> pooled_hidden = sum_pool(s.out_hidden, batch.count, batch.k);
      Mat<T> d_pooled_hidden;
      linear_backward(v, u.out.output, pooled_hidden, d_pooled, grad, &d_pooled_hidden);
      Eigen::Map<RowVec<T>> gb(grad.data() + u.out.output.bias, u.out.output.out);
      gb += static_cast<T>(batch.k - 1) * d_pooled.colwise().sum();
      Mat<T> dh(rows, d_pooled_hidden.cols());
      for (Eigen::Index r = 0; r < rows; ++r) {
        dh.row(r) = (s.out_hidden.row(r).array() > T(0)).select(d_pooled_hidden.row(r / batch.k), T(0));
      }
      linear_backward(v, u.out.hidden, s.gated, dh, grad, &d_gated);
    }
    const Mat<T> value_plus_bias = s.value + s.pb;
    Mat<T> d_score = d_gated.cwiseProduct(value_plus_bias);
    Mat<T> d_value = d_gated.cwiseProduct(s.score);
    Mat<T> d_pb = d_value;

    // Softmax backward per window column: dz = s * (ds - sum(s * ds)).
    Mat<T> d_logit(rows, d_score.cols());
    const int cols = static_cast<int>(d_score.cols());
    for (int b = 0; b < batch.count; ++b) {
      const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(b) * batch.k * cols;
      for (int c = 0; c < cols; ++c) {
        T dot = T(0);
        for (int r = 0; r < batch.k; ++r) dot += s.score.data()[base + r * cols + c] * d_score.data()[base + r * cols + c];
        for (int r = 0; r < batch.k; ++r) {
          const std::ptrdiff_t i = base + r * cols + c;
          d_logit.data()[i] = s.score.data()[i] * (d_score.data()[i] - dot);
        }
      }
    }
    const Mat<T> d_pm = d_logit.cwiseProduct(s.key);
    const Mat<T> d_key = d_logit.cwiseProduct(s.pm);
    d_pb += d_logit;

    mlp_backward<T>(v, u.pos_bias, batch.positions, s.pb_hidden, d_pb, grad, nullptr);
    mlp_backward<T>(v, u.pos_multiplier, batch.positions, s.pm_hidden, d_pm, grad, nullptr);
    Mat<T> d_embed, d_embed_v;
    linear_backward(v, u.key, s.embed, d_key, grad, &d_embed);
    linear_backward(v, u.value, s.embed, d_value, grad, &d_embed_v);
    d_embed += d_embed_v;
    Mat<T> d_input;
    mlp_backward(v, u.embed, s.input, s.embed_hidden, d_embed, grad, &d_input);
    d_feat += d_input;
  }
  linear_backward<T>(v, layout.attr_map, batch.attrs, d_feat, grad, nullptr);
}

template WindowBatch<float> make_batch<float>(std::span<const ContextWindow>);
template WindowBatch<double> make_batch<double>(std::span<const ContextWindow>);
template Mat<float> forward_batch<float>(const Weights<float>&, const WindowBatch<float>&, ForwardCache<float>*);
template Mat<double> forward_batch<double>(const Weights<double>&, const WindowBatch<double>&, ForwardCache<double>*);
template Mat<float> forward_batch<float>(const Weights<float>&, const WindowBatch<float>&, const InferenceCache<float>&);
template Mat<double> forward_batch<double>(const Weights<double>&, const WindowBatch<double>&, const InferenceCache<double>&);
template InferenceCache<float> make_inference_cache<float>(const Weights<float>&);
template InferenceCache<double> make_inference_cache<double>(const Weights<double>&);
template void append_points<float>(const Weights<float>&, const Mat<float>&, InferenceCache<float>&);
template void append_points<double>(const Weights<double>&, const Mat<double>&, InferenceCache<double>&);
template void backward_batch<float>(const Weights<float>&, const WindowBatch<float>&, const ForwardCache<float>&,
                                    const Mat<float>&, std::span<float>);
template void backward_batch<double>(const Weights<double>&, const WindowBatch<double>&, const ForwardCache<double>&,
                                     const Mat<double>&, std::span<double>);

LaplaceParams forward(const ContextWindow& window, const ModelWeights& w) {
  const auto batch = make_batch<float>(std::span<const ContextWindow>(&window, 1));
  const Mat<float> out = forward_batch(w, batch);
  LaplaceParams p;
  p.channels = w.config.channels;
  for (int c = 0; c < p.channels; ++c) {
    p.mu[c] = out(0, c);
    p.b[c] = out(0, p.channels + c);
  }
  return p;
}

std::vector<float> backward(const ContextWindow& window, const ModelWeights& w, std::span<const float> grad_mu,
                            std::span<const float> grad_b) {
  const int ch = w.config.channels;
  if (grad_mu.size() != static_cast<std::size_t>(ch) || grad_b.size() != static_cast<std::size_t>(ch)) {
    throw Error("gradient size must equal the channel count");
  }
  const auto batch = make_batch<float>(std::span<const ContextWindow>(&window, 1));
  ForwardCache<float> cache;
  forward_batch(w, batch, &cache);
  Mat<float> g(1, 2 * ch);
  for (int c = 0; c < ch; ++c) {
    g(0, c) = grad_mu[c];
    g(0, ch + c) = grad_b[c];
  }
  ParamVector<float> grad(w.values.size(), 0.0f);
  backward_batch(w, batch, cache, g, std::span<float>(grad));
  return {grad.begin(), grad.end()};
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::uint8_t> save_weights(const ModelWeights& w) {
  std::vector<std::uint8_t> out = serialize_unhashed(w);
  put_u64(out, fnv1a64(out));
  return out;
}

std::uint64_t weights_hash(const ModelWeights& w) { return fnv1a64(serialize_unhashed(w)); }

ModelWeights load_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) {
    throw WeightsError(WeightsErrorKind::kBadMagic, "missing PLW1 magic");
  }
  if (bytes.size() < kWeightsHeaderSize + 8) throw WeightsError(WeightsErrorKind::kTruncated, "file too short");
  const std::uint8_t* p = bytes.data();
  if (get_u32(p + 4) != kWeightsVersion) throw WeightsError(WeightsErrorKind::kConfigMismatch, "unsupported version");
  NetworkConfig cfg;
  cfg.K = static_cast<int>(get_u32(p + 8));
  cfg.L = static_cast<int>(get_u32(p + 12));
  cfg.C = static_cast<int>(get_u32(p + 16));
  cfg.channels = static_cast<int>(get_u32(p + 20));
  const std::uint32_t flags = get_u32(p + 24);
  cfg.normalization.center = (flags & 1u) != 0;
  cfg.normalization.rescale = (flags & 2u) != 0;
  const std::uint64_t count = get_u64(p + 28);
  if (cfg.K < 1 || cfg.K > 64 || cfg.L < 1 || cfg.L > 1024 || cfg.C < 8 || cfg.C > 8192 ||
      (cfg.channels != 1 && cfg.channels != 3) || flags > 3u) {
    throw WeightsError(WeightsErrorKind::kConfigMismatch, "invalid config block");
  }
  const ParameterLayout layout = make_layout(cfg);
  if (count != layout.total) throw WeightsError(WeightsErrorKind::kConfigMismatch, "parameter count does not match config");
  const std::size_t payload_end = kWeightsHeaderSize + 4 * layout.total;
  if (bytes.size() < payload_end + 8) throw WeightsError(WeightsErrorKind::kTruncated, "payload truncated");
  if (bytes.size() > payload_end + 8) throw WeightsError(WeightsErrorKind::kConfigMismatch, "trailing bytes after hash");
  const std::uint64_t stored = get_u64(p + payload_end);
  if (fnv1a64(bytes.subspan(0, payload_end)) != stored) {
    throw WeightsError(WeightsErrorKind::kHashMismatch, "content hash mismatch");
  }
  ModelWeights w{cfg, ParamVector<float>(layout.total)};
  for (std::size_t i = 0; i < layout.total; ++i) {
    w.values[i] = std::bit_cast<float>(get_u32(p + kWeightsHeaderSize + 4 * i));
  }
  return w;
}

ModelWeights load_weights_file(const std::string& path) { return load_weights(read_file_bytes(path)); }

void save_weights_file(const std::string& path, const ModelWeights& w) { write_file_atomic(path, save_weights(w)); }

}  // namespace plac
