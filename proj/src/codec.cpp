#include "plac/codec.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <optional>
#include <thread>

#include "plac/context.hpp"
#include "plac/entropy.hpp"
#include "plac/error.hpp"

namespace plac {

namespace {

constexpr char kStreamMagic[4] = {'P', 'L', 'C', '1'};

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T get() {
    if (in_.size() - pos_ < sizeof(T)) throw StreamError(StreamErrorKind::kTruncated, "header truncated");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// Points rearranged into coding order with network-domain attributes.
struct CodingState {
  GroupPlan plan;
  std::vector<Position> positions;
  std::vector<Attribute> net_attrs;
  std::optional<InferenceCache<float>> features;  // first-unit rows for points [0, points())
};

// Brings the cached first-unit rows up to `end` points. Encoder and decoder
// extend at the same group boundaries, so both see identical values.
void extend_features(CodingState& st, const ModelWeights& w, std::size_t end) {
  if (!st.features) st.features = make_inference_cache(w);
  const std::size_t begin = st.features->points();
  if (end <= begin) return;
  Mat<float> attrs(static_cast<Eigen::Index>(end - begin), 3);
  for (std::size_t n = begin; n < end; ++n) {
    for (int c = 0; c < 3; ++c) {
      attrs(static_cast<Eigen::Index>(n - begin), c) = static_cast<float>(static_cast<double>(st.net_attrs[n][c]) / 255.0);
    }
  }
  append_points(w, attrs, *st.features);
}

SymbolAlphabet channel_alphabet(ChannelMode mode, int c) {
  if (mode == ChannelMode::kColor3 && c > 0) return kChromaAlphabet;
  return kLumaAlphabet;
}

// Laplace parameters for every point of group `g`, from antecedents
// [0, offsets[g]). Chunking is fixed by batch_windows, so results do not
// depend on the thread count.
std::vector<LaplaceParams> predict_group(CodingState& st, std::size_t g, const ModelWeights& w, int k,
                                         int threads, int batch_windows) {
  const std::size_t begin = st.plan.offsets[g];
  extend_features(st, w, begin);
  const std::size_t count = st.plan.sizes[g];
  const std::span<const Position> antecedents(st.positions.data(), begin);
  const KdTree tree(antecedents);
  const WindowOptions opts = w.config.normalization;
  const std::size_t chunk = static_cast<std::size_t>(std::max(batch_windows, 1));
  const std::size_t n_chunks = (count + chunk - 1) / chunk;
  std::vector<LaplaceParams> params(count);

  auto run_chunk = [&](std::size_t c, std::vector<Neighbor>& heap) {
    const std::size_t lo = c * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    std::vector<ContextWindow> windows;
    windows.reserve(hi - lo);
    std::vector<std::uint32_t> ids;
    for (std::size_t j = lo; j < hi; ++j) {
      const Position& q = st.positions[begin + j];
      tree.knn(q, k, heap);
      ids.resize(heap.size());
      for (std::size_t m = 0; m < heap.size(); ++m) ids[m] = heap[m].id;
      windows.push_back(make_window(q, antecedents, st.net_attrs, ids, opts));
    }
    const auto batch = make_batch<float>(windows);
    const Mat<float> out = forward_batch(w, batch, *st.features);
    const int ch = w.config.channels;
    for (std::size_t j = lo; j < hi; ++j) {
      LaplaceParams& p = params[j];
      p.channels = ch;
      for (int cc = 0; cc < ch; ++cc) {
        p.mu[cc] = out(static_cast<Eigen::Index>(j - lo), cc);
        p.b[cc] = out(static_cast<Eigen::Index>(j - lo), ch + cc);
      }
    }
  };

  const int workers = static_cast<int>(std::min<std::size_t>(std::max(threads, 1), n_chunks));
  if (workers <= 1) {
    std::vector<Neighbor> heap;
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c, heap);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          std::vector<Neighbor> heap;
          for (std::size_t c = t; c < n_chunks; c += workers) run_chunk(c, heap);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return params;
}

QuantizedCdf table_for(const LaplaceParams& p, int c, SymbolAlphabet alphabet) {
  return quantize_cdf(p.mu[c] * 255.0f, p.b[c] * 255.0f, alphabet);
}

void check_compat(const PointCloud& cloud, const ModelWeights& w, const CodecConfig& cfg) {
  cloud.validate();
  cfg.grouping.validate();
  make_layout(w.config);
  if (w.values.size() != make_layout(w.config).total) throw Error("weights do not match their config");
  if (cfg.K != w.config.K) {
    throw Error("codec K=" + std::to_string(cfg.K) + " does not match weights K=" + std::to_string(w.config.K));
  }
  if (cloud.channel_mode == ChannelMode::kColor3 && w.config.channels != 3) {
    throw Error("color clouds need a three-channel model");
  }
  if (cfg.grouping.ratio > 255 || cfg.grouping.alpha > 65535) throw Error("grouping parameters exceed stream field widths");
  if (cloud.size() > 0xFFFFFFFFull) throw Error("too many points");
}

CodingState prepare(const PointCloud& cloud, const GroupingConfig& grouping) {
  CodingState st;
  st.plan = make_plan(cloud.size(), grouping);
  const PointCloud net = to_ycocgr(cloud);
  st.positions.resize(cloud.size());
  st.net_attrs.resize(cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const std::uint32_t src = st.plan.permutation[n];
    st.positions[n] = cloud.positions[src];
    st.net_attrs[n] = network_attribute(net.attributes[src], cloud.channel_mode);
  }
  return st;
}

// Runs the shared modelling loop; `sink` is called once per coded symbol.
template <typename Sink>
EncodeReport model_cloud(const PointCloud& cloud, const ModelWeights& w, const CodecConfig& cfg, CodingState& st,
                         Sink&& sink) {
  const int channels = channel_count(cloud.channel_mode);
  EncodeReport report;
  report.n_points = cloud.size();
  report.groups.resize(st.plan.group_count());
  report.groups[0] = {st.plan.sizes[0], 8.0 * channels * st.plan.sizes[0]};
  report.model_bits = report.groups[0].bits;
  for (std::size_t g = 1; g < st.plan.group_count(); ++g) {
    const auto params = predict_group(st, g, w, cfg.K, cfg.threads, cfg.batch_windows);
    GroupStats& gs = report.groups[g];
    gs.size = st.plan.sizes[g];
    for (std::size_t j = 0; j < params.size(); ++j) {
      const Attribute& a = st.net_attrs[st.plan.offsets[g] + j];
      for (int c = 0; c < channels; ++c) {
        const QuantizedCdf cdf = table_for(params[j], c, channel_alphabet(cloud.channel_mode, c));
        gs.bits += cdf.bits(a[c]);
        sink(a[c], cdf);
      }
    }
    report.model_bits += gs.bits;
  }
  return report;
}

std::vector<std::uint8_t> encode_group1(const PointCloud& rgb, const CodingState& st) {
  const int channels = channel_count(rgb.channel_mode);
  std::vector<std::uint32_t> values;
  values.reserve(static_cast<std::size_t>(st.plan.sizes[0]) * channels);
  for (std::uint32_t n = 0; n < st.plan.sizes[0]; ++n) {
    const Attribute& a = rgb.attributes[st.plan.permutation[n]];
    for (int c = 0; c < channels; ++c) values.push_back(static_cast<std::uint32_t>(a[c]));
  }
  return uniform_encode(values, 8);
}

}  // namespace

std::vector<std::uint8_t> serialize_header(const StreamHeader& h) {
  std::vector<std::uint8_t> out(kStreamMagic, kStreamMagic + 4);
  ByteWriter bw(out);
  bw.put<std::uint8_t>(h.version);
  bw.put<std::uint8_t>(static_cast<std::uint8_t>(h.channel_mode));
  bw.put<std::uint32_t>(h.n_points);
  bw.put<std::uint64_t>(h.seed);
  bw.put<std::uint8_t>(h.k);
  bw.put<std::uint8_t>(h.ratio);
  bw.put<std::uint16_t>(h.alpha);
  bw.put<std::uint32_t>(h.s_star);
  bw.put<std::uint64_t>(h.weights_hash);
  bw.put<std::uint32_t>(h.group1_bytes);
  bw.put<std::uint8_t>(h.has_geometry_checksum ? 1 : 0);
  if (h.has_geometry_checksum) bw.put<std::uint64_t>(h.geometry_checksum);
  return out;
}

StreamHeader parse_header(std::span<const std::uint8_t> stream) {
  if (stream.size() < 4 || std::memcmp(stream.data(), kStreamMagic, 4) != 0) {
    throw StreamError(StreamErrorKind::kBadMagic, "missing PLC1 magic");
  }
  ByteReader br(stream.subspan(4));
  StreamHeader h;
  h.version = br.get<std::uint8_t>();
  if (h.version != kStreamVersion) throw StreamError(StreamErrorKind::kBadVersion, "unsupported stream version " + std::to_string(h.version));
  const auto mode = br.get<std::uint8_t>();
  if (mode > 1) throw StreamError(StreamErrorKind::kCorrupt, "invalid channel mode");
  h.channel_mode = static_cast<ChannelMode>(mode);
  h.n_points = br.get<std::uint32_t>();
  h.seed = br.get<std::uint64_t>();
  h.k = br.get<std::uint8_t>();
  h.ratio = br.get<std::uint8_t>();
  h.alpha = br.get<std::uint16_t>();
  h.s_star = br.get<std::uint32_t>();
  h.weights_hash = br.get<std::uint64_t>();
  h.group1_bytes = br.get<std::uint32_t>();
  const auto flags = br.get<std::uint8_t>();
  if (flags > 1) throw StreamError(StreamErrorKind::kCorrupt, "unknown header flags");
  h.has_geometry_checksum = flags == 1;
  if (h.has_geometry_checksum) h.geometry_checksum = br.get<std::uint64_t>();
  if (h.n_points == 0) throw StreamError(StreamErrorKind::kCorrupt, "stream declares zero points");
  if (h.k < 1 || h.k > 64 || h.ratio < 2 || h.alpha < 1 || h.s_star < 1) {
    throw StreamError(StreamErrorKind::kCorrupt, "invalid coding parameters in header");
  }
  return h;
}

std::uint64_t geometry_checksum(std::span<const Position> positions) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Position& p : positions) {
    for (double v : p) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= static_cast<std::uint8_t>(bits >> (8 * i));
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

std::vector<std::uint8_t> encode(const PointCloud& cloud, const ModelWeights& w, const CodecConfig& cfg,
                                 EncodeReport* report) {
  check_compat(cloud, w, cfg);
  const PointCloud rgb = to_rgb(cloud);
  CodingState st = prepare(rgb, cfg.grouping);

  RangeEncoder enc;
  EncodeReport rep = model_cloud(rgb, w, cfg, st, [&](int symbol, const QuantizedCdf& cdf) { enc.encode(symbol, cdf); });
  const std::vector<std::uint8_t> group1 = encode_group1(rgb, st);
  const std::vector<std::uint8_t> payload = st.plan.group_count() > 1 ? enc.finish() : std::vector<std::uint8_t>{};

  StreamHeader h;
  h.channel_mode = rgb.channel_mode;
  h.n_points = static_cast<std::uint32_t>(rgb.size());
  h.seed = cfg.grouping.seed;
  h.k = static_cast<std::uint8_t>(cfg.K);
  h.ratio = static_cast<std::uint8_t>(cfg.grouping.ratio);
  h.alpha = static_cast<std::uint16_t>(cfg.grouping.alpha);
  h.s_star = cfg.grouping.s_star;
  h.weights_hash = weights_hash(w);
  h.group1_bytes = static_cast<std::uint32_t>(group1.size());
  h.has_geometry_checksum = cfg.geometry_checksum;
  if (cfg.geometry_checksum) h.geometry_checksum = plac::geometry_checksum(rgb.positions);

  std::vector<std::uint8_t> stream = serialize_header(h);
  stream.insert(stream.end(), group1.begin(), group1.end());
  stream.insert(stream.end(), payload.begin(), payload.end());
  const std::uint64_t sum = fnv1a64(stream);
  ByteWriter(stream).put<std::uint64_t>(sum);

  if (report != nullptr) {
    rep.stream_bytes = stream.size();
    rep.header_bytes = h.encoded_size();
    rep.payload_bytes = group1.size() + payload.size();
    *report = std::move(rep);
  }
  return stream;
}

EncodeReport estimate_bpp(const PointCloud& cloud, const ModelWeights& w, const CodecConfig& cfg) {
  check_compat(cloud, w, cfg);
  const PointCloud rgb = to_rgb(cloud);
  CodingState st = prepare(rgb, cfg.grouping);
  return model_cloud(rgb, w, cfg, st, [](int, const QuantizedCdf&) {});
}

std::span<const std::uint8_t> stream_payload(std::span<const std::uint8_t> stream) {
  const StreamHeader h = parse_header(stream);
  const std::size_t head = h.encoded_size();
  if (stream.size() < head + kStreamTrailerSize) throw StreamError(StreamErrorKind::kTruncated, "stream truncated");
  return stream.subspan(head, stream.size() - head - kStreamTrailerSize);
}

PointCloud decode(std::span<const std::uint8_t> stream, std::span<const Position> geometry, const ModelWeights& w,
                  const DecodeOptions& options) {
  const StreamHeader h = parse_header(stream);
  const std::size_t head = h.encoded_size();
  if (stream.size() < head + kStreamTrailerSize) throw StreamError(StreamErrorKind::kTruncated, "stream truncated");
  if (options.verify_checksum) {
    const std::size_t body = stream.size() - kStreamTrailerSize;
    ByteReader tr(stream.subspan(body));
    if (tr.get<std::uint64_t>() != fnv1a64(stream.subspan(0, body))) {
      throw StreamError(StreamErrorKind::kCorrupt, "stream checksum mismatch");
    }
  }
  if (h.weights_hash != weights_hash(w)) throw StreamError(StreamErrorKind::kWeightsMismatch, "stream was coded with different weights");
  if (geometry.size() != h.n_points) {
    throw StreamError(StreamErrorKind::kGeometryMismatch, "geometry has " + std::to_string(geometry.size()) +
                                                              " points, stream expects " + std::to_string(h.n_points));
  }
  if (h.has_geometry_checksum && plac::geometry_checksum(geometry) != h.geometry_checksum) {
    throw StreamError(StreamErrorKind::kGeometryMismatch, "geometry checksum mismatch (point order or values differ)");
  }
  if (h.k != w.config.K) throw StreamError(StreamErrorKind::kWeightsMismatch, "stream K does not match weights");
  if (h.channel_mode == ChannelMode::kColor3 && w.config.channels != 3) {
    throw StreamError(StreamErrorKind::kWeightsMismatch, "color stream needs a three-channel model");
  }
  for (const Position& p : geometry) {
    for (double v : p) {
      if (!std::isfinite(v)) throw StreamError(StreamErrorKind::kInvalidInput, "non-finite geometry");
    }
  }

  const int channels = channel_count(h.channel_mode);
  CodecConfig cfg;
  cfg.grouping = h.grouping();
  cfg.K = h.k;
  cfg.threads = options.threads;
  cfg.batch_windows = options.batch_windows;

  CodingState st;
  st.plan = make_plan(h.n_points, cfg.grouping);
  const std::size_t g1_bytes = (static_cast<std::size_t>(st.plan.sizes[0]) * channels * 8 + 7) / 8;
  if (h.group1_bytes != g1_bytes) throw StreamError(StreamErrorKind::kCorrupt, "group-1 length disagrees with header");
  const std::size_t body_end = stream.size() - kStreamTrailerSize;
  if (body_end - head < g1_bytes) throw StreamError(StreamErrorKind::kTruncated, "group-1 payload truncated");

  st.positions.resize(h.n_points);
  st.net_attrs.assign(h.n_points, Attribute{0, 0, 0});
  for (std::size_t n = 0; n < h.n_points; ++n) st.positions[n] = geometry[st.plan.permutation[n]];

  std::vector<Attribute> coded(h.n_points, Attribute{0, 0, 0});  // coding order, RGB / reflectance
  const auto g1 = uniform_decode(stream.subspan(head, g1_bytes), 8, static_cast<std::size_t>(st.plan.sizes[0]) * channels);
  for (std::uint32_t n = 0; n < st.plan.sizes[0]; ++n) {
    for (int c = 0; c < channels; ++c) coded[n][c] = static_cast<std::int16_t>(g1[static_cast<std::size_t>(n) * channels + c]);
    const Attribute net = h.channel_mode == ChannelMode::kColor3 ? rgb_to_ycocgr(coded[n]) : coded[n];
    st.net_attrs[n] = network_attribute(net, h.channel_mode);
  }

  const auto payload = stream.subspan(head + g1_bytes, body_end - head - g1_bytes);
  if (st.plan.group_count() > 1) {
    RangeDecoder dec(payload);
    for (std::size_t g = 1; g < st.plan.group_count(); ++g) {
      const auto params = predict_group(st, g, w, cfg.K, cfg.threads, cfg.batch_windows);
      for (std::size_t j = 0; j < params.size(); ++j) {
        const std::size_t n = st.plan.offsets[g] + j;
        Attribute net{0, 0, 0};
        for (int c = 0; c < channels; ++c) {
          const QuantizedCdf cdf = table_for(params[j], c, channel_alphabet(h.channel_mode, c));
          net[c] = static_cast<std::int16_t>(dec.decode(cdf));
        }
        if (h.channel_mode == ChannelMode::kColor3) {
          try {
            coded[n] = ycocgr_to_rgb(net);
          } catch (const StreamError&) {
            throw;
          } catch (const Error&) {
            throw StreamError(StreamErrorKind::kCorrupt, "decoded color outside the RGB cube");
          }
        } else {
          coded[n] = net;
        }
        st.net_attrs[n] = network_attribute(net, h.channel_mode);
      }
    }
    if (dec.bytes_consumed() != payload.size()) throw StreamError(StreamErrorKind::kCorrupt, "trailing bytes in payload");
  } else if (!payload.empty()) {
    throw StreamError(StreamErrorKind::kCorrupt, "unexpected payload after group 1");
  }

  PointCloud out;
  out.channel_mode = h.channel_mode;
  out.domain = ColorDomain::kRGB;
  out.positions.assign(geometry.begin(), geometry.end());
  out.attributes.resize(h.n_points);
  for (std::size_t n = 0; n < h.n_points; ++n) out.attributes[st.plan.permutation[n]] = coded[n];
  return out;
}

}  // namespace plac
