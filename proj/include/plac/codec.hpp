#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "plac/cloud_io.hpp"
#include "plac/grouping.hpp"
#include "plac/qma_net.hpp"

namespace plac {

struct CodecConfig {
  GroupingConfig grouping{};
  int K = 8;
  int threads = 1;
  bool geometry_checksum = false;
  // Windows per network call. Part of the arithmetic contract: encoder and
  // decoder must use the same value for bit-identical tables.
  int batch_windows = 32;
};

inline constexpr std::uint8_t kStreamVersion = 1;

// Little-endian, in this order: magic "PLC1", version u8, channel_mode u8,
// N u32, seed u64, K u8, r u8, alpha u16, s_star u32, weights_hash u64,
// group1_len_bytes u32, flags u8, [geometry checksum u64 when flags bit 0].
// The stream is header | group-1 bits | range-coded payload | FNV-1a u64 of
// everything before it.
struct StreamHeader {
  std::uint8_t version = kStreamVersion;
  ChannelMode channel_mode = ChannelMode::kColor3;
  std::uint32_t n_points = 0;
  std::uint64_t seed = 0;
  std::uint8_t k = 8;
  std::uint8_t ratio = 2;
  std::uint16_t alpha = 128;
  std::uint32_t s_star = 1u << 14;
  std::uint64_t weights_hash = 0;
  std::uint32_t group1_bytes = 0;
  bool has_geometry_checksum = false;
  std::uint64_t geometry_checksum = 0;

  std::size_t encoded_size() const { return has_geometry_checksum ? 47 : 39; }
  GroupingConfig grouping() const { return {ratio, alpha, s_star, seed}; }
};

inline constexpr std::size_t kStreamTrailerSize = 8;

std::vector<std::uint8_t> serialize_header(const StreamHeader& h);
StreamHeader parse_header(std::span<const std::uint8_t> stream);

std::uint64_t geometry_checksum(std::span<const Position> positions);

struct GroupStats {
  std::uint32_t size = 0;
  double bits = 0.0;
  double bpp() const { return size == 0 ? 0.0 : bits / size; }
};

struct EncodeReport {
  std::size_t n_points = 0;
  std::vector<GroupStats> groups;
  double model_bits = 0.0;  // group-1 bits plus sum of -log2 p_quantized
  std::size_t stream_bytes = 0;
  std::size_t header_bytes = 0;
  std::size_t payload_bytes = 0;  // group-1 plus range-coded bytes

  double estimated_bpp() const { return n_points == 0 ? 0.0 : model_bits / n_points; }
  double actual_bpp() const { return n_points == 0 ? 0.0 : 8.0 * stream_bytes / n_points; }
};

// Color clouds may be given in either domain; group 1 is always coded as RGB.
std::vector<std::uint8_t> encode(const PointCloud& cloud, const ModelWeights& w, const CodecConfig& cfg,
                                 EncodeReport* report = nullptr);

struct DecodeOptions {
  int threads = 1;
  int batch_windows = 32;
  bool verify_checksum = true;
};

// Geometry must match the encoder's positions bit for bit and in order.
// Returns an RGB (or reflectance) cloud in the original point order.
PointCloud decode(std::span<const std::uint8_t> stream, std::span<const Position> geometry, const ModelWeights& w,
                  const DecodeOptions& options = {});

// Model cost without producing a stream; identical tables to encode().
EncodeReport estimate_bpp(const PointCloud& cloud, const ModelWeights& w, const CodecConfig& cfg);

// group 1 + range payload of a stream (header and trailer stripped).
std::span<const std::uint8_t> stream_payload(std::span<const std::uint8_t> stream);

}  // namespace plac
