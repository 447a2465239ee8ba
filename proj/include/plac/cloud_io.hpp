#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace plac {

using Position = std::array<double, 3>;

// Up to three channels; reflectance clouds use only element 0.
using Attribute = std::array<std::int16_t, 3>;

enum class ChannelMode : std::uint8_t { kColor3 = 0, kReflectance1 = 1 };
enum class ColorDomain : std::uint8_t { kRGB = 0, kYCoCgR = 1 };

inline int channel_count(ChannelMode mode) {
  return mode == ChannelMode::kColor3 ? 3 : 1;
}

struct PointCloud {
  std::vector<Position> positions;
  std::vector<Attribute> attributes;
  ChannelMode channel_mode = ChannelMode::kColor3;
  ColorDomain domain = ColorDomain::kRGB;

  std::size_t size() const { return positions.size(); }

  // Throws plac::Error when the cloud breaks its invariants (sizes, N >= 1,
  // per-domain value ranges).
  void validate() const;

  bool operator==(const PointCloud&) const = default;
};

enum class PlyFormat { kAscii, kBinaryLittleEndian };

// Reads the vertex element of an ASCII or binary little-endian PLY file.
// Accepts x,y,z (float or double) plus either red,green,blue (uchar) or a
// single scalar attribute. Throws PlyError carrying the byte offset.
PointCloud parse_ply(std::span<const std::uint8_t> bytes);

// Positions are written as doubles so a parse of the output is bit-exact.
// YCoCg-R clouds are converted back to RGB on the way out.
std::vector<std::uint8_t> write_ply(const PointCloud& cloud, PlyFormat format);

PointCloud read_ply_file(const std::string& path);
void write_ply_file(const std::string& path, const PointCloud& cloud,
                    PlyFormat format);

// Reversible integer color transform. Right shifts on negative values are
// floor divisions by two.
Attribute rgb_to_ycocgr(const Attribute& rgb);
Attribute ycocgr_to_rgb(const Attribute& ycc);

// Whole-cloud conversions; no-ops for reflectance clouds or when the cloud is
// already in the requested domain.
PointCloud to_ycocgr(PointCloud cloud);
PointCloud to_rgb(PointCloud cloud);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
// Writes to "<path>.tmp" and renames, so a failure leaves no partial file.
void write_file_atomic(const std::string& path,
                       std::span<const std::uint8_t> bytes);

}  // namespace plac
