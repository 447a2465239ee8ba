#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plac/cloud_io.hpp"

namespace plac {

enum class ShapeKind : std::uint8_t { kSphere = 0, kTorus = 1, kPlane = 2, kBoxSurface = 3 };

const char* shape_name(ShapeKind kind);

// Uniform surface samples of a randomly parameterized shape inside [0, 1023]^3.
std::vector<Position> gen_shape(ShapeKind kind, std::size_t n_points, std::uint64_t seed);

struct RgbImage {
  int side = 0;
  std::vector<std::array<std::uint8_t, 3>> pixels;  // row-major, side * side

  const std::array<std::uint8_t, 3>& at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * side + col];
  }
};

// Multi-octave value noise, each output channel stretched to [0, 255].
RgbImage gen_image(int side, std::uint64_t seed);

struct PolarCoord {
  double r;
  double theta;  // from the +z axis, [0, pi]
  double phi;    // atan2(y, x), (-pi, pi]
};

PolarCoord to_polar(const Position& p, const Position& origin);

struct ColorizeConfig {
  int side = 128;
  Position origin{-1024.0, -1024.0, -1024.0};
  RgbImage image;

  void validate() const;
};

// Maps (theta, phi) of every point onto the image: index =
// round_half_even((angle - min) / (max - min) * side) clamped to side - 1;
// a constant angle maps to index 0.
PointCloud polar_colorize(std::span<const Position> points, const ColorizeConfig& cfg);

struct SynthCloudInfo {
  ShapeKind shape = ShapeKind::kSphere;
  int side = 128;
  Position origin{};
  std::uint64_t shape_seed = 0;
  std::uint64_t image_seed = 0;
};

// One colorized cloud; every random choice is drawn from `seed`.
PointCloud gen_cloud(std::size_t n_points, std::uint64_t seed, SynthCloudInfo* info = nullptr);

// Per-cloud seeds for a dataset are drawn from a generator seeded by `seed`.
std::vector<std::uint64_t> dataset_seeds(std::size_t count, std::uint64_t seed);

// Writes cloud_XXXXX.ply files and manifest.csv into `dir` (created if needed).
void write_dataset(const std::string& dir, std::size_t count, std::size_t n_points, std::uint64_t seed);

}  // namespace plac
