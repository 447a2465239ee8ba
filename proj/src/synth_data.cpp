#include "plac/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "plac/error.hpp"
#include "plac/grouping.hpp"

namespace plac {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
  double x, y, z;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
Vec3 normalized(Vec3 a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

// Box-Muller; std::normal_distribution is not reproducible across standard
// libraries.
double gaussian(SplitMix64& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

Vec3 random_direction(SplitMix64& rng) {
  while (true) {
    const Vec3 v{gaussian(rng), gaussian(rng), gaussian(rng)};
    const double n2 = dot(v, v);
    if (n2 > 1e-12) return (1.0 / std::sqrt(n2)) * v;
  }
}

// Orthonormal frame with `w` as the third axis.
void frame(Vec3 w, Vec3& u, Vec3& v) {
  const Vec3 helper = std::fabs(w.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  u = normalized(cross(w, helper));
  v = cross(w, u);
}

double uniform_in(SplitMix64& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

Position to_position(Vec3 v) { return {v.x, v.y, v.z}; }

std::vector<Position> sample_sphere(std::size_t n, SplitMix64& rng) {
  const double radius = uniform_in(rng, 200.0, 500.0);
  const Vec3 c{uniform_in(rng, radius, 1023.0 - radius), uniform_in(rng, radius, 1023.0 - radius),
               uniform_in(rng, radius, 1023.0 - radius)};
  std::vector<Position> pts(n);
  for (auto& p : pts) p = to_position(c + radius * random_direction(rng));
  return pts;
}

std::vector<Position> sample_torus(std::size_t n, SplitMix64& rng) {
  const double major = uniform_in(rng, 200.0, 350.0);
  const double minor = uniform_in(rng, 50.0, std::min(150.0, 0.6 * major));
  const double extent = major + minor;  // bounding radius
  const Vec3 c{uniform_in(rng, extent, 1023.0 - extent), uniform_in(rng, extent, 1023.0 - extent),
               uniform_in(rng, extent, 1023.0 - extent)};
  const Vec3 axis = random_direction(rng);
  Vec3 u, v;
  frame(axis, u, v);
  std::vector<Position> pts;
  pts.reserve(n);
  while (pts.size() < n) {
    const double a = 2.0 * kPi * rng.uniform();
    const double b = 2.0 * kPi * rng.uniform();
    // Area element is proportional to (major + minor cos b).
    if (rng.uniform() * (major + minor) > major + minor * std::cos(b)) continue;
    const double ring = major + minor * std::cos(b);
    const Vec3 p = c + (ring * std::cos(a)) * u + (ring * std::sin(a)) * v + (minor * std::sin(b)) * axis;
    pts.push_back(to_position(p));
  }
  return pts;
}

std::vector<Position> sample_plane(std::size_t n, SplitMix64& rng) {
  const double half_w = uniform_in(rng, 150.0, 350.0);
  const double half_h = uniform_in(rng, 150.0, 350.0);
  const Vec3 c{511.5, 511.5, 511.5};
  Vec3 u, v;
  frame(random_direction(rng), u, v);
  std::vector<Position> pts(n);
  for (auto& p : pts) {
    const double a = uniform_in(rng, -half_w, half_w);
    const double b = uniform_in(rng, -half_h, half_h);
    p = to_position(c + a * u + b * v);
  }
  return pts;
}

std::vector<Position> sample_box(std::size_t n, SplitMix64& rng) {
  const double lx = uniform_in(rng, 200.0, 900.0);
  const double ly = uniform_in(rng, 200.0, 900.0);
  const double lz = uniform_in(rng, 200.0, 900.0);
  const Vec3 lo{uniform_in(rng, 0.0, 1023.0 - lx), uniform_in(rng, 0.0, 1023.0 - ly), uniform_in(rng, 0.0, 1023.0 - lz)};
  const double areas[3] = {ly * lz, lx * lz, lx * ly};  // faces normal to x, y, z (two each)
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  std::vector<Position> pts(n);
  for (auto& p : pts) {
    double pick = rng.uniform() * total;
    int face = 0;
    while (face < 5 && pick >= areas[face / 2]) {
      pick -= areas[face / 2];
      ++face;
    }
    const int axis = face / 2;
    const bool high = (face % 2) == 1;
    const double s = rng.uniform();
    const double t = rng.uniform();
    Vec3 q{};
    if (axis == 0) q = {lo.x + (high ? lx : 0.0), lo.y + s * ly, lo.z + t * lz};
    if (axis == 1) q = {lo.x + s * lx, lo.y + (high ? ly : 0.0), lo.z + t * lz};
    if (axis == 2) q = {lo.x + s * lx, lo.y + t * ly, lo.z + (high ? lz : 0.0)};
    p = to_position(q);
  }
  return pts;
}

// Smoothstep-interpolated lattice noise with lattice spacing `cell` pixels.
std::vector<double> value_noise_octave(int side, int cell, SplitMix64& rng) {
  const int lattice = side / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(lattice) * lattice);
  for (double& g : grid) g = rng.uniform();
  std::vector<double> out(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    const double fr = static_cast<double>(r) / cell;
    const int r0 = static_cast<int>(fr);
    double tr = fr - r0;
    tr = tr * tr * (3.0 - 2.0 * tr);
    for (int c = 0; c < side; ++c) {
      const double fc = static_cast<double>(c) / cell;
      const int c0 = static_cast<int>(fc);
      double tc = fc - c0;
      tc = tc * tc * (3.0 - 2.0 * tc);
      const double g00 = grid[static_cast<std::size_t>(r0) * lattice + c0];
      const double g01 = grid[static_cast<std::size_t>(r0) * lattice + c0 + 1];
      const double g10 = grid[static_cast<std::size_t>(r0 + 1) * lattice + c0];
      const double g11 = grid[static_cast<std::size_t>(r0 + 1) * lattice + c0 + 1];
      const double top = g00 + (g01 - g00) * tc;
      const double bottom = g10 + (g11 - g10) * tc;
      out[static_cast<std::size_t>(r) * side + c] = top + (bottom - top) * tr;
    }
  }
  return out;
}

std::vector<double> fractal_noise(int side, SplitMix64& rng) {
  std::vector<double> acc(static_cast<std::size_t>(side) * side, 0.0);
  int cell = std::max(side / 2, 2);
  double amplitude = 1.0;
  while (cell >= 2) {
    const auto octave = value_noise_octave(side, cell, rng);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += amplitude * octave[i];
    cell /= 2;
    amplitude *= 0.5;
  }
  return acc;
}

int angle_index(double value, double lo, double hi, int side) {
  if (!(hi > lo)) return 0;
  const double scaled = (value - lo) / (hi - lo) * side;
  const double rounded = std::nearbyint(scaled);  // default rounding mode: ties to even
  return std::clamp(static_cast<int>(rounded), 0, side - 1);
}

}  // namespace

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kTorus: return "torus";
    case ShapeKind::kPlane: return "plane";
    case ShapeKind::kBoxSurface: return "box_surface";
  }
  return "unknown";
}

std::vector<Position> gen_shape(ShapeKind kind, std::size_t n_points, std::uint64_t seed) {
  if (n_points == 0) throw Error("gen_shape: n_points must be >= 1");
  SplitMix64 rng(seed);
  switch (kind) {
    case ShapeKind::kSphere: return sample_sphere(n_points, rng);
    case ShapeKind::kTorus: return sample_torus(n_points, rng);
    case ShapeKind::kPlane: return sample_plane(n_points, rng);
    case ShapeKind::kBoxSurface: return sample_box(n_points, rng);
  }
  throw Error("gen_shape: unknown shape");
}

RgbImage gen_image(int side, std::uint64_t seed) {
  if (side < 1) throw Error("gen_image: side must be >= 1");
  SplitMix64 rng(seed);
  const auto luma = fractal_noise(side, rng);
  const auto chroma_a = fractal_noise(side, rng);
  const auto chroma_b = fractal_noise(side, rng);
  // Luma-dominated mix keeps the channels correlated like natural images.
  std::array<std::vector<double>, 3> mixed;
  for (auto& m : mixed) m.resize(luma.size());
  for (std::size_t i = 0; i < luma.size(); ++i) {
    mixed[0][i] = luma[i] + 0.4 * chroma_a[i];
    mixed[1][i] = luma[i] + 0.2 * chroma_b[i];
    mixed[2][i] = luma[i] - 0.3 * chroma_a[i] + 0.3 * chroma_b[i];
  }
  RgbImage img;
  img.side = side;
  img.pixels.resize(luma.size());
  for (int c = 0; c < 3; ++c) {
    const auto [lo_it, hi_it] = std::minmax_element(mixed[c].begin(), mixed[c].end());
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    for (std::size_t i = 0; i < luma.size(); ++i) {
      const double t = span > 0.0 ? (mixed[c][i] - lo) / span : 0.0;
      img.pixels[i][c] = static_cast<std::uint8_t>(std::clamp(std::lround(t * 255.0), 0L, 255L));
    }
  }
  return img;
}

PolarCoord to_polar(const Position& p, const Position& origin) {
  const double x = p[0] - origin[0];
  const double y = p[1] - origin[1];
  const double z = p[2] - origin[2];
  const double r = std::sqrt(x * x + y * y + z * z);
  if (r == 0.0) throw Error("to_polar: point coincides with the origin");
  const double cos_theta = std::clamp(z / r, -1.0, 1.0);
  return {r, std::acos(cos_theta), std::atan2(y, x)};
}

void ColorizeConfig::validate() const {
  if (side < 128 || side > 512) throw Error("colorize: side must be in [128, 512]");
  for (double v : origin) {
    if (std::fabs(v) != 1024.0) throw Error("colorize: origin must be a (+-1024)^3 corner");
  }
  if (image.side != side || image.pixels.size() != static_cast<std::size_t>(side) * side) {
    throw Error("colorize: image does not match side length");
  }
}

PointCloud polar_colorize(std::span<const Position> points, const ColorizeConfig& cfg) {
  cfg.validate();
  if (points.empty()) throw Error("polar_colorize: no points");
  std::vector<PolarCoord> polar(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) polar[i] = to_polar(points[i], cfg.origin);
  double t_lo = polar[0].theta, t_hi = polar[0].theta, p_lo = polar[0].phi, p_hi = polar[0].phi;
  for (const PolarCoord& pc : polar) {
    t_lo = std::min(t_lo, pc.theta);
    t_hi = std::max(t_hi, pc.theta);
    p_lo = std::min(p_lo, pc.phi);
    p_hi = std::max(p_hi, pc.phi);
  }
  PointCloud cloud;
  cloud.channel_mode = ChannelMode::kColor3;
  cloud.domain = ColorDomain::kRGB;
  cloud.positions.assign(points.begin(), points.end());
  cloud.attributes.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int w = angle_index(polar[i].theta, t_lo, t_hi, cfg.side);
    const int h = angle_index(polar[i].phi, p_lo, p_hi, cfg.side);
    const auto& px = cfg.image.at(w, h);
    cloud.attributes[i] = {px[0], px[1], px[2]};
  }
  return cloud;
}

PointCloud gen_cloud(std::size_t n_points, std::uint64_t seed, SynthCloudInfo* info) {
  SplitMix64 rng(seed);
  SynthCloudInfo meta;
  meta.shape = static_cast<ShapeKind>(rng.below(4));
  meta.shape_seed = rng();
  meta.image_seed = rng();
  meta.side = 128 + static_cast<int>(rng.below(512 - 128 + 1));
  const std::uint64_t corner = rng.below(8);
  for (int c = 0; c < 3; ++c) meta.origin[c] = ((corner >> c) & 1u) ? 1024.0 : -1024.0;

  ColorizeConfig cfg;
  cfg.side = meta.side;
  cfg.origin = meta.origin;
  cfg.image = gen_image(meta.side, meta.image_seed);
  const auto positions = gen_shape(meta.shape, n_points, meta.shape_seed);
  if (info != nullptr) *info = meta;
  return polar_colorize(positions, cfg);
}

std::vector<std::uint64_t> dataset_seeds(std::size_t count, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::uint64_t> seeds(count);
  for (auto& s : seeds) s = rng();
  return seeds;
}

void write_dataset(const std::string& dir, std::size_t count, std::size_t n_points, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot create directory '" + dir + "'");
  std::string manifest = "filename,shape,L,origin_x,origin_y,origin_z,cloud_seed,shape_seed,image_seed\n";
  const auto seeds = dataset_seeds(count, seed);
  for (std::size_t i = 0; i < count; ++i) {
    SynthCloudInfo info;
    const PointCloud cloud = gen_cloud(n_points, seeds[i], &info);
    char name[32];
    std::snprintf(name, sizeof(name), "cloud_%05zu.ply", i);
    write_ply_file((std::filesystem::path(dir) / name).string(), cloud, PlyFormat::kBinaryLittleEndian);
    manifest += std::string(name) + "," + shape_name(info.shape) + "," + std::to_string(info.side) + "," +
                std::to_string(static_cast<int>(info.origin[0])) + "," + std::to_string(static_cast<int>(info.origin[1])) +
                "," + std::to_string(static_cast<int>(info.origin[2])) + "," + std::to_string(seeds[i]) + "," +
                std::to_string(info.shape_seed) + "," + std::to_string(info.image_seed) + "\n";
  }
  const std::vector<std::uint8_t> bytes(manifest.begin(), manifest.end());
  write_file_atomic((std::filesystem::path(dir) / "manifest.csv").string(), bytes);
}

}  // namespace plac
