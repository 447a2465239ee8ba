#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <numbers>

#include "plac/error.hpp"
#include "plac/synth_data.hpp"
#include "test_util.hpp"

using namespace plac;

namespace {

RgbImage ramp_image(int side) {
  RgbImage img;
  img.side = side;
  img.pixels.resize(static_cast<std::size_t>(side) * side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      img.pixels[static_cast<std::size_t>(r) * side + c] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(c), 7};
    }
  }
  return img;
}

}  // namespace

TEST_CASE("sphere samples lie on one sphere") {
  const auto pts = gen_shape(ShapeKind::kSphere, 3000, 5);
  // Linear least squares: |p|^2 = 2 c.p + (r^2 - |c|^2).
  Eigen::MatrixXd a(pts.size(), 4);
  Eigen::VectorXd rhs(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    a.row(i) << 2 * pts[i][0], 2 * pts[i][1], 2 * pts[i][2], 1.0;
    rhs(i) = pts[i][0] * pts[i][0] + pts[i][1] * pts[i][1] + pts[i][2] * pts[i][2];
  }
  const Eigen::Vector4d sol = a.colPivHouseholderQr().solve(rhs);
  const Eigen::Vector3d c = sol.head<3>();
  const double r = std::sqrt(sol(3) + c.squaredNorm());
  CHECK(r >= 200.0);
  CHECK(r <= 500.0);
  for (const Position& p : pts) REQUIRE(std::fabs((Eigen::Vector3d(p[0], p[1], p[2]) - c).norm() - r) <= 1e-9 * r);
}

TEST_CASE("every shape stays inside the cube and is deterministic") {
  for (ShapeKind k : {ShapeKind::kSphere, ShapeKind::kTorus, ShapeKind::kPlane, ShapeKind::kBoxSurface}) {
    CAPTURE(shape_name(k));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto pts = gen_shape(k, 500, seed);
      REQUIRE(pts.size() == 500);
      for (const Position& p : pts) {
        for (double v : p) REQUIRE((v >= 0.0 && v <= 1023.0));
      }
      CHECK(gen_shape(k, 500, seed) == pts);
    }
  }
}

TEST_CASE("polar coordinates") {
  const Position o{1.0, 2.0, 3.0};
  const PolarCoord up = to_polar({1.0, 2.0, 8.0}, o);
  CHECK(up.r == doctest::Approx(5.0));
  CHECK(up.theta == doctest::Approx(0.0));
  const PolarCoord side = to_polar({1.0, 5.0, 3.0}, o);
  CHECK(side.theta == doctest::Approx(std::numbers::pi / 2));
  CHECK(side.phi == doctest::Approx(std::numbers::pi / 2));
  const PolarCoord down = to_polar({0.0, 2.0, 2.0}, o);
  CHECK(down.theta == doctest::Approx(3 * std::numbers::pi / 4));
  CHECK(down.phi == doctest::Approx(std::numbers::pi));
  CHECK_THROWS_AS(to_polar(o, o), Error);
}

TEST_CASE("colorize indexes the image by rounded, clamped angles") {
  ColorizeConfig cfg;
  cfg.side = 128;
  cfg.origin = {-1024.0, -1024.0, -1024.0};
  cfg.image = ramp_image(128);
  // Three points on a circle around the origin, level with it: theta is
  // constant and phi spans [0, pi/2].
  std::vector<Position> pts{{512.0, 0.0, 0.0}, {512.0 * std::cos(0.25), 512.0 * std::sin(0.25), 0.0}, {0.0, 512.0, 0.0}};
  for (auto& p : pts) {
    for (double& v : p) v -= 1024.0;
  }
  const PointCloud c = polar_colorize(pts, cfg);
  for (const auto& a : c.attributes) CHECK(a[0] == 0);  // degenerate theta range
  CHECK(c.attributes[0][1] == 0);
  CHECK(c.attributes[2][1] == 127);  // 128 clamps to side - 1
  const PolarCoord mid = to_polar(pts[1], cfg.origin);
  const double t = (mid.phi - to_polar(pts[0], cfg.origin).phi) / (to_polar(pts[2], cfg.origin).phi - to_polar(pts[0], cfg.origin).phi) * 128.0;
  CHECK(c.attributes[1][1] == static_cast<int>(std::nearbyint(t)));
  CHECK(c.attributes[1][2] == 7);
  CHECK(c.positions == pts);

  RgbImage flat;
  flat.side = 128;
  flat.pixels.assign(128 * 128, {9, 8, 7});
  cfg.image = flat;
  const PointCloud f = polar_colorize(gen_shape(ShapeKind::kTorus, 200, 1), cfg);
  for (const auto& a : f.attributes) CHECK(a == Attribute{9, 8, 7});
}

TEST_CASE("colorize config validation") {
  ColorizeConfig cfg;
  cfg.image = ramp_image(128);
  CHECK_NOTHROW(cfg.validate());
  cfg.side = 127;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.side = 128;
  cfg.origin = {1024.0, 0.0, -1024.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.origin = {1024.0, 1024.0, -1024.0};
  cfg.image = ramp_image(64);
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("generated images use the full range and vary") {
  for (int side : {16, 128, 512}) {
    const RgbImage img = gen_image(side, 3);
    REQUIRE(img.pixels.size() == static_cast<std::size_t>(side) * side);
    for (int ch = 0; ch < 3; ++ch) {
      int lo = 255, hi = 0;
      for (const auto& p : img.pixels) {
        lo = std::min<int>(lo, p[ch]);
        hi = std::max<int>(hi, p[ch]);
      }
      CHECK(lo == 0);
      CHECK(hi == 255);
    }
    CHECK(gen_image(side, 3).pixels == img.pixels);
    CHECK(gen_image(side, 4).pixels != img.pixels);
  }
}

TEST_CASE("clouds are deterministic and follow their recorded parameters") {
  SynthCloudInfo info;
  const PointCloud c = gen_cloud(1000, 77, &info);
  CHECK(c.size() == 1000);
  CHECK_NOTHROW(c.validate());
  CHECK(gen_cloud(1000, 77) == c);
  CHECK(gen_cloud(1000, 78) != c);
  CHECK(info.side >= 128);
  CHECK(info.side <= 512);
  for (double v : info.origin) CHECK(std::fabs(v) == 1024.0);
  CHECK(gen_shape(info.shape, 1000, info.shape_seed) == c.positions);
}

TEST_CASE("dataset directory with manifest") {
  const auto dir = test::temp_dir("synth");
  write_dataset(dir.string(), 3, 64, 5);
  std::ifstream manifest(dir / "manifest.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(manifest, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "filename,shape,L,origin_x,origin_y,origin_z,cloud_seed,shape_seed,image_seed");
  CHECK(lines[1].rfind("cloud_00000.ply,", 0) == 0);
  const auto seeds = dataset_seeds(3, 5);
  const PointCloud c = read_ply_file((dir / "cloud_00002.ply").string());
  CHECK(c == gen_cloud(64, seeds[2]));
  std::filesystem::remove_all(dir);
}
