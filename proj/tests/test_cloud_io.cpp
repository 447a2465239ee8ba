#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>

#include "plac/cloud_io.hpp"
#include "plac/error.hpp"
#include "test_util.hpp"

using namespace plac;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

PlyErrorKind parse_error_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_ply(bytes);
  } catch (const PlyError& e) {
    return e.kind();
  }
  FAIL("parse_ply accepted malformed input");
  return PlyErrorKind::kMalformedHeader;
}

const char* kAsciiHeader =
    "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
    "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";

}  // namespace

TEST_CASE("ascii color PLY parses") {
  const auto cloud = parse_ply(bytes_of(std::string(kAsciiHeader) + "0 1 2 10 20 30\n-1.5 2.25 3 255 0 7\n"));
  REQUIRE(cloud.size() == 2);
  CHECK(cloud.channel_mode == ChannelMode::kColor3);
  CHECK(cloud.positions[1] == Position{-1.5, 2.25, 3.0});
  CHECK(cloud.attributes[0] == Attribute{10, 20, 30});
  CHECK(cloud.attributes[1] == Attribute{255, 0, 7});
}

TEST_CASE("binary reflectance PLY with an extra face element parses") {
  std::string s =
      "ply\nformat binary_little_endian 1.0\ncomment scan\nelement vertex 1\nproperty double x\n"
      "property double y\nproperty double z\nproperty uchar reflectance\nelement face 1\n"
      "property list uchar int vertex_indices\nend_header\n";
  auto bytes = bytes_of(s);
  const double xyz[3] = {1.0, -2.0, 0.5};
  const auto* raw = reinterpret_cast<const std::uint8_t*>(xyz);
  bytes.insert(bytes.end(), raw, raw + sizeof(xyz));
  bytes.push_back(200);
  bytes.push_back(1);  // list of one index
  for (int i = 0; i < 4; ++i) bytes.push_back(0);
  const auto cloud = parse_ply(bytes);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.channel_mode == ChannelMode::kReflectance1);
  CHECK(cloud.attributes[0][0] == 200);
  CHECK(cloud.positions[0] == Position{1.0, -2.0, 0.5});
}

TEST_CASE("color PLY with normals ignores the extra columns") {
  const std::string s =
      "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n"
      "property float nx\nproperty float ny\nproperty float nz\nproperty uchar red\nproperty uchar green\n"
      "property uchar blue\nend_header\n1 2 3 0 0 1 9 8 7\n";
  const auto cloud = parse_ply(bytes_of(s));
  CHECK(cloud.attributes[0] == Attribute{9, 8, 7});
}

TEST_CASE("writer output re-parses bit-exactly in both formats") {
  PointCloud c;
  c.positions = {{0.1, -1e-300, 1023.0}, {std::nextafter(1.0, 2.0), 5e300, -0.0}, {3.0, 4.0, 5.0}};
  c.attributes = {{0, 128, 255}, {1, 2, 3}, {250, 251, 252}};
  for (PlyFormat f : {PlyFormat::kAscii, PlyFormat::kBinaryLittleEndian}) {
    const auto back = parse_ply(write_ply(c, f));
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (int k = 0; k < 3; ++k) CHECK(std::memcmp(&back.positions[i][k], &c.positions[i][k], sizeof(double)) == 0);
    }
    CHECK(back.attributes == c.attributes);
  }
  PointCloud refl = c;
  refl.channel_mode = ChannelMode::kReflectance1;
  for (auto& a : refl.attributes) a = {a[0], 0, 0};
  CHECK(parse_ply(write_ply(refl, PlyFormat::kAscii)) == refl);
}

TEST_CASE("malformed PLY inputs map to typed errors") {
  CHECK(parse_error_kind(bytes_of("plx\n")) == PlyErrorKind::kMalformedHeader);
  CHECK(parse_error_kind(bytes_of("ply\nelement vertex 1\nend_header\n")) == PlyErrorKind::kMalformedHeader);
  CHECK(parse_error_kind(bytes_of("ply\nformat binary_big_endian 1.0\nend_header\n")) ==
        PlyErrorKind::kUnsupportedLayout);
  // header without end_header
  CHECK(parse_error_kind(bytes_of("ply\nformat ascii 1.0\nelement vertex 1\n")) == PlyErrorKind::kMalformedHeader);
  // one line missing
  CHECK(parse_error_kind(bytes_of(std::string(kAsciiHeader) + "0 1 2 10 20 30\n")) ==
        PlyErrorKind::kTruncatedPayload);
  // wrong token count on a line
  CHECK(parse_error_kind(bytes_of(std::string(kAsciiHeader) + "0 1 2 10 20\n1 1 1 1 1 1\n")) ==
        PlyErrorKind::kCountMismatch);
  // out-of-range and non-integer attributes
  CHECK(parse_error_kind(bytes_of(std::string(kAsciiHeader) + "0 1 2 10 20 256\n1 1 1 1 1 1\n")) ==
        PlyErrorKind::kBadValue);
  CHECK(parse_error_kind(bytes_of(std::string(kAsciiHeader) + "0 1 2 10 20 -1\n1 1 1 1 1 1\n")) ==
        PlyErrorKind::kBadValue);
  // truncated binary payload
  std::string bin =
      "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar reflectance\nend_header\n";
  auto bytes = bytes_of(bin);
  bytes.resize(bytes.size() + 13 + 5, 0);
  const auto err = parse_error_kind(bytes);
  CHECK(err == PlyErrorKind::kTruncatedPayload);
  // no attribute columns at all
  CHECK(parse_error_kind(bytes_of("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                                  "property float z\nend_header\n1 2 3\n")) == PlyErrorKind::kUnsupportedLayout);
}

TEST_CASE("truncated binary PLY reports the offset where data ran out") {
  std::string bin =
      "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar reflectance\nend_header\n";
  auto bytes = bytes_of(bin);
  bytes.resize(bytes.size() + 13 * 2, 0);
  try {
    parse_ply(bytes);
    FAIL("expected an error");
  } catch (const PlyError& e) {
    CHECK(e.kind() == PlyErrorKind::kTruncatedPayload);
    CHECK(e.offset() >= bin.size());
    CHECK(e.offset() <= bytes.size());
  }
}

TEST_CASE("YCoCg-R round-trips all 2^24 RGB triples and stays in range") {
  long failures = 0;
  for (int r = 0; r < 256; ++r) {
    for (int g = 0; g < 256; ++g) {
      for (int b = 0; b < 256; ++b) {
        const Attribute rgb{static_cast<std::int16_t>(r), static_cast<std::int16_t>(g), static_cast<std::int16_t>(b)};
        const Attribute ycc = rgb_to_ycocgr(rgb);
        const bool in_range = ycc[0] >= 0 && ycc[0] <= 255 && ycc[1] >= -255 && ycc[1] <= 255 && ycc[2] >= -255 &&
                              ycc[2] <= 255;
        if (!in_range || ycocgr_to_rgb(ycc) != rgb) ++failures;
      }
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("YCoCg-R uses floor shifts on negative values") {
  // R=0, G=0, B=1: Co=-1, t=1+floor(-1/2)=0, Cg=0, Y=0.
  CHECK(rgb_to_ycocgr({0, 0, 1}) == Attribute{0, -1, 0});
  // Pure white and black.
  CHECK(rgb_to_ycocgr({255, 255, 255}) == Attribute{255, 0, 0});
  CHECK(rgb_to_ycocgr({0, 0, 0}) == Attribute{0, 0, 0});
  CHECK_THROWS_AS(ycocgr_to_rgb({0, 255, 255}), Error);
  CHECK_THROWS_AS(rgb_to_ycocgr({256, 0, 0}), Error);
}

TEST_CASE("cloud domain conversion is reversible") {
  PointCloud c = test::small_cloud(50, 3);
  const PointCloud y = to_ycocgr(c);
  CHECK(y.domain == ColorDomain::kYCoCgR);
  CHECK(to_rgb(y) == c);
  CHECK(to_ycocgr(y) == y);
}

TEST_CASE("validate rejects inconsistent clouds") {
  PointCloud c = test::small_cloud(4, 1);
  c.attributes.pop_back();
  CHECK_THROWS_AS(c.validate(), Error);
  PointCloud empty;
  CHECK_THROWS_AS(empty.validate(), Error);
  PointCloud nan = test::small_cloud(2, 1);
  nan.positions[0][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(nan.validate(), Error);
}

TEST_CASE("atomic write leaves only the final file") {
  const auto dir = test::temp_dir("atomic");
  const std::string path = (dir / "out.bin").string();
  const std::vector<std::uint8_t> data{1, 2, 3};
  write_file_atomic(path, data);
  CHECK(read_file_bytes(path) == data);
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  CHECK_THROWS_AS(write_file_atomic((dir / "missing" / "x.bin").string(), data), Error);
  CHECK_THROWS_AS(read_file_bytes((dir / "nope").string()), Error);
  std::filesystem::remove_all(dir);
}
