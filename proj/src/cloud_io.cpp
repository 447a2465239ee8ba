#include "plac/cloud_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string_view>

#include "plac/error.hpp"

namespace plac {

namespace {

constexpr int floor_half(int v) { return v >> 1; }  // arithmetic shift: floor(v/2)
static_assert(floor_half(-1) == -1 && floor_half(-3) == -2);

enum class ScalarType { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

std::optional<ScalarType> scalar_type_from_name(std::string_view name) {
  if (name == "char" || name == "int8") return ScalarType::kInt8;
  if (name == "uchar" || name == "uint8") return ScalarType::kUInt8;
  if (name == "short" || name == "int16") return ScalarType::kInt16;
  if (name == "ushort" || name == "uint16") return ScalarType::kUInt16;
  if (name == "int" || name == "int32") return ScalarType::kInt32;
  if (name == "uint" || name == "uint32") return ScalarType::kUInt32;
  if (name == "float" || name == "float32") return ScalarType::kFloat32;
  if (name == "double" || name == "float64") return ScalarType::kFloat64;
  return std::nullopt;
}

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::kInt8:
    case ScalarType::kUInt8: return 1;
    case ScalarType::kInt16:
    case ScalarType::kUInt16: return 2;
    case ScalarType::kInt32:
    case ScalarType::kUInt32:
    case ScalarType::kFloat32: return 4;
    case ScalarType::kFloat64: return 8;
  }
  return 0;
}

template <typename T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<std::uint8_t*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void store_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

double load_scalar(ScalarType t, const std::uint8_t* p) {
  switch (t) {
    case ScalarType::kInt8: return load_le<std::int8_t>(p);
    case ScalarType::kUInt8: return load_le<std::uint8_t>(p);
    case ScalarType::kInt16: return load_le<std::int16_t>(p);
    case ScalarType::kUInt16: return load_le<std::uint16_t>(p);
    case ScalarType::kInt32: return load_le<std::int32_t>(p);
    case ScalarType::kUInt32: return load_le<std::uint32_t>(p);
    case ScalarType::kFloat32: return load_le<float>(p);
    case ScalarType::kFloat64: return load_le<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  ScalarType type = ScalarType::kUInt8;
  bool is_list = false;
  ScalarType count_type = ScalarType::kUInt8;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  PlyFormat format = PlyFormat::kAscii;
  std::vector<Element> elements;
  std::size_t data_offset = 0;
};

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

[[noreturn]] void fail(PlyErrorKind kind, std::size_t offset, const std::string& what) {
  throw PlyError(kind, offset, what);
}

Header parse_header(std::string_view text) {
  Header header;
  std::size_t pos = 0;
  bool saw_format = false;
  bool first = true;
  while (true) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) {
      fail(PlyErrorKind::kMalformedHeader, pos, "header not terminated by end_header");
    }
    std::string_view line = text.substr(pos, eol - pos);
    const std::size_t line_offset = pos;
    pos = eol + 1;
    auto tok = split_ws(line);
    if (first) {
      if (tok.size() != 1 || tok[0] != "ply") {
        fail(PlyErrorKind::kMalformedHeader, line_offset, "missing 'ply' magic");
      }
      first = false;
      continue;
    }
    if (tok.empty()) continue;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3) fail(PlyErrorKind::kMalformedHeader, line_offset, "bad format line");
      if (tok[1] == "ascii") {
        header.format = PlyFormat::kAscii;
      } else if (tok[1] == "binary_little_endian") {
        header.format = PlyFormat::kBinaryLittleEndian;
      } else if (tok[1] == "binary_big_endian") {
        fail(PlyErrorKind::kUnsupportedLayout, line_offset, "big-endian PLY is not supported");
      } else {
        fail(PlyErrorKind::kMalformedHeader, line_offset, "unknown format '" + std::string(tok[1]) + "'");
      }
      saw_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) fail(PlyErrorKind::kMalformedHeader, line_offset, "bad element line");
      Element e;
      e.name = std::string(tok[1]);
      auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
      if (ec != std::errc() || p != tok[2].data() + tok[2].size()) {
        fail(PlyErrorKind::kMalformedHeader, line_offset, "bad element count");
      }
      header.elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (header.elements.empty()) {
        fail(PlyErrorKind::kMalformedHeader, line_offset, "property before any element");
      }
      Property prop;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = scalar_type_from_name(tok[2]);
        auto it = scalar_type_from_name(tok[3]);
        if (!ct || !it) fail(PlyErrorKind::kMalformedHeader, line_offset, "bad list property type");
        prop.is_list = true;
        prop.count_type = *ct;
        prop.type = *it;
        prop.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        auto t = scalar_type_from_name(tok[1]);
        if (!t) fail(PlyErrorKind::kMalformedHeader, line_offset, "unknown property type '" + std::string(tok[1]) + "'");
        prop.type = *t;
        prop.name = std::string(tok[2]);
      } else {
        fail(PlyErrorKind::kMalformedHeader, line_offset, "bad property line");
      }
      header.elements.back().properties.push_back(std::move(prop));
    } else if (tok[0] == "end_header") {
      break;
    } else {
      fail(PlyErrorKind::kMalformedHeader, line_offset, "unexpected header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!saw_format) fail(PlyErrorKind::kMalformedHeader, 0, "missing format line");
  header.data_offset = pos;
  return header;
}

// Column roles within the vertex element.
struct VertexLayout {
  std::array<int, 3> xyz{-1, -1, -1};
  std::array<int, 3> color{-1, -1, -1};
  int scalar = -1;
  ChannelMode mode = ChannelMode::kColor3;
};

VertexLayout resolve_layout(const Element& vertex, std::size_t offset) {
  VertexLayout layout;
  std::vector<int> others;
  for (int i = 0; i < static_cast<int>(vertex.properties.size()); ++i) {
    const Property& p = vertex.properties[i];
    if (p.is_list) fail(PlyErrorKind::kUnsupportedLayout, offset, "list property '" + p.name + "' in vertex element");
    int* slot = nullptr;
    if (p.name == "x") slot = &layout.xyz[0];
    else if (p.name == "y") slot = &layout.xyz[1];
    else if (p.name == "z") slot = &layout.xyz[2];
    else if (p.name == "red") slot = &layout.color[0];
    else if (p.name == "green") slot = &layout.color[1];
    else if (p.name == "blue") slot = &layout.color[2];
    if (slot == nullptr) {
      others.push_back(i);
      continue;
    }
    if (*slot >= 0) fail(PlyErrorKind::kUnsupportedLayout, offset, "duplicate property '" + p.name + "'");
    *slot = i;
  }
  for (int c = 0; c < 3; ++c) {
    if (layout.xyz[c] < 0) fail(PlyErrorKind::kUnsupportedLayout, offset, "vertex element lacks x/y/z");
    ScalarType t = vertex.properties[layout.xyz[c]].type;
    if (t != ScalarType::kFloat32 && t != ScalarType::kFloat64) {
      fail(PlyErrorKind::kUnsupportedLayout, offset, "positions must be float or double");
    }
  }
  const int n_color = static_cast<int>(std::count_if(layout.color.begin(), layout.color.end(), [](int v) { return v >= 0; }));
  if (n_color == 3) {
    // Extra columns such as normals or alpha are ignored.
    for (int c = 0; c < 3; ++c) {
      if (vertex.properties[layout.color[c]].type != ScalarType::kUInt8) {
        fail(PlyErrorKind::kUnsupportedLayout, offset, "colors must be uchar");
      }
    }
    layout.mode = ChannelMode::kColor3;
  } else if (n_color == 0 && !others.empty()) {
    for (int i : others) {
      const std::string& name = vertex.properties[i].name;
      if (name == "reflectance" || name == "intensity") {
        layout.scalar = i;
        break;
      }
    }
    if (layout.scalar < 0 && others.size() == 1) layout.scalar = others[0];
    if (layout.scalar < 0) {
      fail(PlyErrorKind::kUnsupportedLayout, offset, "several scalar attributes and none named reflectance");
    }
    layout.mode = ChannelMode::kReflectance1;
  } else {
    fail(PlyErrorKind::kUnsupportedLayout, offset,
         "vertex needs red,green,blue or a reflectance attribute besides x,y,z");
  }
  return layout;
}

std::int16_t checked_attribute(double v, std::size_t offset) {
  if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
    fail(PlyErrorKind::kBadValue, offset, "attribute value outside integer range [0,255]");
  }
  return static_cast<std::int16_t>(v);
}

void assign_columns(const VertexLayout& layout, std::span<const double> values, std::size_t offset,
                    Position& pos, Attribute& attr) {
  for (int c = 0; c < 3; ++c) pos[c] = values[layout.xyz[c]];
  attr = {0, 0, 0};
  if (layout.mode == ChannelMode::kColor3) {
    for (int c = 0; c < 3; ++c) attr[c] = checked_attribute(values[layout.color[c]], offset);
  } else {
    attr[0] = checked_attribute(values[layout.scalar], offset);
  }
}

PointCloud parse_ascii(std::string_view text, const Header& header) {
  std::size_t pos = header.data_offset;
  auto next_line = [&](std::string_view& line) -> bool {
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      line = text.substr(pos, eol - pos);
      pos = std::min(eol + 1, text.size());
      if (!split_ws(line).empty()) return true;
    }
    return false;
  };

  PointCloud cloud;
  for (const Element& e : header.elements) {
    if (e.name != "vertex") {
      std::string_view skip;
      for (std::size_t i = 0; i < e.count; ++i) {
        if (!next_line(skip)) fail(PlyErrorKind::kTruncatedPayload, pos, "element '" + e.name + "' truncated");
      }
      continue;
    }
    const VertexLayout layout = resolve_layout(e, header.data_offset);
    cloud.channel_mode = layout.mode;
    cloud.positions.resize(e.count);
    cloud.attributes.resize(e.count);
    std::vector<double> values(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      std::string_view line;
      const std::size_t line_offset = pos;
      if (!next_line(line)) {
        fail(PlyErrorKind::kTruncatedPayload, pos,
             "expected " + std::to_string(e.count) + " vertices, found " + std::to_string(i));
      }
      auto tok = split_ws(line);
      if (tok.size() != e.properties.size()) {
        fail(PlyErrorKind::kCountMismatch, line_offset,
             "vertex line has " + std::to_string(tok.size()) + " values, expected " +
                 std::to_string(e.properties.size()));
      }
      for (std::size_t c = 0; c < tok.size(); ++c) {
        const char* first = tok[c].data();
        const char* last = first + tok[c].size();
        auto [p, ec] = std::from_chars(first, last, values[c]);
        if (ec != std::errc() || p != last) {
          fail(PlyErrorKind::kBadValue, line_offset, "unparseable number '" + std::string(tok[c]) + "'");
        }
      }
      assign_columns(layout, values, line_offset, cloud.positions[i], cloud.attributes[i]);
    }
    return cloud;
  }
  fail(PlyErrorKind::kUnsupportedLayout, header.data_offset, "no vertex element");
}

PointCloud parse_binary(std::span<const std::uint8_t> bytes, const Header& header) {
  std::size_t pos = header.data_offset;
  auto need = [&](std::size_t n, const std::string& what) {
    if (bytes.size() - pos < n) fail(PlyErrorKind::kTruncatedPayload, pos, what + " truncated");
  };
  PointCloud cloud;
  for (const Element& e : header.elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const Property& p : e.properties) {
          if (p.is_list) {
            need(scalar_size(p.count_type), "element '" + e.name + "'");
            const double n = load_scalar(p.count_type, bytes.data() + pos);
            pos += scalar_size(p.count_type);
            if (n < 0) fail(PlyErrorKind::kBadValue, pos, "negative list length");
            const std::size_t len = static_cast<std::size_t>(n) * scalar_size(p.type);
            need(len, "element '" + e.name + "'");
            pos += len;
          } else {
            need(scalar_size(p.type), "element '" + e.name + "'");
            pos += scalar_size(p.type);
          }
        }
      }
      continue;
    }
    const VertexLayout layout = resolve_layout(e, header.data_offset);
    std::size_t record = 0;
    for (const Property& p : e.properties) record += scalar_size(p.type);
    if (e.count > (bytes.size() - pos) / record) {
      const std::size_t have = (bytes.size() - pos) / record;
      fail(PlyErrorKind::kTruncatedPayload, pos + have * record,
           "expected " + std::to_string(e.count) + " vertices, found " + std::to_string(have));
    }
    cloud.channel_mode = layout.mode;
    cloud.positions.resize(e.count);
    cloud.attributes.resize(e.count);
    std::vector<double> values(e.properties.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      const std::size_t rec_offset = pos;
      for (std::size_t c = 0; c < e.properties.size(); ++c) {
        values[c] = load_scalar(e.properties[c].type, bytes.data() + pos);
        pos += scalar_size(e.properties[c].type);
      }
      assign_columns(layout, values, rec_offset, cloud.positions[i], cloud.attributes[i]);
    }
    return cloud;
  }
  fail(PlyErrorKind::kUnsupportedLayout, header.data_offset, "no vertex element");
}

void append(std::vector<std::uint8_t>& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

void append_double(std::vector<std::uint8_t>& out, double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.insert(out.end(), buf, p);
}

}  // namespace

void PointCloud::validate() const {
  if (positions.empty()) throw Error("point cloud must contain at least one point");
  if (positions.size() != attributes.size()) throw Error("positions and attributes differ in length");
  const int channels = channel_count(channel_mode);
  for (const Attribute& a : attributes) {
    for (int c = 0; c < 3; ++c) {
      int lo = 0;
      int hi = 255;
      if (c >= channels) {
        lo = hi = 0;
      } else if (channel_mode == ChannelMode::kColor3 && domain == ColorDomain::kYCoCgR && c > 0) {
        lo = -255;
      }
      if (a[c] < lo || a[c] > hi) throw Error("attribute value out of range");
    }
  }
  for (const Position& p : positions) {
    for (double v : p) {
      if (!std::isfinite(v)) throw Error("non-finite position");
    }
  }
}

PointCloud parse_ply(std::span<const std::uint8_t> bytes) {
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  const Header header = parse_header(text);
  const bool has_vertex = std::any_of(header.elements.begin(), header.elements.end(),
                                      [](const Element& e) { return e.name == "vertex"; });
  if (!has_vertex) fail(PlyErrorKind::kUnsupportedLayout, header.data_offset, "no vertex element");
  for (const Element& e : header.elements) {
    if (e.name == "vertex" && e.count == 0) {
      fail(PlyErrorKind::kCountMismatch, header.data_offset, "vertex element is empty");
    }
  }
  PointCloud cloud = header.format == PlyFormat::kAscii ? parse_ascii(text, header) : parse_binary(bytes, header);
  for (const Position& p : cloud.positions) {
    for (double v : p) {
      if (!std::isfinite(v)) fail(PlyErrorKind::kBadValue, header.data_offset, "non-finite coordinate");
    }
  }
  return cloud;
}

std::vector<std::uint8_t> write_ply(const PointCloud& input, PlyFormat format) {
  input.validate();
  const PointCloud cloud = to_rgb(input);
  std::vector<std::uint8_t> out;
  append(out, "ply\n");
  append(out, format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  append(out, "element vertex " + std::to_string(cloud.size()) + "\n");
  append(out, "property double x\nproperty double y\nproperty double z\n");
  const bool color = cloud.channel_mode == ChannelMode::kColor3;
  if (color) {
    append(out, "property uchar red\nproperty uchar green\nproperty uchar blue\n");
  } else {
    append(out, "property uchar reflectance\n");
  }
  append(out, "end_header\n");
  const int channels = channel_count(cloud.channel_mode);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Position& p = cloud.positions[i];
    const Attribute& a = cloud.attributes[i];
    if (format == PlyFormat::kAscii) {
      for (int c = 0; c < 3; ++c) {
        append_double(out, p[c]);
        out.push_back(' ');
      }
      for (int c = 0; c < channels; ++c) {
        append(out, std::to_string(a[c]));
        out.push_back(c + 1 < channels ? ' ' : '\n');
      }
    } else {
      for (int c = 0; c < 3; ++c) store_le<double>(out, p[c]);
      for (int c = 0; c < channels; ++c) out.push_back(static_cast<std::uint8_t>(a[c]));
    }
  }
  return out;
}

PointCloud read_ply_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return parse_ply(bytes);
}

void write_ply_file(const std::string& path, const PointCloud& cloud, PlyFormat format) {
  write_file_atomic(path, write_ply(cloud, format));
}

Attribute rgb_to_ycocgr(const Attribute& rgb) {
  for (int c = 0; c < 3; ++c) {
    if (rgb[c] < 0 || rgb[c] > 255) throw Error("rgb component out of [0,255]");
  }
  const int r = rgb[0], g = rgb[1], b = rgb[2];
  const int co = r - b;
  const int t = b + floor_half(co);
  const int cg = g - t;
  const int y = t + floor_half(cg);
  return {static_cast<std::int16_t>(y), static_cast<std::int16_t>(co), static_cast<std::int16_t>(cg)};
}

Attribute ycocgr_to_rgb(const Attribute& ycc) {
  const int y = ycc[0], co = ycc[1], cg = ycc[2];
  const int t = y - floor_half(cg);
  const int g = cg + t;
  const int b = t - floor_half(co);
  const int r = b + co;
  if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) {
    throw Error("YCoCg-R triple is outside the image of the RGB cube");
  }
  return {static_cast<std::int16_t>(r), static_cast<std::int16_t>(g), static_cast<std::int16_t>(b)};
}

PointCloud to_ycocgr(PointCloud cloud) {
  if (cloud.channel_mode != ChannelMode::kColor3 || cloud.domain == ColorDomain::kYCoCgR) return cloud;
  for (Attribute& a : cloud.attributes) a = rgb_to_ycocgr(a);
  cloud.domain = ColorDomain::kYCoCgR;
  return cloud;
}

PointCloud to_rgb(PointCloud cloud) {
  if (cloud.channel_mode != ChannelMode::kColor3 || cloud.domain == ColorDomain::kRGB) return cloud;
  for (Attribute& a : cloud.attributes) a = ycocgr_to_rgb(a);
  cloud.domain = ColorDomain::kRGB;
  return cloud;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error("read error on '" + path + "'");
  return bytes;
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("write error on '" + tmp + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

}  // namespace plac
