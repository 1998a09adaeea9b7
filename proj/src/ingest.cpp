#include "d3pcqa/ingest.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "d3pcqa/errors.hpp"

namespace d3pcqa {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

void PointCloud::validate() const {
  if (points.empty()) throw ValidationError("point cloud '" + id + "' is empty");
  if (points.size() != colors.size()) {
    throw ValidationError("point cloud '" + id + "': " + std::to_string(points.size()) +
                          " points but " + std::to_string(colors.size()) + " colors");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (double c : points[i]) {
      if (!std::isfinite(c)) {
        throw ValidationError("point cloud '" + id + "': non-finite coordinate at point " +
                              std::to_string(i));
      }
    }
  }
}

// ===========================================================================
// PLY

namespace {

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<ScalarType> scalar_type(std::string_view name) {
  if (name == "char" || name == "int8") return ScalarType::Int8;
  if (name == "uchar" || name == "uint8") return ScalarType::UInt8;
  if (name == "short" || name == "int16") return ScalarType::Int16;
  if (name == "ushort" || name == "uint16") return ScalarType::UInt16;
  if (name == "int" || name == "int32") return ScalarType::Int32;
  if (name == "uint" || name == "uint32") return ScalarType::UInt32;
  if (name == "float" || name == "float32") return ScalarType::Float32;
  if (name == "double" || name == "float64") return ScalarType::Float64;
  return std::nullopt;
}

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::Int8:
    case ScalarType::UInt8: return 1;
    case ScalarType::Int16:
    case ScalarType::UInt16: return 2;
    case ScalarType::Int32:
    case ScalarType::UInt32:
    case ScalarType::Float32: return 4;
    case ScalarType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  ScalarType type = ScalarType::Float32;
  bool is_list = false;
  ScalarType count_type = ScalarType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  PlyEncoding encoding = PlyEncoding::Ascii;
  std::vector<PlyElement> elements;
  std::size_t payload_offset = 0;
  std::size_t header_lines = 0;
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

PlyHeader parse_header(std::string_view bytes) {
  PlyHeader header;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool saw_format = false;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos >= bytes.size()) return std::nullopt;
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) return std::nullopt;
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  };

  auto first = next_line();
  if (!first || *first != "ply") throw ParseError("PLY header line 1: missing 'ply' magic");

  while (true) {
    auto line = next_line();
    if (!line) throw ParseError("PLY header: missing end_header");
    const auto tok = split_ws(*line);
    const std::string where = "PLY header line " + std::to_string(line_no);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError(where + ": malformed format line");
      if (tok[1] == "ascii") {
        header.encoding = PlyEncoding::Ascii;
      } else if (tok[1] == "binary_little_endian") {
        header.encoding = PlyEncoding::BinaryLittleEndian;
      } else {
        throw ParseError(where + ": unsupported format '" + std::string(tok[1]) + "'");
      }
      saw_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(where + ": malformed element line");
      PlyElement el;
      el.name = std::string(tok[1]);
      std::size_t count = 0;
      auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), count);
      if (ec != std::errc() || p != tok[2].data() + tok[2].size()) {
        throw ParseError(where + ": bad element count '" + std::string(tok[2]) + "'");
      }
      el.count = count;
      header.elements.push_back(std::move(el));
    } else if (tok[0] == "property") {
      if (header.elements.empty()) throw ParseError(where + ": property before any element");
      PlyProperty prop;
      if (tok.size() == 5 && tok[1] == "list") {
        auto ct = scalar_type(tok[2]);
        auto it = scalar_type(tok[3]);
        if (!ct || !it) throw ParseError(where + ": unknown list property type");
        prop.is_list = true;
        prop.count_type = *ct;
        prop.type = *it;
        prop.name = std::string(tok[4]);
      } else if (tok.size() == 3) {
        auto t = scalar_type(tok[1]);
        if (!t) throw ParseError(where + ": unknown property type '" + std::string(tok[1]) + "'");
        prop.type = *t;
        prop.name = std::string(tok[2]);
      } else {
        throw ParseError(where + ": malformed property line");
      }
      header.elements.back().properties.push_back(std::move(prop));
    } else {
      throw ParseError(where + ": unexpected keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!saw_format) throw ParseError("PLY header: missing format line");
  header.payload_offset = pos;
  header.header_lines = line_no;
  return header;
}

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double read_binary_scalar(const char* p, ScalarType t) {
  switch (t) {
    case ScalarType::Int8: return load_le<std::int8_t>(p);
    case ScalarType::UInt8: return load_le<std::uint8_t>(p);
    case ScalarType::Int16: return load_le<std::int16_t>(p);
    case ScalarType::UInt16: return load_le<std::uint16_t>(p);
    case ScalarType::Int32: return load_le<std::int32_t>(p);
    case ScalarType::UInt32: return load_le<std::uint32_t>(p);
    case ScalarType::Float32: return load_le<float>(p);
    case ScalarType::Float64: return load_le<double>(p);
  }
  return 0.0;
}

struct VertexLayout {
  std::array<std::size_t, 3> xyz{};
  std::array<std::size_t, 3> rgb{};
};

VertexLayout vertex_layout(const PlyElement& vertex) {
  auto find = [&](std::string_view name) -> std::size_t {
    for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
      if (vertex.properties[i].name == name) return i;
    }
    throw ParseError("PLY element 'vertex': missing required property '" + std::string(name) + "'");
  };
  VertexLayout layout;
  const char* coords[] = {"x", "y", "z"};
  const char* channels[] = {"red", "green", "blue"};
  for (int a = 0; a < 3; ++a) {
    layout.xyz[a] = find(coords[a]);
    const auto& p = vertex.properties[layout.xyz[a]];
    if (p.is_list || (p.type != ScalarType::Float32 && p.type != ScalarType::Float64)) {
      throw ParseError(std::string("PLY element 'vertex': property '") + coords[a] +
                       "' must be float or double");
    }
    layout.rgb[a] = find(channels[a]);
    const auto& c = vertex.properties[layout.rgb[a]];
    if (c.is_list || c.type != ScalarType::UInt8) {
      throw ParseError(std::string("PLY element 'vertex': property '") + channels[a] +
                       "' must be uchar");
    }
  }
  return layout;
}

double parse_ascii_number(std::string_view tok, std::size_t line_no) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size()) {
    throw ParseError("PLY line " + std::to_string(line_no) + ": bad number '" +
                     std::string(tok) + "'");
  }
  return v;
}

PointCloud parse_ascii_body(std::string_view bytes, const PlyHeader& header, std::string id) {
  PointCloud cloud;
  cloud.id = std::move(id);
  std::size_t pos = header.payload_offset;
  std::size_t line_no = header.header_lines;
  auto next_line = [&]() -> std::optional<std::string_view> {
    while (pos < bytes.size()) {
      std::size_t end = bytes.find('\n', pos);
      if (end == std::string_view::npos) end = bytes.size();
      std::string_view line = bytes.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (!split_ws(line).empty()) return line;
    }
    return std::nullopt;
  };

  for (const auto& el : header.elements) {
    const bool is_vertex = el.name == "vertex";
    std::optional<VertexLayout> layout;
    if (is_vertex) {
      layout = vertex_layout(el);
      cloud.points.reserve(el.count);
      cloud.colors.reserve(el.count);
    }
    for (std::size_t i = 0; i < el.count; ++i) {
      auto line = next_line();
      if (!line) {
        throw ParseError("PLY element '" + el.name + "': truncated payload, expected " +
                         std::to_string(el.count) + " entries, got " + std::to_string(i));
      }
      if (!is_vertex) continue;
      const auto tok = split_ws(*line);
      if (tok.size() < el.properties.size()) {
        throw ParseError("PLY line " + std::to_string(line_no) + ": expected " +
                         std::to_string(el.properties.size()) + " values, got " +
                         std::to_string(tok.size()));
      }
      Point3 pt{};
      Rgb8 rgb{};
      for (int a = 0; a < 3; ++a) {
        pt[a] = parse_ascii_number(tok[layout->xyz[a]], line_no);
        const double c = parse_ascii_number(tok[layout->rgb[a]], line_no);
        if (c < 0 || c > 255 || c != std::floor(c)) {
          throw ParseError("PLY line " + std::to_string(line_no) + ": color out of range");
        }
        rgb[a] = static_cast<std::uint8_t>(c);
      }
      cloud.points.push_back(pt);
      cloud.colors.push_back(rgb);
    }
    if (is_vertex) break;
  }
  return cloud;
}

PointCloud parse_binary_body(std::string_view bytes, const PlyHeader& header, std::string id) {
  PointCloud cloud;
  cloud.id = std::move(id);
  std::size_t pos = header.payload_offset;
  auto need = [&](std::size_t n, const PlyElement& el, std::size_t index) {
    if (pos + n > bytes.size()) {
      throw ParseError("PLY element '" + el.name + "': truncated payload at entry " +
                       std::to_string(index) + " of " + std::to_string(el.count));
    }
  };

  for (const auto& el : header.elements) {
    const bool is_vertex = el.name == "vertex";
    std::optional<VertexLayout> layout;
    std::vector<std::size_t> offsets;
    std::size_t stride = 0;
    bool fixed = true;
    for (const auto& p : el.properties) {
      offsets.push_back(stride);
      if (p.is_list) fixed = false;
      stride += scalar_size(p.type);
    }
    if (is_vertex) {
      if (!fixed) throw ParseError("PLY element 'vertex': list properties are not supported");
      layout = vertex_layout(el);
      cloud.points.reserve(el.count);
      cloud.colors.reserve(el.count);
    }
    for (std::size_t i = 0; i < el.count; ++i) {
      if (fixed) {
        need(stride, el, i);
        if (is_vertex) {
          const char* base = bytes.data() + pos;
          Point3 pt{};
          Rgb8 rgb{};
          for (int a = 0; a < 3; ++a) {
            const auto& px = el.properties[layout->xyz[a]];
            pt[a] = read_binary_scalar(base + offsets[layout->xyz[a]], px.type);
            rgb[a] = static_cast<std::uint8_t>(base[offsets[layout->rgb[a]]]);
          }
          cloud.points.push_back(pt);
          cloud.colors.push_back(rgb);
        }
        pos += stride;
      } else {
        for (const auto& p : el.properties) {
          if (!p.is_list) {
            need(scalar_size(p.type), el, i);
            pos += scalar_size(p.type);
            continue;
          }
          need(scalar_size(p.count_type), el, i);
          const double n = read_binary_scalar(bytes.data() + pos, p.count_type);
          pos += scalar_size(p.count_type);
          if (n < 0) throw ParseError("PLY element '" + el.name + "': negative list length");
          const std::size_t len = static_cast<std::size_t>(n) * scalar_size(p.type);
          need(len, el, i);
          pos += len;
        }
      }
    }
    if (is_vertex) break;
  }
  return cloud;
}

}  // namespace

PointCloud parse_ply(std::string_view bytes, std::string id) {
  const PlyHeader header = parse_header(bytes);
  const bool has_vertex = std::any_of(header.elements.begin(), header.elements.end(),
                                      [](const PlyElement& e) { return e.name == "vertex"; });
  if (!has_vertex) throw ParseError("PLY header: no 'vertex' element");
  PointCloud cloud = header.encoding == PlyEncoding::Ascii
                         ? parse_ascii_body(bytes, header, std::move(id))
                         : parse_binary_body(bytes, header, std::move(id));
  cloud.validate();
  return cloud;
}

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open PLY file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_ply(buf.str(), path.stem().string());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string write_ply(const PointCloud& cloud, PlyEncoding encoding) {
  cloud.validate();
  std::string out;
  out += "ply\n";
  out += encoding == PlyEncoding::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
  if (!cloud.id.empty()) out += "comment id " + cloud.id + "\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  if (encoding == PlyEncoding::Ascii) {
    char buf[64];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (double c : cloud.points[i]) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, c);
        out.append(buf, p);
        out += ' ';
      }
      const auto& rgb = cloud.colors[i];
      out += std::to_string(rgb[0]) + ' ' + std::to_string(rgb[1]) + ' ' + std::to_string(rgb[2]) +
             '\n';
    }
  } else {
    out.reserve(out.size() + cloud.size() * 27);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      char rec[27];
      std::memcpy(rec, cloud.points[i].data(), 24);
      std::memcpy(rec + 24, cloud.colors[i].data(), 3);
      out.append(rec, sizeof rec);
    }
  }
  return out;
}

void write_ply_file(const PointCloud& cloud, const std::filesystem::path& path,
                    PlyEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const std::string bytes = write_ply(cloud, encoding);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ===========================================================================
// Quality scale

int quality_level(double q) noexcept {
  const double r = std::round(q);
  return static_cast<int>(std::clamp(r, 1.0, 5.0));
}

QualityLabel normalize_score(double raw_mos, double scale_min, double scale_max, double delta) {
  if (!(scale_min < scale_max)) throw ValidationError("scale_min must be below scale_max");
  if (!(delta > 0)) throw ValidationError("delta must be positive");
  if (!(raw_mos >= scale_min && raw_mos <= scale_max)) {
    throw ValidationError("mos " + std::to_string(raw_mos) + " outside [" +
                          std::to_string(scale_min) + ", " + std::to_string(scale_max) + "]");
  }
  QualityLabel label;
  label.q = (raw_mos - scale_min) / (scale_max - scale_min) * 5.0 + 0.5;
  label.level = quality_level(label.q);
  label.confidence = delta * (label.q - label.level);
  return label;
}

double denormalize(const QualityLabel& label, double delta) noexcept {
  return label.level + label.confidence / delta;
}

// ===========================================================================
// Manifest

void DatasetManifest::validate() const {
  if (!(scale_min < scale_max)) throw ValidationError("manifest: scale_min must be below scale_max");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!(e.mos >= scale_min && e.mos <= scale_max)) {
      throw ValidationError("manifest entry " + std::to_string(i) + " (" + e.path + "): mos " +
                            std::to_string(e.mos) + " outside the scale");
    }
    if (e.content_id.empty()) {
      throw ValidationError("manifest entry " + std::to_string(i) + " (" + e.path +
                            "): empty content_id");
    }
  }
}

DatasetManifest parse_manifest_csv(std::string_view text, double scale_min, double scale_max) {
  DatasetManifest manifest;
  manifest.scale_min = scale_min;
  manifest.scale_max = scale_max;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "path,mos,content_id") {
        throw ParseError("manifest line 1: expected header 'path,mos,content_id'");
      }
      header_seen = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 3 fields");
    }
    ManifestEntry e;
    e.path = std::string(line.substr(0, c1));
    const auto mos = line.substr(c1 + 1, c2 - c1 - 1);
    auto [p, ec] = std::from_chars(mos.data(), mos.data() + mos.size(), e.mos);
    if (ec != std::errc() || p != mos.data() + mos.size()) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": bad mos '" +
                       std::string(mos) + "'");
    }
    e.content_id = std::string(line.substr(c2 + 1));
    manifest.entries.push_back(std::move(e));
  }
  if (!header_seen) throw ParseError("manifest: empty file");
  manifest.validate();
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& path, double scale_min,
                              double scale_max) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest_csv(buf.str(), scale_min, scale_max);
}

std::string manifest_to_csv(const DatasetManifest& manifest) {
  std::string out = "path,mos,content_id\n";
  char buf[64];
  for (const auto& e : manifest.entries) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, e.mos);
    out += e.path + ',' + std::string(buf, p) + ',' + e.content_id + '\n';
  }
  return out;
}

std::vector<PointCloud> load_clouds(const DatasetManifest& manifest,
                                    const std::filesystem::path& base_dir) {
  std::vector<PointCloud> clouds;
  clouds.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base_dir / p;
    clouds.push_back(read_ply(p));
  }
  return clouds;
}

// ===========================================================================
// Synthetic data

std::string_view to_string(DistortionType type) noexcept {
  switch (type) {
    case DistortionType::GeometryNoise: return "geometry_noise";
    case DistortionType::ColorNoise: return "color_noise";
    case DistortionType::Downsample: return "downsample";
  }
  return "unknown";
}

DistortionType distortion_from_string(std::string_view name) {
  if (name == "geometry_noise") return DistortionType::GeometryNoise;
  if (name == "color_noise") return DistortionType::ColorNoise;
  if (name == "downsample") return DistortionType::Downsample;
  throw ConfigError("unknown distortion type '" + std::string(name) + "'");
}

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  const std::vector<double> sev{0, 1, 2, 3, 4};
  c.distortions = {
      {DistortionType::GeometryNoise, sev, 4.0},
      {DistortionType::ColorNoise, sev, 4.5},
      {DistortionType::Downsample, sev, 5.0},
  };
  return c;
}

double synthetic_mos(double severity, double severity_max, double scale_min, double scale_max) {
  const double t = std::clamp(severity / severity_max, 0.0, 1.0);
  return scale_max - (scale_max - scale_min) * std::pow(t, 0.8);
}

namespace {

using Rng = std::mt19937_64;

struct ShapeParams {
  int kind = 0;
  double a = 1, b = 1, c = 1;     // shape proportions
  double freq = 3, phase = 0;     // color pattern
  std::array<double, 3> base{}, accent{};
  int pattern = 0;
};

Point3 sample_surface(const ShapeParams& s, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (s.kind) {
    case 0: {  // ellipsoid
      double x = g(rng), y = g(rng), z = g(rng);
      const double n = std::sqrt(x * x + y * y + z * z) + 1e-12;
      return {s.a * x / n, s.b * y / n, s.c * z / n};
    }
    case 1: {  // torus
      const double t = two_pi * u(rng), p = two_pi * u(rng);
      const double R = s.a, r = 0.35 * s.a;
      return {(R + r * std::cos(p)) * std::cos(t), (R + r * std::cos(p)) * std::sin(t),
              s.c * r * std::sin(p)};
    }
    case 2: {  // box surface
      const std::array<double, 3> ext{s.a, s.b, s.c};
      const std::array<double, 3> area{ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]};
      const double pick = u(rng) * (area[0] + area[1] + area[2]);
      const int axis = pick < area[0] ? 0 : (pick < area[0] + area[1] ? 1 : 2);
      Point3 p{};
      for (int k = 0; k < 3; ++k) p[k] = (2 * u(rng) - 1) * ext[k];
      p[axis] = (u(rng) < 0.5 ? -1 : 1) * ext[axis];
      return p;
    }
    case 3: {  // capped cylinder (side only, plus caps)
      const double t = two_pi * u(rng);
      if (u(rng) < 0.2) {
        const double r = std::sqrt(u(rng)) * s.a;
        return {r * std::cos(t), r * std::sin(t), (u(rng) < 0.5 ? -1 : 1) * s.c};
      }
      return {s.a * std::cos(t), s.a * std::sin(t), (2 * u(rng) - 1) * s.c};
    }
    case 4: {  // wavy sheet
      const double x = 2 * u(rng) - 1, y = 2 * u(rng) - 1;
      return {s.a * x, s.b * y, 0.25 * s.c * std::sin(3 * x + s.phase) * std::cos(2 * y)};
    }
    case 5: {  // cone
      const double t = two_pi * u(rng), h = std::sqrt(u(rng));
      return {s.a * h * std::cos(t), s.b * h * std::sin(t), s.c * (1 - 2 * h)};
    }
    case 6: {  // lumpy sphere
      double x = g(rng), y = g(rng), z = g(rng);
      const double n = std::sqrt(x * x + y * y + z * z) + 1e-12;
      x /= n, y /= n, z /= n;
      const double r = 1 + 0.2 * std::sin(4 * x + s.phase) * std::sin(3 * y) * std::cos(5 * z);
      return {s.a * r * x, s.b * r * y, s.c * r * z};
    }
    default: {  // saddle
      const double x = 2 * u(rng) - 1, y = 2 * u(rng) - 1;
      return {s.a * x, s.b * y, 0.6 * s.c * x * y};
    }
  }
}

Rgb8 shade(const ShapeParams& s, const Point3& p) {
  double w = 0;
  switch (s.pattern) {
    case 0: w = 0.5 + 0.5 * std::sin(s.freq * p[0] + s.phase); break;
    case 1: w = std::clamp(0.5 + 0.5 * p[2], 0.0, 1.0); break;
    default: w = 0.5 + 0.5 * std::sin(s.freq * (p[0] + p[1]) + s.phase) * std::cos(s.freq * p[2]); break;
  }
  Rgb8 c{};
  for (int k = 0; k < 3; ++k) {
    const double v = (1 - w) * s.base[k] + w * s.accent[k];
    c[k] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
  }
  return c;
}

PointCloud base_shape(int index, Rng& rng, int n_points) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ShapeParams s;
  s.kind = index % 8;
  s.a = 0.7 + 0.6 * u(rng);
  s.b = 0.7 + 0.6 * u(rng);
  s.c = 0.7 + 0.6 * u(rng);
  s.freq = 1 + 2 * u(rng);
  s.phase = 6.28 * u(rng);
  s.pattern = static_cast<int>(u(rng) * 3) % 3;
  for (int k = 0; k < 3; ++k) {
    s.base[k] = 30 + 120 * u(rng);
    s.accent[k] = 120 + 135 * u(rng);
  }
  PointCloud cloud;
  char id[32];
  std::snprintf(id, sizeof id, "shape%02d", index);
  cloud.id = id;
  cloud.points.reserve(n_points);
  cloud.colors.reserve(n_points);
  for (int i = 0; i < n_points; ++i) {
    const Point3 p = sample_surface(s, rng);
    cloud.points.push_back(p);
    cloud.colors.push_back(shade(s, p));
  }
  return cloud;
}

PointCloud distort(const PointCloud& base, DistortionType type, double severity, Rng& rng) {
  PointCloud out = base;
  if (severity <= 0) return out;
  std::normal_distribution<double> g(0.0, 1.0);
  switch (type) {
    case DistortionType::GeometryNoise: {
      const double sigma = 0.03 * severity;
      for (auto& p : out.points) {
        for (double& c : p) c += sigma * g(rng);
      }
      break;
    }
    case DistortionType::ColorNoise: {
      const double sigma = 14.0 * severity;
      for (auto& c : out.colors) {
        for (auto& ch : c) {
          ch = static_cast<std::uint8_t>(std::clamp(std::round(ch + sigma * g(rng)), 0.0, 255.0));
        }
      }
      break;
    }
    case DistortionType::Downsample: {
      const double keep = std::pow(0.6, severity);
      const std::size_t n = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(keep * static_cast<double>(base.size()))));
      std::vector<std::size_t> idx(base.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      // partial Fisher-Yates; keeps the chosen subset in original order
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      idx.resize(n);
      std::sort(idx.begin(), idx.end());
      out.points.clear();
      out.colors.clear();
      for (std::size_t i : idx) {
        out.points.push_back(base.points[i]);
        out.colors.push_back(base.colors[i]);
      }
      break;
    }
  }
  return out;
}

}  // namespace

SynthDataset synth_dataset(const SynthConfig& config) {
  if (config.n_shapes <= 0) throw ConfigError("synth: n_shapes must be positive");
  if (config.points_per_shape <= 0) throw ConfigError("synth: points_per_shape must be positive");
  if (config.distortions.empty()) throw ConfigError("synth: no distortion types configured");
  if (!(config.scale_min < config.scale_max)) throw ConfigError("synth: scale_min must be below scale_max");
  for (const auto& d : config.distortions) {
    if (d.severities.empty()) {
      throw ConfigError("synth: distortion '" + std::string(to_string(d.type)) + "' has no severities");
    }
    for (double s : d.severities) {
      if (s < 0) throw ConfigError("synth: negative severity");
    }
  }

  SynthDataset ds;
  ds.manifest.scale_min = config.scale_min;
  ds.manifest.scale_max = config.scale_max;
  for (int shape = 0; shape < config.n_shapes; ++shape) {
    Rng shape_rng(config.seed * 1000003ULL + static_cast<std::uint64_t>(shape));
    const PointCloud base = base_shape(shape, shape_rng, config.points_per_shape);
    for (std::size_t t = 0; t < config.distortions.size(); ++t) {
      const auto& spec = config.distortions[t];
      double smax = spec.severity_max;
      if (smax <= 0) smax = *std::max_element(spec.severities.begin(), spec.severities.end());
      if (smax <= 0) throw ConfigError("synth: severity_max must be positive");
      for (std::size_t k = 0; k < spec.severities.size(); ++k) {
        const double sev = spec.severities[k];
        Rng rng(config.seed ^ (0x9E3779B97F4A7C15ULL * (1 + shape * 131 + t * 17 + k)));
        PointCloud cloud = distort(base, spec.type, sev, rng);
        char id[96];
        std::snprintf(id, sizeof id, "%s_%s_s%zu", base.id.c_str(),
                      std::string(to_string(spec.type)).c_str(), k);
        cloud.id = id;
        ds.manifest.entries.push_back(
            {cloud.id + ".ply", synthetic_mos(sev, smax, config.scale_min, config.scale_max), base.id});
        ds.clouds.push_back(std::move(cloud));
      }
    }
  }
  return ds;
}

}  // namespace d3pcqa
