#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace d3pcqa {

using Point3 = std::array<double, 3>;
using Rgb8 = std::array<std::uint8_t, 3>;

/// A colored point cloud. Points and colors are parallel arrays.
struct PointCloud {
  std::string id;
  std::vector<Point3> points;
  std::vector<Rgb8> colors;

  [[nodiscard]] std::size_t size() const noexcept { return points.size(); }

  /// Throws ValidationError if the cloud is empty, arrays disagree in length
  /// or any coordinate is non-finite.
  void validate() const;

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

// ---------------------------------------------------------------------------
// PLY

enum class PlyEncoding { Ascii, BinaryLittleEndian };

/// Parses an ascii or binary_little_endian PLY file. The vertex element must
/// carry float/double x,y,z and uchar red,green,blue; other vertex properties
/// and other elements are skipped. Errors name the offending element or line.
PointCloud parse_ply(std::string_view bytes, std::string id = {});

/// Reads and parses a PLY file from disk; the cloud id is the file stem.
PointCloud read_ply(const std::filesystem::path& path);

/// Serializes a cloud. Coordinates are written as `double` so both encodings
/// round-trip bit-exactly through parse_ply.
std::string write_ply(const PointCloud& cloud, PlyEncoding encoding);

void write_ply_file(const PointCloud& cloud, const std::filesystem::path& path,
                    PlyEncoding encoding = PlyEncoding::BinaryLittleEndian);

// ---------------------------------------------------------------------------
// Quality scale

/// A MOS mapped onto the five-grade scale.
///   q          normalized score in [0.5, 5.5]
///   level      integer grade in 1..5
///   confidence delta * (q - level), bounded by +-0.5 delta
struct QualityLabel {
  double q = 0.0;
  int level = 1;
  double confidence = 0.0;
};

/// Round half away from zero, clamped to the valid grade range.
int quality_level(double q) noexcept;

QualityLabel normalize_score(double raw_mos, double scale_min, double scale_max,
                             double delta);

/// level + confidence / delta
double denormalize(const QualityLabel& label, double delta) noexcept;

// ---------------------------------------------------------------------------
// Dataset manifest

struct ManifestEntry {
  std::string path;
  double mos = 0.0;
  std::string content_id;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  double scale_min = 0.0;
  double scale_max = 1.0;

  /// Scale bounds ordered, every mos inside them, content ids non-empty.
  void validate() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// CSV with header `path,mos,content_id`. The scale is not part of the file.
DatasetManifest parse_manifest_csv(std::string_view text, double scale_min,
                                   double scale_max);
DatasetManifest read_manifest(const std::filesystem::path& path, double scale_min,
                              double scale_max);
std::string manifest_to_csv(const DatasetManifest& manifest);

/// Loads every cloud named by the manifest; relative paths resolve against
/// `base_dir`.
std::vector<PointCloud> load_clouds(const DatasetManifest& manifest,
                                    const std::filesystem::path& base_dir);

// ---------------------------------------------------------------------------
// Synthetic dataset

enum class DistortionType { GeometryNoise, ColorNoise, Downsample };

std::string_view to_string(DistortionType type) noexcept;
DistortionType distortion_from_string(std::string_view name);

struct DistortionSpec {
  DistortionType type = DistortionType::GeometryNoise;
  std::vector<double> severities;
  /// Severity that maps to the bottom of the scale; defaults to the largest
  /// listed severity when non-positive.
  double severity_max = 0.0;
};

struct SynthConfig {
  int n_shapes = 8;
  int points_per_shape = 12000;
  std::vector<DistortionSpec> distortions;
  std::uint64_t seed = 7;
  double scale_min = 0.0;
  double scale_max = 10.0;

  /// Three distortion types, severities 0..4. The per-type severity_max
  /// values differ so equal severities land on different MOS values.
  static SynthConfig defaults();
};

struct SynthDataset {
  std::vector<PointCloud> clouds;
  DatasetManifest manifest;
};

/// mos = scale_max - (scale_max - scale_min) * (severity / severity_max)^0.8
double synthetic_mos(double severity, double severity_max, double scale_min,
                     double scale_max);

/// Generates `n_shapes` procedural base shapes and every configured
/// distortion of each. Entry paths are `<id>.ply`; content_id names the base
/// shape. Fully determined by the config (including the seed).
SynthDataset synth_dataset(const SynthConfig& config);

}  // namespace d3pcqa
