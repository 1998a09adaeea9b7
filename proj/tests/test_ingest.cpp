#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "d3pcqa/errors.hpp"
#include "d3pcqa/ingest.hpp"

using namespace d3pcqa;

namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 10.0);
  std::uniform_int_distribution<int> c(0, 255);
  PointCloud pc;
  pc.id = "rand";
  for (std::size_t i = 0; i < n; ++i) {
    pc.points.push_back({g(rng), g(rng), g(rng)});
    pc.colors.push_back({static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng)),
                         static_cast<std::uint8_t>(c(rng))});
  }
  return pc;
}

TEST(Ply, AsciiThreeVertices) {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment tiny\nelement vertex 3\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
      "0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0.5 0 0 255\n";
  const PointCloud pc = parse_ply(text, "tri");
  ASSERT_EQ(pc.size(), 3u);
  EXPECT_EQ(pc.points[2][2], 0.5);
  EXPECT_EQ(pc.colors[0], (Rgb8{255, 0, 0}));
  EXPECT_EQ(pc.colors[2], (Rgb8{0, 0, 255}));
}

TEST(Ply, UnknownPropertiesAndElementsSkipped) {
  const std::string text =
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\n"
      "property float nx\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar alpha\n"
      "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "1 2 3 0.1 10 20 30 255\n4 5 6 0.2 40 50 60 255\n3 0 1 1\n";
  const PointCloud pc = parse_ply(text);
  ASSERT_EQ(pc.size(), 2u);
  EXPECT_EQ(pc.points[1], (Point3{4, 5, 6}));
  EXPECT_EQ(pc.colors[1], (Rgb8{40, 50, 60}));
}

TEST(Ply, BothEncodingsRoundTripBitExactly) {
  const PointCloud pc = random_cloud(500, 3);
  const PointCloud a = parse_ply(write_ply(pc, PlyEncoding::Ascii), pc.id);
  const PointCloud b = parse_ply(write_ply(pc, PlyEncoding::BinaryLittleEndian), pc.id);
  EXPECT_EQ(a, pc);
  EXPECT_EQ(b, pc);
  EXPECT_EQ(a, b);
}

TEST(Ply, TruncatedPayloadIsRejected) {
  PointCloud pc = random_cloud(10, 4);
  std::string bin = write_ply(pc, PlyEncoding::BinaryLittleEndian);
  bin.resize(bin.size() - 5);
  EXPECT_THROW(parse_ply(bin), ParseError);

  std::string ascii = write_ply(pc, PlyEncoding::Ascii);
  ascii.erase(ascii.rfind('\n', ascii.size() - 2) + 1);  // drop the last vertex line
  try {
    parse_ply(ascii);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("vertex"), std::string::npos) << e.what();
  }
}

TEST(Ply, HeaderErrorsNameTheProblem) {
  EXPECT_THROW(parse_ply("plx\n"), ParseError);
  EXPECT_THROW(parse_ply("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n"), ParseError);
  try {
    parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n0 0\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("missing required property"), std::string::npos) << e.what();
  }
}

TEST(Ply, FileRoundTripUsesStemAsId) {
  const auto dir = std::filesystem::temp_directory_path() / "d3pcqa_ply_test";
  std::filesystem::create_directories(dir);
  PointCloud pc = random_cloud(20, 5);
  pc.id = "sample_a";
  write_ply_file(pc, dir / "sample_a.ply");
  EXPECT_EQ(read_ply(dir / "sample_a.ply"), pc);
  std::filesystem::remove_all(dir);
}

TEST(PointCloudValidate, RejectsBadClouds) {
  PointCloud pc;
  EXPECT_THROW(pc.validate(), ValidationError);
  pc.points = {{0, 0, 0}};
  EXPECT_THROW(pc.validate(), ValidationError);
  pc.colors = {{1, 2, 3}};
  EXPECT_NO_THROW(pc.validate());
  pc.points[0][1] = std::nan("");
  EXPECT_THROW(pc.validate(), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(QualityScale, Boundaries) {
  const QualityLabel lo = normalize_score(0.0, 0.0, 10.0, 1.0);
  EXPECT_DOUBLE_EQ(lo.q, 0.5);
  EXPECT_EQ(lo.level, 1);
  EXPECT_DOUBLE_EQ(lo.confidence, -0.5);
  const QualityLabel hi = normalize_score(10.0, 0.0, 10.0, 1.0);
  EXPECT_DOUBLE_EQ(hi.q, 5.5);
  EXPECT_EQ(hi.level, 5);
  EXPECT_DOUBLE_EQ(hi.confidence, 0.5);
  const QualityLabel mid = normalize_score(5.0, 0.0, 10.0, 1.0);
  EXPECT_DOUBLE_EQ(mid.q, 3.0);
  EXPECT_EQ(mid.level, 3);
  EXPECT_DOUBLE_EQ(mid.confidence, 0.0);
}

TEST(QualityScale, HalfwayRoundsAwayFromZero) {
  EXPECT_EQ(quality_level(2.5), 3);
  EXPECT_EQ(quality_level(3.5), 4);
  EXPECT_EQ(quality_level(2.4999999), 2);
  EXPECT_EQ(quality_level(5.5), 5);
  EXPECT_EQ(quality_level(0.5), 1);
}

TEST(QualityScale, DenormalizeExamples) {
  EXPECT_DOUBLE_EQ(denormalize({3.25, 3, 0.25}, 1.0), 3.25);
  EXPECT_DOUBLE_EQ(denormalize({5.5, 5, 0.5}, 1.0), 5.5);
  EXPECT_DOUBLE_EQ(denormalize({1.8, 2, -0.4}, 2.0), 1.8);
}

TEST(QualityScale, RejectsOutOfRange) {
  EXPECT_THROW(normalize_score(10.5, 0.0, 10.0, 1.0), ValidationError);
  EXPECT_THROW(normalize_score(-0.1, 0.0, 10.0, 1.0), ValidationError);
  EXPECT_THROW(normalize_score(1.0, 2.0, 2.0, 1.0), ValidationError);
  EXPECT_THROW(normalize_score(1.0, 0.0, 2.0, 0.0), ValidationError);
}

TEST(QualityScale, RandomRoundTripAndBounds) {
  std::mt19937_64 rng(11);
  for (double delta : {0.5, 1.0, 2.0}) {
    for (int i = 0; i < 20000; ++i) {
      const double lo = std::uniform_real_distribution<double>(-50, 50)(rng);
      const double hi = lo + std::uniform_real_distribution<double>(0.1, 100)(rng);
      const double mos = std::uniform_real_distribution<double>(lo, hi)(rng);
      const QualityLabel l = normalize_score(mos, lo, hi, delta);
      ASSERT_GE(l.level, 1);
      ASSERT_LE(l.level, 5);
      ASSERT_LE(std::abs(l.confidence), 0.5 * delta + 1e-12);
      const double q = (mos - lo) / (hi - lo) * 5.0 + 0.5;
      ASSERT_NEAR(denormalize(l, delta), q, 1e-12);
    }
  }
}

TEST(QualityScale, MonotoneInMos) {
  QualityLabel prev = normalize_score(0.0, 0.0, 1.0, 1.0);
  for (int i = 1; i <= 10000; ++i) {
    const QualityLabel l = normalize_score(i / 10000.0, 0.0, 1.0, 1.0);
    ASSERT_GE(l.q, prev.q);
    ASSERT_GE(l.level, prev.level);
    prev = l;
  }
}

// ---------------------------------------------------------------------------

TEST(Manifest, CsvRoundTrip) {
  DatasetManifest m;
  m.scale_min = 0;
  m.scale_max = 10;
  m.entries = {{"a.ply", 7.25, "shapeA"}, {"sub/b.ply", 0.125, "shapeB"}};
  const DatasetManifest back = parse_manifest_csv(manifest_to_csv(m), 0, 10);
  EXPECT_EQ(back, m);
}

TEST(Manifest, Errors) {
  EXPECT_THROW(parse_manifest_csv("file,mos,content\n", 0, 1), ParseError);
  EXPECT_THROW(parse_manifest_csv("path,mos,content_id\na.ply,x,c\n", 0, 1), ParseError);
  EXPECT_THROW(parse_manifest_csv("path,mos,content_id\na.ply,0.5\n", 0, 1), ParseError);
  EXPECT_THROW(parse_manifest_csv("path,mos,content_id\na.ply,2.0,c\n", 0, 1), ValidationError);
  EXPECT_THROW(parse_manifest_csv("path,mos,content_id\na.ply,0.5,\n", 0, 1), ValidationError);
}

// ---------------------------------------------------------------------------

TEST(Synth, DefaultCountsAndContents) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.points_per_shape = 2000;
  const SynthDataset ds = synth_dataset(cfg);
  EXPECT_EQ(ds.clouds.size(), 120u);
  EXPECT_EQ(ds.manifest.entries.size(), 120u);
  std::set<std::string> contents;
  for (const auto& e : ds.manifest.entries) contents.insert(e.content_id);
  EXPECT_EQ(contents.size(), 8u);
  for (const auto& c : ds.clouds) EXPECT_NO_THROW(c.validate());
}

TEST(Synth, SeverityZeroIsBestAndMosDecreases) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.points_per_shape = 1000;
  cfg.n_shapes = 2;
  const SynthDataset ds = synth_dataset(cfg);
  std::size_t i = 0;
  for (int s = 0; s < cfg.n_shapes; ++s) {
    for (const auto& d : cfg.distortions) {
      double prev = cfg.scale_max + 1.0;
      for (double sev : d.severities) {
        const double mos = ds.manifest.entries.at(i++).mos;
        if (sev == 0.0) EXPECT_EQ(mos, cfg.scale_max);
        EXPECT_LT(mos, prev);
        prev = mos;
      }
    }
  }
}

TEST(Synth, MosFunction) {
  EXPECT_DOUBLE_EQ(synthetic_mos(0, 4, 0, 10), 10.0);
  EXPECT_DOUBLE_EQ(synthetic_mos(4, 4, 0, 10), 0.0);
  EXPECT_NEAR(synthetic_mos(2, 4, 0, 10), 10.0 - 10.0 * std::pow(0.5, 0.8), 1e-12);
}

TEST(Synth, DeterministicBytes) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.points_per_shape = 1500;
  cfg.n_shapes = 3;
  const SynthDataset a = synth_dataset(cfg), b = synth_dataset(cfg);
  ASSERT_EQ(a.clouds.size(), b.clouds.size());
  for (std::size_t i = 0; i < a.clouds.size(); ++i) {
    EXPECT_EQ(write_ply(a.clouds[i], PlyEncoding::BinaryLittleEndian),
              write_ply(b.clouds[i], PlyEncoding::BinaryLittleEndian));
  }
  EXPECT_EQ(manifest_to_csv(a.manifest), manifest_to_csv(b.manifest));
}

TEST(Synth, ConfigErrors) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.n_shapes = 0;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
  cfg = SynthConfig::defaults();
  cfg.distortions[0].severities.clear();
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
  EXPECT_THROW(distortion_from_string("blur"), ConfigError);
}

}  // namespace
