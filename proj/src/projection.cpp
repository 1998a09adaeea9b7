#include "d3pcqa/projection.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <json.hpp>

#include "d3pcqa/errors.hpp"

namespace d3pcqa {

std::size_t ProjectionSet::occupied_pixels() const noexcept {
  std::size_t n = 0;
  for (const auto& occ : occupancy) {
    for (auto v : occ) n += v ? 1 : 0;
  }
  return n;
}

PointCloud rescale_to_cube(const PointCloud& cloud, int size) {
  cloud.validate();
  if (size < 2) throw ValidationError("projection size must be at least 2");
  Point3 lo = cloud.points.front(), hi = cloud.points.front();
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  const double half = 0.5 * (size - 1);
  const double scale = extent > 0 ? (size - 1) / extent : 0.0;
  PointCloud out = cloud;
  for (auto& p : out.points) {
    for (int a = 0; a < 3; ++a) {
      const double center = 0.5 * (lo[a] + hi[a]);
      p[a] = (p[a] - center) * scale + half;
    }
  }
  return out;
}

namespace {

struct FaceAxes {
  int depth_axis;
  int u_axis;
  int v_axis;
  bool high_side;
};

FaceAxes face_axes(int face) {
  const int a = face / 2;
  return {a, (a + 1) % 3, (a + 2) % 3, face % 2 == 1};
}

int to_pixel(double c, int size) {
  const long r = std::lround(c);
  return static_cast<int>(std::clamp<long>(r, 0, size - 1));
}

}  // namespace

ProjectionSet project(const PointCloud& cube_cloud, int size) {
  cube_cloud.validate();
  if (size < 2) throw ValidationError("projection size must be at least 2");
  ProjectionSet proj;
  proj.size = size;
  const std::size_t npx = proj.pixels();
  const double far = static_cast<double>(size - 1);

  for (int face = 0; face < kNumViews; ++face) {
    const FaceAxes ax = face_axes(face);
    std::vector<double> zbuf(npx, std::numeric_limits<double>::infinity());
    std::vector<std::int64_t> winner(npx, -1);
    for (std::size_t i = 0; i < cube_cloud.size(); ++i) {
      const auto& p = cube_cloud.points[i];
      const double dist = ax.high_side ? far - p[ax.depth_axis] : p[ax.depth_axis];
      int u = to_pixel(p[ax.u_axis], size);
      const int v = to_pixel(p[ax.v_axis], size);
      if (ax.high_side) u = size - 1 - u;  // view from outside the cube
      const std::size_t px = static_cast<std::size_t>(v) * size + u;
      if (dist < zbuf[px]) {
        zbuf[px] = dist;
        winner[px] = static_cast<std::int64_t>(i);
      }
    }
    auto& tex = proj.textures[face];
    auto& dep = proj.depths[face];
    auto& occ = proj.occupancy[face];
    tex.assign(npx * 3, kBackgroundGray);
    dep.assign(npx, 0.0);
    occ.assign(npx, 0);
    for (std::size_t px = 0; px < npx; ++px) {
      if (winner[px] < 0) continue;
      const auto& c = cube_cloud.colors[static_cast<std::size_t>(winner[px])];
      for (int k = 0; k < 3; ++k) tex[px * 3 + k] = c[k] / 255.0;
      dep[px] = 1.0 - std::max(zbuf[px], 0.0) / size;
      occ[px] = 1;
    }
  }
  return proj;
}

double estimate_density(const ProjectionSet& proj, std::size_t n_points) {
  const std::size_t occupied = proj.occupied_pixels();
  if (occupied == 0) throw ValidationError("density: projection has no occupied pixel");
  return static_cast<double>(n_points) / static_cast<double>(occupied);
}

int blur_radius_for(double delta_rho, double k_blur) noexcept {
  if (!(delta_rho > 0)) return 0;
  return static_cast<int>(std::ceil(k_blur * delta_rho));
}

std::vector<double> masked_box_mean(std::span<const double> image,
                                    std::span<const std::uint8_t> mask, int size, int channels,
                                    int radius) {
  const std::size_t npx = static_cast<std::size_t>(size) * size;
  std::vector<double> out(image.begin(), image.end());
  if (radius <= 0) return out;
  // Separable masked sums: horizontal then vertical.
  std::vector<double> hsum(npx * channels, 0.0), hcnt(npx, 0.0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * size + x;
      const int x0 = std::max(0, x - radius), x1 = std::min(size - 1, x + radius);
      for (int xx = x0; xx <= x1; ++xx) {
        const std::size_t q = static_cast<std::size_t>(y) * size + xx;
        if (!mask[q]) continue;
        hcnt[px] += 1.0;
        for (int c = 0; c < channels; ++c) hsum[px * channels + c] += image[q * channels + c];
      }
    }
  }
  std::vector<double> acc(channels);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * size + x;
      if (!mask[px]) continue;
      const int y0 = std::max(0, y - radius), y1 = std::min(size - 1, y + radius);
      double cnt = 0.0;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int yy = y0; yy <= y1; ++yy) {
        const std::size_t q = static_cast<std::size_t>(yy) * size + x;
        cnt += hcnt[q];
        for (int c = 0; c < channels; ++c) acc[c] += hsum[q * channels + c];
      }
      for (int c = 0; c < channels; ++c) out[px * channels + c] = acc[c] / cnt;
    }
  }
  return out;
}

ProjectionSet differentiated_blur(const ProjectionSet& proj, double tau_density, double k_blur) {
  if (!(tau_density > 0)) throw ValidationError("tau_density must be positive");
  if (!(k_blur >= 0)) throw ValidationError("k_blur must be non-negative");
  ProjectionSet out = proj;
  out.delta_rho = tau_density - proj.density;
  out.blur_radius = std::min(blur_radius_for(out.delta_rho, k_blur), proj.size);
  if (out.blur_radius == 0) return out;
  for (int face = 0; face < kNumViews; ++face) {
    out.textures[face] =
        masked_box_mean(proj.textures[face], proj.occupancy[face], proj.size, 3, out.blur_radius);
  }
  return out;
}

ProjectionSet render(const PointCloud& cloud, const ProjectionConfig& config) {
  ProjectionSet proj = project(rescale_to_cube(cloud, config.size), config.size);
  proj.density = estimate_density(proj, cloud.size());
  return differentiated_blur(proj, config.tau_density, config.k_blur);
}

std::vector<ProjectionSet> render_batch(std::span<const PointCloud> clouds,
                                        const ProjectionConfig& config) {
  std::vector<ProjectionSet> out(clouds.size());
  const auto n = static_cast<std::ptrdiff_t>(clouds.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = render(clouds[static_cast<std::size_t>(i)], config);
  }
  return out;
}

namespace {

void write_png(const std::filesystem::path& path, int size, int channels,
               const std::vector<std::uint8_t>& pixels) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, size, size, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < size; ++y) {
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * size * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::vector<std::uint8_t> to_bytes(const std::vector<double>& v) {
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v[i] * 255.0), 0L, 255L));
  }
  return out;
}

}  // namespace

void dump_projection(const ProjectionSet& proj, const std::filesystem::path& dir,
                     const std::string& stem) {
  std::filesystem::create_directories(dir);
  for (int face = 0; face < kNumViews; ++face) {
    write_png(dir / (stem + "_tex" + std::to_string(face) + ".png"), proj.size, 3,
              to_bytes(proj.textures[face]));
    write_png(dir / (stem + "_depth" + std::to_string(face) + ".png"), proj.size, 1,
              to_bytes(proj.depths[face]));
  }
  nlohmann::json meta{{"rho", proj.density}, {"delta_rho", proj.delta_rho}, {"R", proj.blur_radius}};
  std::ofstream(dir / (stem + ".json")) << meta.dump(2) << '\n';
}

}  // namespace d3pcqa
