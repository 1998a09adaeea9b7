#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "d3pcqa/ingest.hpp"

namespace d3pcqa {

inline constexpr int kNumViews = 6;
inline constexpr double kBackgroundGray = 0.5;

/// Six orthographic views of one cloud. Images are row-major, `size x size`;
/// textures are interleaved RGB in [0,1], depths in [0,1] with 1 nearest and
/// 0 meaning "no point".
struct ProjectionSet {
  int size = 0;
  std::array<std::vector<double>, kNumViews> textures;
  std::array<std::vector<double>, kNumViews> depths;
  std::array<std::vector<std::uint8_t>, kNumViews> occupancy;
  double density = 0.0;     // points per occupied pixel
  double delta_rho = 0.0;   // tau_density - density
  int blur_radius = 0;

  [[nodiscard]] std::size_t pixels() const noexcept {
    return static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
  }
  [[nodiscard]] std::size_t occupied_pixels() const noexcept;

  friend bool operator==(const ProjectionSet&, const ProjectionSet&) = default;
};

struct ProjectionConfig {
  int size = 64;
  double tau_density = 1.0;
  double k_blur = 4.0;
};

/// Isotropic scale + translation placing the bounding box's longest side on
/// [0, size-1], centered in the cube. A degenerate cloud collapses onto the
/// cube center.
PointCloud rescale_to_cube(const PointCloud& cloud, int size);

/// Z-buffered orthographic projection onto the six cube faces. Face 2a is the
/// low side of axis a, face 2a+1 the high side. The nearest point wins a pixel,
/// ties go to the lower point index. Density/blur fields are left at zero.
ProjectionSet project(const PointCloud& cube_cloud, int size);

/// n_points / occupied pixels over all six faces.
double estimate_density(const ProjectionSet& proj, std::size_t n_points);

/// Blur radius for a density deficit: ceil(k * delta) when delta > 0, else 0.
int blur_radius_for(double delta_rho, double k_blur) noexcept;

/// Masked mean filter of the textures with a Chebyshev radius driven by the
/// density deficit. Unoccupied pixels are neither sampled nor modified; depth
/// images are copied through. Uses `proj.density`.
ProjectionSet differentiated_blur(const ProjectionSet& proj, double tau_density, double k_blur);

/// Masked box mean of one interleaved image with `channels` channels.
std::vector<double> masked_box_mean(std::span<const double> image,
                                    std::span<const std::uint8_t> mask, int size,
                                    int channels, int radius);

/// rescale -> project -> density -> blur.
ProjectionSet render(const PointCloud& cloud, const ProjectionConfig& config);

/// Renders each cloud independently; parallel across clouds, output identical
/// for any thread count.
std::vector<ProjectionSet> render_batch(std::span<const PointCloud> clouds,
                                        const ProjectionConfig& config);

/// Debug dump: `<stem>_tex<i>.png`, `<stem>_depth<i>.png` and `<stem>.json`
/// holding {rho, delta_rho, R}.
void dump_projection(const ProjectionSet& proj, const std::filesystem::path& dir,
                     const std::string& stem);

}  // namespace d3pcqa
