#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/tracks.hpp"

namespace ulm::maps {

// Super-resolution localization density: (height*sr) x (width*sr) grid of
// accumulated unit-mass Gaussians.
struct DensityMap {
  Grid<double> values;
  int sr_factor = 1;
  double sigma = 1.0; // SR pixels

  double total_mass() const;
};

// Adds one Gaussian (sigma in SR px, truncated at 4 sigma) centered at
// position * sr_factor to `grid`.
void splat_gaussian(Grid<double> &grid, const Vec2 &sr_center, double sigma);

DensityMap render_density(std::span<const BubbleSet> sets, int height, int width,
                          const PipelineConfig &config, int threads = 1);

struct Neighbor {
  std::size_t index = 0; // into the sample list
  double distance = 0;
};

// Samples whose position lies within the closed disc of `radius` around
// `center`, in ascending index order. Positions and radius share one
// coordinate system.
std::vector<Neighbor> gather_in_circle(std::span<const tracks::VelocitySample> samples,
                                       const Vec2 &center, double radius);

// Indices of the samples kept by the 3-sigma rule along both principal axes
// of the velocity covariance. Fewer than two samples pass through.
std::vector<std::size_t> pca_reject(std::span<const Vec2> velocities);

// Gaussian distance-weighted mean; nullopt for an empty set.
std::optional<Vec2> weighted_mean_velocity(std::span<const Vec2> velocities,
                                           std::span<const double> distances, double avg_sigma);

struct VelocityField {
  Grid<Vec2> velocity; // m/s; zero where invalid
  Grid<int> count;     // inliers averaged at each point
  Grid<std::uint8_t> valid;
  int sr_factor = 1;

  Grid<double> speed() const;
};

// Samples are in CEUS pixels and are mapped onto the SR grid internally.
VelocityField render_velocity(std::span<const tracks::VelocitySample> samples, int height, int width,
                              const PipelineConfig &config, int threads = 1);

// "ULMM" | u32 h | u32 w | h*w f32, little-endian.
void write_map_raw(const std::filesystem::path &path, const Grid<double> &grid);
Grid<float> read_map_raw(const std::filesystem::path &path);

// Binary 16-bit PGM (P5, maxval 65535) after min-max scaling.
void write_pgm16(const std::filesystem::path &path, const Grid<double> &grid);

// Valid points only: row,col,vr,vc,speed
void write_speed_csv(const std::filesystem::path &path, const VelocityField &field);

} // namespace ulm::maps
