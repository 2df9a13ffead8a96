#include "ulm/maps.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <Eigen/Dense>

#include "ulm/parallel.hpp"
#include "ulm/stack_io.hpp"

namespace ulm::maps {

namespace {

constexpr std::size_t kDensityChunkBudgetBytes = std::size_t{256} << 20;
constexpr std::size_t kMaxDensityChunks = 16;
constexpr double kTruncation = 4.0;

} // namespace

double DensityMap::total_mass() const {
  double s = 0.0;
  for (double v : values.values())
    s += v;
  return s;
}

void splat_gaussian(Grid<double> &grid, const Vec2 &c, double sigma) {
  const double reach = kTruncation * sigma;
  const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
  const int r0 = std::max(0, static_cast<int>(std::ceil(c.row - reach)));
  const int r1 = std::min(grid.rows() - 1, static_cast<int>(std::floor(c.row + reach)));
  const int c0 = std::max(0, static_cast<int>(std::ceil(c.col - reach)));
  const int c1 = std::min(grid.cols() - 1, static_cast<int>(std::floor(c.col + reach)));
  for (int r = r0; r <= r1; ++r) {
    for (int col = c0; col <= c1; ++col) {
      const double d2 = (r - c.row) * (r - c.row) + (col - c.col) * (col - c.col);
      if (d2 > reach * reach)
        continue;
      grid(r, col) += norm * std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
}

DensityMap render_density(std::span<const BubbleSet> sets, int height, int width,
                          const PipelineConfig &config, int threads) {
  config.validate();
  const int sr = config.sr_factor;
  DensityMap map{Grid<double>(height * sr, width * sr), sr, config.density_sigma};
  if (sets.empty())
    return map;

  // Partial grids are split by frame range only, so the summation order
  // does not depend on the worker count.
  const std::size_t grid_bytes = std::max<std::size_t>(1, map.values.size() * sizeof(double));
  const std::size_t chunks = std::clamp<std::size_t>(
      std::min(kDensityChunkBudgetBytes / grid_bytes, sets.size()), 1, kMaxDensityChunks);
  std::vector<Grid<double>> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t q) {
    Grid<double> g(map.values.rows(), map.values.cols());
    const std::size_t begin = q * sets.size() / chunks;
    const std::size_t end = (q + 1) * sets.size() / chunks;
    for (std::size_t f = begin; f < end; ++f)
      for (const auto &b : sets[f].bubbles)
        splat_gaussian(g, b.position * static_cast<double>(sr), config.density_sigma);
    partial[q] = std::move(g);
  });
  auto out = map.values.values();
  for (const auto &g : partial) {
    const auto in = g.values();
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] += in[k];
  }
  return map;
}

std::vector<Neighbor> gather_in_circle(std::span<const tracks::VelocitySample> samples,
                                       const Vec2 &center, double radius) {
  if (!(radius > 0.0))
    throw ContractError("gather radius must be positive");
  std::vector<Neighbor> out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double d = distance(samples[k].position, center);
    if (d <= radius)
      out.push_back({k, d});
  }
  return out;
}

std::vector<std::size_t> pca_reject(std::span<const Vec2> velocities) {
  const std::size_t n = velocities.size();
  std::vector<std::size_t> keep;
  keep.reserve(n);
  if (n < 2) {
    for (std::size_t k = 0; k < n; ++k)
      keep.push_back(k);
    return keep;
  }
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto &v : velocities)
    mean += Eigen::Vector2d(v.row, v.col);
  mean /= static_cast<double>(n);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto &v : velocities) {
    const Eigen::Vector2d d = Eigen::Vector2d(v.row, v.col) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Matrix2d axes = eig.eigenvectors();
  Eigen::Vector2d stddev;
  for (int a = 0; a < 2; ++a)
    stddev(a) = std::sqrt(std::max(0.0, eig.eigenvalues()(a)));

  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector2d proj =
        axes.transpose() * (Eigen::Vector2d(velocities[k].row, velocities[k].col) - mean);
    bool inlier = true;
    for (int a = 0; a < 2; ++a)
      if (stddev(a) >= 1e-12 && std::fabs(proj(a)) > 3.0 * stddev(a))
        inlier = false;
    if (inlier)
      keep.push_back(k);
  }
  return keep;
}

std::optional<Vec2> weighted_mean_velocity(std::span<const Vec2> velocities,
                                           std::span<const double> distances, double avg_sigma) {
  if (velocities.size() != distances.size())
    throw ContractError("velocity and distance lists differ in length");
  if (!(avg_sigma > 0.0))
    throw ContractError("avg_sigma must be positive");
  if (velocities.empty())
    return std::nullopt;
  double wsum = 0.0;
  Vec2 acc;
  for (std::size_t k = 0; k < velocities.size(); ++k) {
    const double w = std::exp(-distances[k] * distances[k] / (2.0 * avg_sigma * avg_sigma));
    wsum += w;
    acc += w * velocities[k];
  }
  if (!(wsum > 0.0))
    return std::nullopt;
  return (1.0 / wsum) * acc;
}

Grid<double> VelocityField::speed() const {
  Grid<double> s(velocity.rows(), velocity.cols());
  for (int r = 0; r < s.rows(); ++r)
    for (int c = 0; c < s.cols(); ++c)
      s(r, c) = valid(r, c) ? velocity(r, c).norm() : 0.0;
  return s;
}

namespace {

// Uniform bucket grid over SR coordinates for circle queries.
class SampleIndex {
public:
  SampleIndex(std::span<const tracks::VelocitySample> samples, double cell, int rows, int cols)
      : cell_(cell), brows_(std::max(1, static_cast<int>(std::ceil(rows / cell)) + 1)),
        bcols_(std::max(1, static_cast<int>(std::ceil(cols / cell)) + 1)),
        buckets_(static_cast<std::size_t>(brows_) * static_cast<std::size_t>(bcols_)) {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto [br, bc] = bucket_of(samples[k].position);
      buckets_[static_cast<std::size_t>(br) * static_cast<std::size_t>(bcols_) +
               static_cast<std::size_t>(bc)]
          .push_back(k);
    }
  }

  // Candidate sample indices in every bucket touching the query disc.
  void candidates(const Vec2 &center, double radius, std::vector<std::size_t> &out) const {
    out.clear();
    const int reach = static_cast<int>(std::ceil(radius / cell_));
    const auto [br, bc] = bucket_of(center);
    for (int r = std::max(0, br - reach); r <= std::min(brows_ - 1, br + reach); ++r)
      for (int c = std::max(0, bc - reach); c <= std::min(bcols_ - 1, bc + reach); ++c) {
        const auto &b = buckets_[static_cast<std::size_t>(r) * static_cast<std::size_t>(bcols_) +
                                 static_cast<std::size_t>(c)];
        out.insert(out.end(), b.begin(), b.end());
      }
    std::sort(out.begin(), out.end());
  }

private:
  std::pair<int, int> bucket_of(const Vec2 &p) const {
    const int r = std::clamp(static_cast<int>(std::floor(p.row / cell_)), 0, brows_ - 1);
    const int c = std::clamp(static_cast<int>(std::floor(p.col / cell_)), 0, bcols_ - 1);
    return {r, c};
  }

  double cell_;
  int brows_;
  int bcols_;
  std::vector<std::vector<std::size_t>> buckets_;
};

} // namespace

VelocityField render_velocity(std::span<const tracks::VelocitySample> samples, int height, int width,
                              const PipelineConfig &config, int threads) {
  config.validate();
  const int sr = config.sr_factor;
  const int rows = height * sr, cols = width * sr;
  VelocityField field{Grid<Vec2>(rows, cols), Grid<int>(rows, cols), Grid<std::uint8_t>(rows, cols), sr};

  std::vector<tracks::VelocitySample> scaled(samples.begin(), samples.end());
  for (auto &s : scaled)
    s.position = s.position * static_cast<double>(sr);
  // Samples far outside the grid are clamped into edge buckets; the exact
  // distance test below still decides membership.
  const SampleIndex index(scaled, config.gather_radius, rows, cols);

  parallel_for(static_cast<std::size_t>(rows), threads, [&](std::size_t row) {
    const int r = static_cast<int>(row);
    std::vector<std::size_t> cand;
    std::vector<Vec2> velocities;
    std::vector<double> distances;
    for (int c = 0; c < cols; ++c) {
      const Vec2 center{static_cast<double>(r), static_cast<double>(c)};
      index.candidates(center, config.gather_radius, cand);
      velocities.clear();
      distances.clear();
      for (std::size_t k : cand) {
        const double d = distance(scaled[k].position, center);
        if (d <= config.gather_radius) {
          velocities.push_back(scaled[k].velocity);
          distances.push_back(d);
        }
      }
      if (velocities.empty())
        continue;
      const auto keep = pca_reject(velocities);
      std::vector<Vec2> kv;
      std::vector<double> kd;
      for (std::size_t k : keep) {
        kv.push_back(velocities[k]);
        kd.push_back(distances[k]);
      }
      const auto mean = weighted_mean_velocity(kv, kd, config.avg_sigma);
      if (!mean)
        continue;
      field.velocity(r, c) = *mean;
      field.count(r, c) = static_cast<int>(kv.size());
      field.valid(r, c) = 1;
    }
  });
  return field;
}

void write_map_raw(const std::filesystem::path &path, const Grid<double> &grid) {
  std::vector<std::uint8_t> out{'U', 'L', 'M', 'M'};
  le::put_u32(out, static_cast<std::uint32_t>(grid.rows()));
  le::put_u32(out, static_cast<std::uint32_t>(grid.cols()));
  for (double v : grid.values())
    le::put_f32(out, static_cast<float>(v));
  write_file_bytes(path, out);
}

Grid<float> read_map_raw(const std::filesystem::path &path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "ULMM", 4) != 0)
    throw FormatError(path.string() + ": bad magic (expected \"ULMM\") at byte offset 0");
  const std::uint32_t h = le::get_u32(bytes, 4);
  const std::uint32_t w = le::get_u32(bytes, 8);
  const std::uint64_t count = std::uint64_t{h} * w;
  if (bytes.size() != 12 + 4 * count)
    throw FormatError(path.string() + ": payload size mismatch at byte offset 12");
  Grid<float> g(static_cast<int>(h), static_cast<int>(w));
  auto v = g.values();
  for (std::size_t k = 0; k < v.size(); ++k)
    v[k] = le::get_f32(bytes, 12 + 4 * k);
  return g;
}

void write_pgm16(const std::filesystem::path &path, const Grid<double> &grid) {
  const auto v = grid.values();
  double lo = 0.0, hi = 0.0;
  if (!v.empty()) {
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    lo = *mn;
    hi = *mx;
  }
  const std::string header =
      "P5\n" + std::to_string(grid.cols()) + " " + std::to_string(grid.rows()) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 2 * v.size());
  for (double x : v) {
    const double t = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(t, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<std::uint8_t>(q >> 8)); // PGM samples are big-endian
    out.push_back(static_cast<std::uint8_t>(q & 0xFF));
  }
  write_file_bytes(path, out);
}

void write_speed_csv(const std::filesystem::path &path, const VelocityField &field) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path.string() + "' for writing");
  out << "row,col,vr,vc,speed\n";
  char line[160];
  for (int r = 0; r < field.velocity.rows(); ++r)
    for (int c = 0; c < field.velocity.cols(); ++c) {
      if (!field.valid(r, c))
        continue;
      const Vec2 v = field.velocity(r, c);
      std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g,%.9g\n", r, c, v.row, v.col, v.norm());
      out << line;
    }
  if (!out)
    throw IoError("write failure on '" + path.string() + "'");
}

} // namespace ulm::maps
