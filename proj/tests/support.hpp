#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/registration.hpp"

namespace ulm::testing {

// k x k window sampled from a Gaussian blob at `center`, the window being
// centred on the nearest integer pixel (what localize would extract).
inline std::vector<float> blob_patch(const Vec2 &center, double sigma = 1.0, int k = 7,
                                     double amplitude = 1.0) {
  const int h = k / 2;
  const double pr = std::round(center.row), pc = std::round(center.col);
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(k * k));
  for (int r = -h; r <= h; ++r)
    for (int c = -h; c <= h; ++c) {
      const double dr = pr + r - center.row, dc = pc + c - center.col;
      out.push_back(static_cast<float>(amplitude * std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma))));
    }
  return out;
}

inline std::vector<float> random_patch(std::mt19937 &rng, int k = 7) {
  std::uniform_real_distribution<float> u(0.05f, 1.0f);
  std::vector<float> out(static_cast<std::size_t>(k * k));
  for (auto &v : out)
    v = u(rng);
  return out;
}

inline Bubble make_bubble(const Vec2 &p, std::vector<float> patch, int k = 7) {
  Bubble b;
  b.position = p;
  b.peak = {static_cast<int>(std::lround(p.row)), static_cast<int>(std::lround(p.col))};
  b.amplitude = 1.0;
  b.correlation = 1.0;
  b.patch_size = k;
  b.patch = std::move(patch);
  return b;
}

inline BubbleSet blob_set(const std::vector<Vec2> &positions, std::size_t frame = 0) {
  BubbleSet s;
  s.frame_index = frame;
  for (const auto &p : positions)
    s.bubbles.push_back(make_bubble(p, blob_patch(p)));
  return s;
}

// Rejection-sampled positions in [margin, size - margin]^2 with pairwise
// distance >= min_dist.
inline std::vector<Vec2> separated_points(std::mt19937 &rng, std::size_t n, double size,
                                          double min_dist, double margin = 4.0) {
  std::uniform_real_distribution<double> u(margin, size - margin);
  std::vector<Vec2> pts;
  int guard = 0;
  while (pts.size() < n && guard++ < 100000) {
    Vec2 p{u(rng), u(rng)};
    if (std::all_of(pts.begin(), pts.end(), [&](const Vec2 &q) { return distance(p, q) >= min_dist; }))
      pts.push_back(p);
  }
  return pts;
}

// Plain row-then-column Sinkhorn iteration written against nested vectors,
// with the same stopping rule as the library (checked before each sweep).
inline std::vector<std::vector<double>> reference_sinkhorn(std::vector<std::vector<double>> p,
                                                           int iters, double tol) {
  const std::size_t m = p.size(), n = p.empty() ? 0 : p[0].size();
  auto deviation = [&] {
    double d = 0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j)
        s += p[i][j];
      d = std::max(d, std::fabs(s - 1));
    }
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i)
        s += p[i][j];
      d = std::max(d, std::fabs(s - 1));
    }
    return d;
  };
  for (int k = 0; k < iters && deviation() >= tol; ++k) {
    for (auto &row : p) {
      double s = 0;
      for (double v : row)
        s += v;
      for (double &v : row)
        v /= s;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i)
        s += p[i][j];
      for (std::size_t i = 0; i < m; ++i)
        p[i][j] /= s;
    }
  }
  return p;
}

inline registration::ProbabilityMatrix to_matrix(const std::vector<std::vector<double>> &v) {
  registration::ProbabilityMatrix p(v.size(), v.empty() ? 0 : v[0].size());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j)
      p(i, j) = v[i][j];
  return p;
}

} // namespace ulm::testing
