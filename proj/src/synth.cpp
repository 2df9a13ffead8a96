#include "ulm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

namespace ulm::synth {

namespace {

constexpr double kMinAxialSpacingSigmas = 4.0;

struct MovingBubble {
  std::size_t id;
  int vessel;
  double axial;   // distance from the vessel inlet, px
  double lateral; // signed offset from the axis, px
};

Vec2 unit_axis(const Vessel &v) { return (1.0 / v.length()) * (v.end - v.start); }
Vec2 unit_normal(const Vessel &v) {
  const Vec2 e = unit_axis(v);
  return {-e.col, e.row};
}

// px per frame for a speed in m/s
double px_per_frame(const Scenario &s, double mps) {
  return mps * 1e3 / s.pixel_size_mm / s.frame_rate_hz;
}

// Lateral offset of a bubble entering at the inlet. Inflow is proportional
// to the local speed, which keeps the lumen uniformly populated over time.
double inflow_offset(std::mt19937_64 &rng, double radius) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const double u = 2.0 * unit(rng) - 1.0;
    if (unit(rng) <= 1.0 - u * u)
      return u * radius;
  }
}

} // namespace

void Scenario::validate() const {
  auto fail = [](const std::string &what) { throw ConfigError("invalid scenario: " + what); };
  if (height < 8 || width < 8)
    fail("frame must be at least 8x8 pixels");
  if (!(pixel_size_mm > 0.0f) || !(frame_rate_hz > 0.0f))
    fail("pixel_size_mm and frame_rate_hz must be positive");
  if (!(psf_sigma > 0.0))
    fail("psf_sigma must be positive");
  if (!(amplitude > 0.0))
    fail("amplitude must be positive");
  if (!(noise_std >= 0.0))
    fail("noise_std must be non-negative");
  if (n_bubbles > 0 && vessels.empty())
    fail("n_bubbles > 0 requires at least one vessel");
  auto inside = [&](const Vec2 &p) {
    return p.row >= 0.0 && p.col >= 0.0 && p.row <= height - 1 && p.col <= width - 1;
  };
  for (std::size_t k = 0; k < vessels.size(); ++k) {
    const auto &v = vessels[k];
    const std::string tag = "vessel " + std::to_string(k) + ": ";
    if (!(v.peak_speed_mps > 0.0))
      fail(tag + "peak speed must be positive");
    if (!(v.radius_px >= 1.0))
      fail(tag + "radius must be at least 1 px");
    if (!inside(v.start) || !inside(v.end))
      fail(tag + "endpoints must lie inside the frame");
    if (!(v.length() > 0.0))
      fail(tag + "zero length");
    const std::size_t assigned = n_bubbles / vessels.size() + (k < n_bubbles % vessels.size() ? 1 : 0);
    const auto capacity =
        static_cast<std::size_t>(std::floor(v.length() / (kMinAxialSpacingSigmas * psf_sigma)));
    if (assigned > capacity)
      fail(tag + std::to_string(assigned) + " bubbles exceed capacity " + std::to_string(capacity));
  }
  for (const auto &p : stationary)
    if (!inside(p))
      fail("stationary bubble outside the frame");
}

double profile_speed(const Vessel &v, double offset_px) {
  const double u = offset_px / v.radius_px;
  return v.peak_speed_mps * std::max(0.0, 1.0 - u * u);
}

void render_bubble(Grid<float> &frame, const Vec2 &center, double sigma, double amplitude) {
  const double reach = 6.0 * sigma;
  const int r0 = std::max(0, static_cast<int>(std::floor(center.row - reach)));
  const int r1 = std::min(frame.rows() - 1, static_cast<int>(std::ceil(center.row + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(center.col - reach)));
  const int c1 = std::min(frame.cols() - 1, static_cast<int>(std::ceil(center.col + reach)));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const double d2 = (r - center.row) * (r - center.row) + (c - center.col) * (c - center.col);
      frame(r, c) += static_cast<float>(amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
    }
}

Simulation simulate(const Scenario &s) {
  s.validate();
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::size_t next_id = 0;
  std::vector<MovingBubble> moving;
  const std::size_t nv = s.vessels.size();
  for (std::size_t k = 0; k < nv; ++k) {
    const Vessel &v = s.vessels[k];
    const std::size_t count = s.n_bubbles / nv + (k < s.n_bubbles % nv ? 1 : 0);
    const double phase = unit(rng);
    for (std::size_t b = 0; b < count; ++b) {
      const double axial = (static_cast<double>(b) + phase) * v.length() / static_cast<double>(count);
      const double lateral = (2.0 * unit(rng) - 1.0) * v.radius_px;
      moving.push_back({0, static_cast<int>(k), axial, lateral});
    }
  }
  // Stationary bubbles take the first ids, then vessel bubbles in order.
  std::vector<std::size_t> stationary_ids;
  for (std::size_t k = 0; k < s.stationary.size(); ++k)
    stationary_ids.push_back(next_id++);
  for (auto &b : moving)
    b.id = next_id++;

  const std::size_t plane = static_cast<std::size_t>(s.height) * static_cast<std::size_t>(s.width);
  std::vector<float> data;
  data.reserve(s.n_frames * plane);
  std::vector<TruthPoint> truth;
  std::normal_distribution<double> noise(0.0, s.noise_std * s.amplitude);

  for (std::size_t f = 0; f < s.n_frames; ++f) {
    Grid<float> frame(s.height, s.width);
    for (std::size_t k = 0; k < s.stationary.size(); ++k) {
      render_bubble(frame, s.stationary[k], s.psf_sigma, s.amplitude);
      truth.push_back({stationary_ids[k], f, s.stationary[k], {}, -1});
    }
    for (const auto &b : moving) {
      const Vessel &v = s.vessels[static_cast<std::size_t>(b.vessel)];
      const Vec2 pos = v.start + b.axial * unit_axis(v) + b.lateral * unit_normal(v);
      render_bubble(frame, pos, s.psf_sigma, s.amplitude);
      truth.push_back({b.id, f, pos, profile_speed(v, b.lateral) * unit_axis(v), b.vessel});
    }
    if (s.noise_std > 0.0)
      for (float &px : frame.values())
        px = static_cast<float>(std::max(0.0, px + noise(rng)));
    const auto vals = frame.values();
    data.insert(data.end(), vals.begin(), vals.end());

    for (auto &b : moving) {
      const Vessel &v = s.vessels[static_cast<std::size_t>(b.vessel)];
      b.axial += px_per_frame(s, profile_speed(v, b.lateral));
      if (b.axial > v.length()) {
        b.axial -= v.length();
        b.lateral = inflow_offset(rng, v.radius_px);
        b.id = next_id++;
      }
    }
  }
  std::sort(truth.begin(), truth.end(), [](const TruthPoint &a, const TruthPoint &b) {
    return a.frame != b.frame ? a.frame < b.frame : a.id < b.id;
  });
  return {FrameStack(s.n_frames, s.height, s.width, s.pixel_size_mm, s.frame_rate_hz, std::move(data)),
          std::move(truth)};
}

Assignment hungarian_assign(const std::vector<std::vector<double>> &cost) {
  Assignment out;
  const std::size_t rows = cost.size();
  if (rows == 0)
    return out;
  const std::size_t cols = cost[0].size();
  for (const auto &row : cost) {
    if (row.size() != cols)
      throw ContractError("cost matrix rows differ in length");
    for (double c : row)
      if (!std::isfinite(c))
        throw ContractError("cost matrix must be finite");
  }
  out.row_to_col.assign(rows, -1);
  if (cols == 0)
    return out;

  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows; // n <= m
  const std::size_t m = transposed ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) { return transposed ? cost[j][i] : cost[i][j]; };

  // Potentials method, 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j])
          continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0)
      continue;
    const std::size_t i = p[j] - 1, jj = j - 1;
    if (transposed)
      out.row_to_col[jj] = static_cast<int>(i);
    else
      out.row_to_col[i] = static_cast<int>(jj);
  }
  for (std::size_t i = 0; i < rows; ++i)
    if (out.row_to_col[i] >= 0)
      out.total_cost += cost[i][static_cast<std::size_t>(out.row_to_col[i])];
  return out;
}

std::vector<LabeledPoint> truth_points(std::span<const TruthPoint> truth) {
  std::vector<LabeledPoint> out;
  out.reserve(truth.size());
  for (const auto &t : truth)
    out.push_back({t.id, t.frame, t.position});
  return out;
}

namespace {

using FrameBuckets = std::map<std::size_t, std::vector<const LabeledPoint *>>;

FrameBuckets by_frame(std::span<const LabeledPoint> pts) {
  FrameBuckets out;
  for (const auto &p : pts)
    out[p.frame].push_back(&p);
  return out;
}

struct FrameMatch {
  const LabeledPoint *pred;
  const LabeledPoint *truth;
  double distance;
};

// Hungarian matching within one frame; pairs farther than tol are dropped.
std::vector<FrameMatch> match_frame(const std::vector<const LabeledPoint *> &pred,
                                    const std::vector<const LabeledPoint *> &truth, double tol) {
  std::vector<FrameMatch> out;
  if (pred.empty() || truth.empty())
    return out;
  const double big = 1e6 + 1e3 * tol;
  std::vector<std::vector<double>> cost(pred.size(), std::vector<double>(truth.size()));
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double d = distance(pred[i]->position, truth[j]->position);
      cost[i][j] = d <= tol ? d : big;
    }
  const auto a = hungarian_assign(cost);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int j = a.row_to_col[i];
    if (j < 0)
      continue;
    const double d = distance(pred[i]->position, truth[static_cast<std::size_t>(j)]->position);
    if (d <= tol)
      out.push_back({pred[i], truth[static_cast<std::size_t>(j)], d});
  }
  return out;
}

// Links between consecutive frames of the same identity.
std::size_t count_links(std::span<const LabeledPoint> pts) {
  std::map<std::size_t, std::vector<std::size_t>> frames_by_id;
  for (const auto &p : pts)
    frames_by_id[p.id].push_back(p.frame);
  std::size_t links = 0;
  for (auto &[id, frames] : frames_by_id) {
    std::sort(frames.begin(), frames.end());
    for (std::size_t k = 1; k < frames.size(); ++k)
      if (frames[k] == frames[k - 1] + 1)
        ++links;
  }
  return links;
}

} // namespace

Metrics evaluate(std::span<const LabeledPoint> detections, std::span<const LabeledPoint> track_points,
                 std::span<const LabeledPoint> truth, double tol) {
  if (!(tol > 0.0))
    throw ContractError("evaluation tolerance must be positive");
  Metrics m;
  m.predicted = detections.size();
  m.truth = truth.size();

  const FrameBuckets truth_frames = by_frame(truth);
  const FrameBuckets det_frames = by_frame(detections);
  double sq = 0.0;
  for (const auto &[frame, preds] : det_frames) {
    const auto it = truth_frames.find(frame);
    if (it == truth_frames.end())
      continue;
    for (const auto &match : match_frame(preds, it->second, tol)) {
      sq += match.distance * match.distance;
      ++m.matched;
    }
  }
  m.rmse = m.matched ? std::sqrt(sq / static_cast<double>(m.matched)) : 0.0;
  m.precision = m.predicted ? static_cast<double>(m.matched) / static_cast<double>(m.predicted) : 0.0;
  m.recall = m.truth ? static_cast<double>(m.matched) / static_cast<double>(m.truth) : 0.0;

  // Identity of each track point = truth id of its per-frame match.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> identity; // (track id, frame) -> truth id
  for (const auto &[frame, preds] : by_frame(track_points)) {
    const auto it = truth_frames.find(frame);
    if (it == truth_frames.end())
      continue;
    for (const auto &match : match_frame(preds, it->second, tol))
      identity[{match.pred->id, frame}] = match.truth->id;
  }
  std::map<std::size_t, std::vector<std::size_t>> frames_by_track;
  for (const auto &p : track_points)
    frames_by_track[p.id].push_back(p.frame);
  for (auto &[id, frames] : frames_by_track) {
    std::sort(frames.begin(), frames.end());
    for (std::size_t k = 1; k < frames.size(); ++k) {
      if (frames[k] != frames[k - 1] + 1)
        continue;
      ++m.predicted_links;
      const auto a = identity.find({id, frames[k - 1]});
      const auto b = identity.find({id, frames[k]});
      if (a != identity.end() && b != identity.end() && a->second == b->second)
        ++m.correct_links;
    }
  }
  m.truth_links = count_links(truth);
  m.identity_accuracy = m.predicted_links ? static_cast<double>(m.correct_links) /
                                                static_cast<double>(m.predicted_links)
                                          : 0.0;
  m.link_recall = m.truth_links ? static_cast<double>(m.correct_links) /
                                      static_cast<double>(m.truth_links)
                                : 0.0;
  return m;
}

} // namespace ulm::synth
