#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ulm/core.hpp"

namespace ulm::synth {

// Straight vessel with a parabolic (Poiseuille) speed profile across it.
struct Vessel {
  Vec2 start; // pixels
  Vec2 end;
  double radius_px = 2.0;
  double peak_speed_mps = 0.01;

  double length() const { return distance(start, end); }
};

struct Scenario {
  int height = 64;
  int width = 64;
  float pixel_size_mm = 0.1f;
  float frame_rate_hz = 100.0f;
  std::size_t n_frames = 100;
  std::vector<Vessel> vessels;
  std::size_t n_bubbles = 0; // distributed round-robin over vessels
  std::vector<Vec2> stationary; // bubbles that never move
  double psf_sigma = 1.0;       // pixels
  double amplitude = 1.0;
  double noise_std = 0.0; // relative to amplitude
  std::uint64_t seed = 1;

  // Throws ConfigError (including when a vessel holds more bubbles than fit
  // at 4 psf_sigma axial spacing).
  void validate() const;
};

// One ground-truth bubble in one frame. Identities change when a bubble
// leaves its vessel and re-enters at the inlet.
struct TruthPoint {
  std::size_t id = 0;
  std::size_t frame = 0;
  Vec2 position;
  Vec2 velocity_mps;
  int vessel = -1; // -1 for stationary bubbles
};

struct Simulation {
  FrameStack stack;
  std::vector<TruthPoint> truth; // sorted by (frame, id)
};

// Bubbles advect along vessel axes; each frame renders every bubble as an
// isotropic Gaussian plus zero-mean Gaussian noise, clamped at zero.
// Deterministic in the scenario (including the seed).
Simulation simulate(const Scenario &scenario);

// Speed of a bubble at lateral offset `offset_px` from the vessel axis.
double profile_speed(const Vessel &v, double offset_px);

// Renders a single Gaussian bubble into `frame`.
void render_bubble(Grid<float> &frame, const Vec2 &center, double sigma, double amplitude);

struct Assignment {
  std::vector<int> row_to_col; // -1 when the row is unassigned (rows > cols)
  double total_cost = 0;
};

// Minimum-cost one-to-one assignment (Hungarian method, O(n^2 m)). Every
// row is assigned when rows <= cols, every column otherwise.
Assignment hungarian_assign(const std::vector<std::vector<double>> &cost);

struct LabeledPoint {
  std::size_t id = 0; // track identity (ignored for bare detections)
  std::size_t frame = 0;
  Vec2 position;
};

struct Metrics {
  double rmse = 0;      // over matched detections, pixels
  double precision = 0; // matched / predicted detections
  double recall = 0;    // matched / truth detections
  double identity_accuracy = 0; // correct predicted links / predicted links
  double link_recall = 0;       // correct predicted links / truth links
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t truth = 0;
  std::size_t predicted_links = 0;
  std::size_t correct_links = 0;
  std::size_t truth_links = 0;
};

// Detections and track points are matched to truth per frame by
// hungarian_assign on Euclidean distance, accepting matches within `tol`.
// A predicted link (consecutive frames of one track) is correct when both
// ends match the same truth identity.
Metrics evaluate(std::span<const LabeledPoint> detections, std::span<const LabeledPoint> track_points,
                 std::span<const LabeledPoint> truth, double tol);

std::vector<LabeledPoint> truth_points(std::span<const TruthPoint> truth);

} // namespace ulm::synth
