#pragma once

#include <span>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/registration.hpp"

namespace ulm::tracks {

struct TrackPoint {
  std::size_t frame = 0;
  Vec2 position;
  std::size_t bubble = 0; // index within that frame's BubbleSet
};

// A chain of bubbles over strictly consecutive frames. velocities[k] is the
// step from points[k] to points[k+1], in m/s.
struct Track {
  std::size_t id = 0;
  std::vector<TrackPoint> points;
  std::vector<Vec2> velocities;
};

struct VelocitySample {
  Vec2 position; // step midpoint, CEUS pixels
  Vec2 velocity; // (v_r, v_c), m/s
  std::size_t track_id = 0;

  double speed() const { return velocity.norm(); }
};

// pairings[k] pairs sets[k] (reference) with sets[k+1] (target); frame
// indices must be consecutive. Tracks shorter than min_track_length points
// are dropped; survivors are numbered in order of (start frame, bubble).
// Velocities are left empty; see assign_velocities.
std::vector<Track> link(std::span<const BubbleSet> sets,
                        std::span<const registration::Pairing> pairings, int min_track_length);

// (p1 - p0) * pixel_size * 1e-3 * frame_rate, componentwise.
Vec2 step_velocity(const Vec2 &p0, const Vec2 &p1, double pixel_size_mm, double frame_rate_hz);

void assign_velocities(std::vector<Track> &tracks, double pixel_size_mm, double frame_rate_hz);

// One sample per step, anchored at the step midpoint.
std::vector<VelocitySample> velocity_samples(std::span<const Track> tracks);

} // namespace ulm::tracks
