#include "ulm/tracks.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace ulm::tracks {

std::vector<Track> link(std::span<const BubbleSet> sets,
                        std::span<const registration::Pairing> pairings, int min_track_length) {
  if (sets.empty())
    return {};
  if (pairings.size() + 1 != sets.size())
    throw ContractError("expected " + std::to_string(sets.size() - 1) + " pairings for " +
                        std::to_string(sets.size()) + " bubble sets, got " +
                        std::to_string(pairings.size()));
  for (std::size_t k = 1; k < sets.size(); ++k)
    if (sets[k].frame_index != sets[k - 1].frame_index + 1)
      throw ContractError("bubble sets are not on consecutive frames at position " +
                          std::to_string(k));

  std::vector<Track> finished;
  auto finish = [&](Track &&t) {
    if (t.points.size() >= static_cast<std::size_t>(min_track_length))
      finished.push_back(std::move(t));
  };
  auto point_of = [&](std::size_t k, std::size_t b) {
    if (b >= sets[k].size())
      throw ContractError("pairing references bubble " + std::to_string(b) + " beyond frame " +
                          std::to_string(sets[k].frame_index));
    return TrackPoint{sets[k].frame_index, sets[k].bubbles[b].position, b};
  };

  // bubble index in the current frame -> its open track
  std::map<std::size_t, Track> open;
  for (std::size_t b = 0; b < sets[0].size(); ++b)
    open[b].points.push_back(point_of(0, b));

  for (std::size_t k = 0; k + 1 < sets.size(); ++k) {
    std::map<std::size_t, Track> next;
    for (const auto &p : pairings[k].pairs) {
      auto it = open.find(p.ref);
      if (it == open.end() || next.count(p.tgt))
        throw ContractError("pairing between frames " + std::to_string(sets[k].frame_index) +
                            " and " + std::to_string(sets[k + 1].frame_index) +
                            " is not one-to-one");
      Track t = std::move(it->second);
      open.erase(it);
      t.points.push_back(point_of(k + 1, p.tgt));
      next.emplace(p.tgt, std::move(t));
    }
    for (auto &[b, t] : open)
      finish(std::move(t));
    for (std::size_t b = 0; b < sets[k + 1].size(); ++b)
      if (!next.count(b))
        next[b].points.push_back(point_of(k + 1, b));
    open = std::move(next);
  }
  for (auto &[b, t] : open)
    finish(std::move(t));

  std::sort(finished.begin(), finished.end(), [](const Track &a, const Track &b) {
    const auto &pa = a.points.front();
    const auto &pb = b.points.front();
    return pa.frame != pb.frame ? pa.frame < pb.frame : pa.bubble < pb.bubble;
  });
  for (std::size_t id = 0; id < finished.size(); ++id)
    finished[id].id = id;
  return finished;
}

Vec2 step_velocity(const Vec2 &p0, const Vec2 &p1, double pixel_size_mm, double frame_rate_hz) {
  if (!(pixel_size_mm > 0.0) || !(frame_rate_hz > 0.0))
    throw ContractError("pixel_size and frame_rate must be positive");
  return (p1 - p0) * (pixel_size_mm * 1e-3 * frame_rate_hz);
}

void assign_velocities(std::vector<Track> &tracks, double pixel_size_mm, double frame_rate_hz) {
  for (auto &t : tracks) {
    t.velocities.clear();
    for (std::size_t k = 0; k + 1 < t.points.size(); ++k)
      t.velocities.push_back(
          step_velocity(t.points[k].position, t.points[k + 1].position, pixel_size_mm, frame_rate_hz));
  }
}

std::vector<VelocitySample> velocity_samples(std::span<const Track> tracks) {
  std::vector<VelocitySample> out;
  for (const auto &t : tracks) {
    if (t.velocities.size() + 1 != t.points.size())
      throw ContractError("track " + std::to_string(t.id) + " has no velocities assigned");
    for (std::size_t k = 0; k < t.velocities.size(); ++k)
      out.push_back({0.5 * (t.points[k].position + t.points[k + 1].position), t.velocities[k], t.id});
  }
  return out;
}

} // namespace ulm::tracks
