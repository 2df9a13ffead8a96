#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/registration.hpp"
#include "ulm/synth.hpp"
#include "ulm/tracks.hpp"

namespace ulm::csv {

// frame,row,col,amplitude  (positions with 4 decimals)
void write_bubbles(const std::filesystem::path &path, std::span<const BubbleSet> sets);

struct BubbleRow {
  std::size_t frame = 0;
  Vec2 position;
  double amplitude = 0;
};
std::vector<BubbleRow> read_bubbles(const std::filesystem::path &path);

// track_id,frame,row,col,vr_mps,vc_mps
// Point k >= 1 carries the velocity of the step arriving at it; the first
// point carries the first step's velocity.
void write_tracks(const std::filesystem::path &path, std::span<const tracks::Track> tracks);

// Ground truth in the same schema; each point carries its true velocity.
void write_truth(const std::filesystem::path &path, std::span<const synth::TruthPoint> truth);

struct TrackRow {
  std::size_t track_id = 0;
  std::size_t frame = 0;
  Vec2 position;
  Vec2 velocity;
};
std::vector<TrackRow> read_tracks(const std::filesystem::path &path);

// Rebuilds tracks (points + per-step velocities) from track rows; the
// velocities are recomputed from positions.
std::vector<tracks::Track> tracks_from_rows(std::span<const TrackRow> rows, double pixel_size_mm,
                                            double frame_rate_hz);

struct FramePairing {
  std::size_t frame = 0; // reference frame
  registration::Pairing pairing;
};

// frame,i,j,prob,dist_px
void write_pairings(const std::filesystem::path &path, std::span<const FramePairing> pairings);

} // namespace ulm::csv
