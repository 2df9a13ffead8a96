#include "ulm/csv_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace ulm::csv {

namespace {

std::ofstream open_out(const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish(std::ofstream &out, const std::filesystem::path &path) {
  out.flush();
  if (!out)
    throw IoError("write failure on '" + path.string() + "'");
}

// Reads a CSV with the exact expected header; returns the split rows.
std::vector<std::vector<std::string>> read_rows(const std::filesystem::path &path,
                                                const std::string &header, std::size_t fields) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path.string() + "' for reading");
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw FormatError(path.string() + ":1: expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    if (cells.size() != fields)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(fields) + " fields");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double to_double(const std::string &s, const std::filesystem::path &path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw FormatError(path.string() + ": cannot parse '" + s + "' as a number");
  }
}

std::size_t to_index(const std::string &s, const std::filesystem::path &path) {
  const double v = to_double(s, path);
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
    throw FormatError(path.string() + ": '" + s + "' is not a non-negative integer");
  return static_cast<std::size_t>(v);
}

} // namespace

void write_bubbles(const std::filesystem::path &path, std::span<const BubbleSet> sets) {
  auto out = open_out(path);
  out << "frame,row,col,amplitude\n";
  char line[128];
  for (const auto &set : sets)
    for (const auto &b : set.bubbles) {
      std::snprintf(line, sizeof line, "%zu,%.4f,%.4f,%.6g\n", set.frame_index, b.position.row,
                    b.position.col, b.amplitude);
      out << line;
    }
  finish(out, path);
}

std::vector<BubbleRow> read_bubbles(const std::filesystem::path &path) {
  std::vector<BubbleRow> out;
  for (const auto &r : read_rows(path, "frame,row,col,amplitude", 4))
    out.push_back({to_index(r[0], path), {to_double(r[1], path), to_double(r[2], path)},
                   to_double(r[3], path)});
  return out;
}

void write_tracks(const std::filesystem::path &path, std::span<const tracks::Track> tracks) {
  auto out = open_out(path);
  out << "track_id,frame,row,col,vr_mps,vc_mps\n";
  char line[192];
  for (const auto &t : tracks) {
    for (std::size_t k = 0; k < t.points.size(); ++k) {
      Vec2 v;
      if (!t.velocities.empty())
        v = t.velocities[k == 0 ? 0 : k - 1];
      std::snprintf(line, sizeof line, "%zu,%zu,%.4f,%.4f,%.9g,%.9g\n", t.id, t.points[k].frame,
                    t.points[k].position.row, t.points[k].position.col, v.row, v.col);
      out << line;
    }
  }
  finish(out, path);
}

void write_truth(const std::filesystem::path &path, std::span<const synth::TruthPoint> truth) {
  auto out = open_out(path);
  out << "track_id,frame,row,col,vr_mps,vc_mps\n";
  char line[192];
  for (const auto &p : truth) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.4f,%.4f,%.9g,%.9g\n", p.id, p.frame, p.position.row,
                  p.position.col, p.velocity_mps.row, p.velocity_mps.col);
    out << line;
  }
  finish(out, path);
}

std::vector<TrackRow> read_tracks(const std::filesystem::path &path) {
  std::vector<TrackRow> out;
  for (const auto &r : read_rows(path, "track_id,frame,row,col,vr_mps,vc_mps", 6))
    out.push_back({to_index(r[0], path), to_index(r[1], path),
                   {to_double(r[2], path), to_double(r[3], path)},
                   {to_double(r[4], path), to_double(r[5], path)}});
  return out;
}

std::vector<tracks::Track> tracks_from_rows(std::span<const TrackRow> rows, double pixel_size_mm,
                                            double frame_rate_hz) {
  std::map<std::size_t, std::map<std::size_t, Vec2>> by_id;
  for (const auto &r : rows)
    if (!by_id[r.track_id].emplace(r.frame, r.position).second)
      throw FormatError("track " + std::to_string(r.track_id) + " lists frame " +
                        std::to_string(r.frame) + " twice");
  std::vector<tracks::Track> out;
  for (const auto &[id, points] : by_id) {
    tracks::Track t;
    t.id = id;
    for (const auto &[frame, pos] : points) {
      if (!t.points.empty() && t.points.back().frame + 1 != frame)
        throw FormatError("track " + std::to_string(id) + " skips from frame " +
                          std::to_string(t.points.back().frame) + " to " + std::to_string(frame));
      t.points.push_back({frame, pos, 0});
    }
    out.push_back(std::move(t));
  }
  tracks::assign_velocities(out, pixel_size_mm, frame_rate_hz);
  return out;
}

void write_pairings(const std::filesystem::path &path, std::span<const FramePairing> pairings) {
  auto out = open_out(path);
  out << "frame,i,j,prob,dist_px\n";
  char line[160];
  for (const auto &fp : pairings)
    for (const auto &p : fp.pairing.pairs) {
      std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.9g,%.6f\n", fp.frame, p.ref, p.tgt,
                    p.probability, p.distance);
      out << line;
    }
  finish(out, path);
}

} // namespace ulm::csv
