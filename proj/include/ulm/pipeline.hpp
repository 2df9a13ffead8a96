#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ulm/core.hpp"
#include "ulm/csv_io.hpp"
#include "ulm/localize.hpp"
#include "ulm/maps.hpp"
#include "ulm/synth.hpp"
#include "ulm/tracks.hpp"

namespace ulm::pipeline {

inline constexpr const char *kToolVersion = "1.0.0";

// An error tagged with the pipeline stage that raised it.
class StageError : public Error {
public:
  StageError(std::string stage, const std::string &what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string &stage() const { return stage_; }

private:
  std::string stage_;
};

// Operator pick (frame + pixel) or synthetic Gaussian. With neither set the
// configured psf_sigma is used.
struct PsfChoice {
  std::optional<std::size_t> frame;
  std::optional<int> row;
  std::optional<int> col;
  std::optional<double> sigma;
};

localize::Psf resolve_psf(const FrameStack &stack, const PsfChoice &choice,
                          const PipelineConfig &config);
std::string describe_psf(const PsfChoice &choice, const PipelineConfig &config);

struct TrackingResult {
  std::vector<csv::FramePairing> pairings;
  std::vector<tracks::Track> tracks;
};

// Registers and pairs every consecutive frame pair (in parallel), then links
// tracks and assigns velocities.
TrackingResult track_bubbles(std::span<const BubbleSet> sets, const PipelineConfig &config,
                             double pixel_size_mm, double frame_rate_hz, int threads = 1);

// Rebuilds per-frame bubble sets from CSV rows, re-extracting appearance
// patches around the rounded positions in `stack`.
std::vector<BubbleSet> bubble_sets_from_rows(const FrameStack &stack,
                                             std::span<const csv::BubbleRow> rows,
                                             const PipelineConfig &config);

std::string sha256_file(const std::filesystem::path &path);

struct RunOptions {
  std::filesystem::path stack;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out_dir;
  int threads = 1;
  bool dump_pairings = false;
  PsfChoice psf;
};

struct RunSummary {
  std::size_t frames = 0;
  std::size_t bubbles = 0;
  std::size_t tracks = 0;
  std::size_t velocity_samples = 0;
  std::vector<std::filesystem::path> outputs;
};

// Output files written by cmd_run.
inline constexpr const char *kBubblesCsv = "bubbles.csv";
inline constexpr const char *kTracksCsv = "tracks.csv";
inline constexpr const char *kPairingsCsv = "pairings.csv";
inline constexpr const char *kDensityRaw = "density.ulmm";
inline constexpr const char *kDensityPgm = "density.pgm";
inline constexpr const char *kSpeedRaw = "speed.ulmm";
inline constexpr const char *kSpeedPgm = "speed.pgm";
inline constexpr const char *kSpeedCsv = "speed.csv";
inline constexpr const char *kManifest = "manifest.json";
inline constexpr const char *kStackFile = "stack.ulmf";
inline constexpr const char *kTruthCsv = "truth_tracks.csv";
inline constexpr const char *kMetricsCsv = "metrics.csv";

// localize -> track -> render, plus manifest.json.
RunSummary cmd_run(const RunOptions &options);

// stack.ulmf + truth_tracks.csv (+ scenario.txt echo) in out_dir.
void cmd_simulate(const std::filesystem::path &scenario, const std::filesystem::path &out_dir,
                  std::optional<std::uint64_t> seed = std::nullopt);

void cmd_localize(const RunOptions &options);
void cmd_track(const RunOptions &options, const std::filesystem::path &bubbles_csv);
void cmd_render(const RunOptions &options, const std::filesystem::path &bubbles_csv,
                const std::filesystem::path &tracks_csv);

// Reads bubbles.csv and tracks.csv from pred_dir, scores them against the
// truth CSV, writes metrics.csv to out_dir and returns the metrics.
synth::Metrics cmd_evaluate(const std::filesystem::path &pred_dir,
                            const std::filesystem::path &truth_csv, double tol,
                            const std::filesystem::path &out_dir);

std::string format_metrics(const synth::Metrics &m);

PipelineConfig load_config_or_default(const std::optional<std::filesystem::path> &path);

} // namespace ulm::pipeline
