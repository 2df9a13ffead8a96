#include "ulm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <openssl/evp.h>

#include "json.hpp"

#include "ulm/parallel.hpp"
#include "ulm/registration.hpp"
#include "ulm/stack_io.hpp"
#include "ulm/text_config.hpp"

namespace ulm::pipeline {

namespace fs = std::filesystem;

namespace {

template <typename Fn> auto stage(const std::string &name, Fn &&fn) {
  try {
    return fn();
  } catch (const StageError &) {
    throw;
  } catch (const std::exception &e) {
    throw StageError(name, e.what());
  }
}

class StageClock {
public:
  void mark(const std::string &name) {
    const auto now = std::chrono::steady_clock::now();
    timings_[name] = std::chrono::duration<double, std::milli>(now - last_).count();
    last_ = now;
  }
  const std::map<std::string, double> &timings() const { return timings_; }

private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::map<std::string, double> timings_;
};

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

FrameStack load_nonempty_stack(const fs::path &path) {
  FrameStack stack = read_stack(path);
  if (stack.n_frames() == 0)
    throw ContractError("stack '" + path.string() + "' holds no frames");
  return stack;
}

std::vector<fs::path> write_maps(const fs::path &out, std::span<const BubbleSet> sets,
                                 std::span<const tracks::Track> tracks, const FrameStack &stack,
                                 const PipelineConfig &config, int threads) {
  const auto density = maps::render_density(sets, stack.height(), stack.width(), config, threads);
  maps::write_map_raw(out / kDensityRaw, density.values);
  maps::write_pgm16(out / kDensityPgm, density.values);

  const auto samples = tracks::velocity_samples(tracks);
  const auto field = maps::render_velocity(samples, stack.height(), stack.width(), config, threads);
  const auto speed = field.speed();
  maps::write_map_raw(out / kSpeedRaw, speed);
  maps::write_pgm16(out / kSpeedPgm, speed);
  maps::write_speed_csv(out / kSpeedCsv, field);
  return {out / kDensityRaw, out / kDensityPgm, out / kSpeedRaw, out / kSpeedPgm, out / kSpeedCsv};
}

} // namespace

PipelineConfig load_config_or_default(const std::optional<fs::path> &path) {
  if (!path)
    return parse_pipeline_config("", "<defaults>");
  return load_pipeline_config(*path);
}

localize::Psf resolve_psf(const FrameStack &stack, const PsfChoice &choice,
                          const PipelineConfig &config) {
  const bool pick = choice.frame || choice.row || choice.col;
  if (pick && choice.sigma)
    throw ConfigError("choose either an operator PSF pick or a synthetic PSF sigma, not both");
  if (pick) {
    if (!(choice.frame && choice.row && choice.col))
      throw ConfigError("an operator PSF pick needs frame, row and col");
    return localize::extract_psf(stack, *choice.frame, {*choice.row, *choice.col},
                                 config.psf_patch_size);
  }
  return localize::gaussian_psf(choice.sigma.value_or(config.psf_sigma), config.psf_patch_size);
}

std::string describe_psf(const PsfChoice &choice, const PipelineConfig &config) {
  if (choice.frame && choice.row && choice.col)
    return "pick frame=" + std::to_string(*choice.frame) + " row=" + std::to_string(*choice.row) +
           " col=" + std::to_string(*choice.col);
  char buf[64];
  std::snprintf(buf, sizeof buf, "gaussian sigma=%.17g", choice.sigma.value_or(config.psf_sigma));
  return buf;
}

TrackingResult track_bubbles(std::span<const BubbleSet> sets, const PipelineConfig &config,
                             double pixel_size_mm, double frame_rate_hz, int threads) {
  config.validate();
  TrackingResult result;
  const std::size_t n_pairs = sets.size() > 1 ? sets.size() - 1 : 0;
  std::vector<registration::Pairing> pairings(n_pairs);
  parallel_for(n_pairs, threads, [&](std::size_t k) {
    const auto reg = registration::register_sets(sets[k], sets[k + 1], config);
    pairings[k] = registration::pair(reg.probabilities, sets[k], sets[k + 1], reg.transform, config);
  });
  result.tracks = tracks::link(sets, pairings, config.min_track_length);
  tracks::assign_velocities(result.tracks, pixel_size_mm, frame_rate_hz);
  for (std::size_t k = 0; k < n_pairs; ++k)
    result.pairings.push_back({sets[k].frame_index, std::move(pairings[k])});
  return result;
}

std::vector<BubbleSet> bubble_sets_from_rows(const FrameStack &stack,
                                             std::span<const csv::BubbleRow> rows,
                                             const PipelineConfig &config) {
  std::vector<BubbleSet> sets(stack.n_frames());
  for (std::size_t f = 0; f < sets.size(); ++f)
    sets[f].frame_index = f;
  const int h = config.psf_patch_size / 2;
  for (const auto &row : rows) {
    if (row.frame >= stack.n_frames())
      throw ContractError("bubble row references frame " + std::to_string(row.frame) +
                          " beyond the stack");
    const FrameView frame = stack.frame(row.frame);
    Bubble b;
    b.position = row.position;
    b.amplitude = row.amplitude;
    b.peak = {std::clamp(static_cast<int>(std::lround(row.position.row)), h, frame.height - 1 - h),
              std::clamp(static_cast<int>(std::lround(row.position.col)), h, frame.width - 1 - h)};
    b.patch_size = config.psf_patch_size;
    b.patch = localize::extract_window(frame, b.peak, config.psf_patch_size);
    sets[row.frame].bubbles.push_back(std::move(b));
  }
  return sets;
}

std::string sha256_file(const fs::path &path) {
  const auto bytes = read_file_bytes(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed for '" + path.string() + "'");
  std::string hex;
  char buf[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(buf, sizeof buf, "%02x", digest[k]);
    hex += buf;
  }
  return hex;
}

RunSummary cmd_run(const RunOptions &options) {
  StageClock clock;
  const PipelineConfig config = stage("config", [&] { return load_config_or_default(options.config); });
  const FrameStack stack = stage("ingest", [&] { return load_nonempty_stack(options.stack); });
  stage("output", [&] {
    ensure_dir(options.out_dir);
    return 0;
  });
  clock.mark("ingest");

  const auto psf = stage("localize", [&] { return resolve_psf(stack, options.psf, config); });
  const auto sets = stage("localize", [&] {
    auto s = localize::localize_stack(stack, psf, config, options.threads);
    csv::write_bubbles(options.out_dir / kBubblesCsv, s);
    return s;
  });
  clock.mark("localize");

  const auto tracking = stage("track", [&] {
    auto t = track_bubbles(sets, config, stack.pixel_size_mm(), stack.frame_rate_hz(), options.threads);
    csv::write_tracks(options.out_dir / kTracksCsv, t.tracks);
    if (options.dump_pairings)
      csv::write_pairings(options.out_dir / kPairingsCsv, t.pairings);
    return t;
  });
  clock.mark("track");

  RunSummary summary;
  summary.outputs.push_back(options.out_dir / kBubblesCsv);
  summary.outputs.push_back(options.out_dir / kTracksCsv);
  if (options.dump_pairings)
    summary.outputs.push_back(options.out_dir / kPairingsCsv);
  const auto map_files = stage("render", [&] {
    return write_maps(options.out_dir, sets, tracking.tracks, stack, config, options.threads);
  });
  summary.outputs.insert(summary.outputs.end(), map_files.begin(), map_files.end());
  clock.mark("render");

  summary.frames = stack.n_frames();
  for (const auto &s : sets)
    summary.bubbles += s.size();
  summary.tracks = tracking.tracks.size();
  for (const auto &t : tracking.tracks)
    summary.velocity_samples += t.velocities.size();

  stage("manifest", [&] {
    nlohmann::json m;
    m["tool"] = "ulm";
    m["version"] = kToolVersion;
    m["config"] = config_entries(config);
    m["psf"] = describe_psf(options.psf, config);
    m["threads"] = options.threads;
    m["inputs"] = nlohmann::json::array();
    m["inputs"].push_back({{"role", "stack"}, {"path", options.stack.string()},
                           {"sha256", sha256_file(options.stack)}});
    if (options.config)
      m["inputs"].push_back({{"role", "config"}, {"path", options.config->string()},
                             {"sha256", sha256_file(*options.config)}});
    m["outputs"] = nlohmann::json::array();
    for (const auto &p : summary.outputs)
      m["outputs"].push_back({{"file", p.filename().string()}, {"sha256", sha256_file(p)}});
    m["counts"] = {{"frames", summary.frames},
                   {"bubbles", summary.bubbles},
                   {"tracks", summary.tracks},
                   {"velocity_samples", summary.velocity_samples}};
    m["timings_ms"] = clock.timings();
    std::ofstream out(options.out_dir / kManifest, std::ios::trunc);
    if (!out)
      throw IoError("cannot write manifest");
    out << m.dump(2) << "\n";
    return 0;
  });
  return summary;
}

void cmd_simulate(const fs::path &scenario_path, const fs::path &out_dir,
                  std::optional<std::uint64_t> seed) {
  auto scenario = stage("config", [&] { return load_scenario(scenario_path); });
  if (seed)
    scenario.seed = *seed;
  const auto sim = stage("simulate", [&] { return synth::simulate(scenario); });
  stage("output", [&] {
    ensure_dir(out_dir);
    write_stack(sim.stack, out_dir / kStackFile);
    csv::write_truth(out_dir / kTruthCsv, sim.truth);
    std::ofstream echo(out_dir / "scenario.txt", std::ios::trunc);
    echo << format_scenario(scenario);
    if (!echo)
      throw IoError("cannot write scenario echo");
    return 0;
  });
}

void cmd_localize(const RunOptions &options) {
  const PipelineConfig config = stage("config", [&] { return load_config_or_default(options.config); });
  const FrameStack stack = stage("ingest", [&] { return load_nonempty_stack(options.stack); });
  stage("localize", [&] {
    ensure_dir(options.out_dir);
    const auto psf = resolve_psf(stack, options.psf, config);
    csv::write_bubbles(options.out_dir / kBubblesCsv,
                       localize::localize_stack(stack, psf, config, options.threads));
    return 0;
  });
}

void cmd_track(const RunOptions &options, const fs::path &bubbles_csv) {
  const PipelineConfig config = stage("config", [&] { return load_config_or_default(options.config); });
  const FrameStack stack = stage("ingest", [&] { return load_nonempty_stack(options.stack); });
  stage("track", [&] {
    ensure_dir(options.out_dir);
    const auto sets = bubble_sets_from_rows(stack, csv::read_bubbles(bubbles_csv), config);
    const auto t = track_bubbles(sets, config, stack.pixel_size_mm(), stack.frame_rate_hz(), options.threads);
    csv::write_tracks(options.out_dir / kTracksCsv, t.tracks);
    if (options.dump_pairings)
      csv::write_pairings(options.out_dir / kPairingsCsv, t.pairings);
    return 0;
  });
}

void cmd_render(const RunOptions &options, const fs::path &bubbles_csv, const fs::path &tracks_csv) {
  const PipelineConfig config = stage("config", [&] { return load_config_or_default(options.config); });
  const FrameStack stack = stage("ingest", [&] { return load_nonempty_stack(options.stack); });
  stage("render", [&] {
    ensure_dir(options.out_dir);
    // Density only needs positions; patches are not used here.
    std::vector<BubbleSet> sets(stack.n_frames());
    for (std::size_t f = 0; f < sets.size(); ++f)
      sets[f].frame_index = f;
    for (const auto &row : csv::read_bubbles(bubbles_csv)) {
      if (row.frame >= sets.size())
        throw ContractError("bubble row references frame " + std::to_string(row.frame) +
                            " beyond the stack");
      Bubble b;
      b.position = row.position;
      b.amplitude = row.amplitude;
      sets[row.frame].bubbles.push_back(std::move(b));
    }
    const auto rows = csv::read_tracks(tracks_csv);
    const auto tracks = csv::tracks_from_rows(rows, stack.pixel_size_mm(), stack.frame_rate_hz());
    write_maps(options.out_dir, sets, tracks, stack, config, options.threads);
    return 0;
  });
}

synth::Metrics cmd_evaluate(const fs::path &pred_dir, const fs::path &truth_csv, double tol,
                            const fs::path &out_dir) {
  return stage("evaluate", [&] {
    std::vector<synth::LabeledPoint> detections;
    for (const auto &r : csv::read_bubbles(pred_dir / kBubblesCsv))
      detections.push_back({0, r.frame, r.position});
    std::vector<synth::LabeledPoint> track_points;
    for (const auto &r : csv::read_tracks(pred_dir / kTracksCsv))
      track_points.push_back({r.track_id, r.frame, r.position});
    std::vector<synth::LabeledPoint> truth;
    for (const auto &r : csv::read_tracks(truth_csv))
      truth.push_back({r.track_id, r.frame, r.position});
    const auto m = synth::evaluate(detections, track_points, truth, tol);

    ensure_dir(out_dir);
    std::ofstream out(out_dir / kMetricsCsv, std::ios::trunc);
    if (!out)
      throw IoError("cannot write metrics");
    char line[256];
    std::snprintf(line, sizeof line,
                  "rmse_px,precision,recall,identity_accuracy,link_recall,matched,predicted,truth\n"
                  "%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%zu,%zu\n",
                  m.rmse, m.precision, m.recall, m.identity_accuracy, m.link_recall, m.matched,
                  m.predicted, m.truth);
    out << line;
    return m;
  });
}

std::string format_metrics(const synth::Metrics &m) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "localization RMSE   %.4f px (%zu matches)\n"
                "precision           %.4f (%zu predicted)\n"
                "recall              %.4f (%zu truth)\n"
                "identity accuracy   %.4f (%zu/%zu links)\n"
                "link recall         %.4f (%zu truth links)\n",
                m.rmse, m.matched, m.precision, m.predicted, m.recall, m.truth, m.identity_accuracy,
                m.correct_links, m.predicted_links, m.link_recall, m.truth_links);
  return buf;
}

} // namespace ulm::pipeline
