#include "doctest.h"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ulm/pipeline.hpp"
#include "ulm/stack_io.hpp"
#include "ulm/text_config.hpp"

using namespace ulm;
using namespace ulm::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("ulm_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

synth::Scenario small() {
  synth::Scenario s;
  s.height = s.width = 48;
  s.n_frames = 25;
  s.n_bubbles = 4;
  s.seed = 7;
  s.vessels = {{{16, 4}, {16, 44}, 3.0, 0.01}, {{32, 4}, {32, 44}, 3.0, 0.005}};
  return s;
}

// simulated stack + truth on disk
fs::path simulated(const std::string &name, double noise = 0.0) {
  const fs::path dir = scratch(name);
  auto s = small();
  s.noise_std = noise;
  std::ofstream(dir / "scenario.in") << format_scenario(s);
  cmd_simulate(dir / "scenario.in", dir / "sim");
  return dir;
}

std::string stage_of(auto &&fn) {
  try {
    fn();
  } catch (const StageError &e) {
    return e.stage();
  }
  return {};
}

} // namespace

TEST_CASE("sha256 of known inputs") {
  const fs::path dir = scratch("sha");
  std::ofstream(dir / "abc", std::ios::binary) << "abc";
  CHECK(sha256_file(dir / "abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  std::ofstream(dir / "empty", std::ios::binary).flush();
  CHECK(sha256_file(dir / "empty") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("simulate writes a readable stack and truth") {
  const fs::path dir = simulated("sim");
  const auto stack = read_stack(dir / "sim" / kStackFile);
  CHECK(stack.n_frames() == 25);
  CHECK(stack.height() == 48);
  const auto truth = csv::read_tracks(dir / "sim" / kTruthCsv);
  CHECK(truth.size() == 25 * 4);
  const auto echo = load_scenario(dir / "sim" / "scenario.txt");
  CHECK(format_scenario(echo) == format_scenario(small()));
}

TEST_CASE("run output is reproducible and thread independent") {
  const fs::path dir = simulated("determinism", 0.02);
  RunOptions o;
  o.stack = dir / "sim" / kStackFile;
  o.dump_pairings = true;
  o.out_dir = dir / "a";
  const auto sa = cmd_run(o);
  o.out_dir = dir / "b";
  cmd_run(o);
  o.out_dir = dir / "c";
  o.threads = 8;
  const auto sc = cmd_run(o);

  CHECK(sa.bubbles > 0);
  CHECK(sa.tracks > 0);
  CHECK(sa.outputs.size() == 8);
  CHECK(sa.bubbles == sc.bubbles);
  for (const auto &p : sa.outputs) {
    const auto name = p.filename();
    CAPTURE(name);
    const auto ref = slurp(dir / "a" / name);
    CHECK_FALSE(ref.empty());
    CHECK(slurp(dir / "b" / name) == ref);
    CHECK(slurp(dir / "c" / name) == ref);
  }
  // manifests differ in timings and threads, never in what they hash
  const auto ma = nlohmann::json::parse(slurp(dir / "a" / kManifest));
  const auto mc = nlohmann::json::parse(slurp(dir / "c" / kManifest));
  CHECK(ma["outputs"] == mc["outputs"]);
  CHECK(ma["inputs"][0]["sha256"] == mc["inputs"][0]["sha256"]);
}

TEST_CASE("manifest contents") {
  const fs::path dir = simulated("manifest");
  std::ofstream(dir / "run.cfg") << "sinkhorn_iters = 25\n";
  RunOptions o;
  o.stack = dir / "sim" / kStackFile;
  o.config = dir / "run.cfg";
  o.out_dir = dir / "out";
  o.psf.sigma = 1.1;
  const auto s = cmd_run(o);
  const auto m = nlohmann::json::parse(slurp(dir / "out" / kManifest));
  CHECK(m["tool"] == "ulm");
  CHECK(m["version"] == kToolVersion);
  CHECK(m["config"].size() == 21);
  CHECK(m["psf"].get<std::string>().find("sigma=1.1") != std::string::npos);
  REQUIRE(m["inputs"].size() == 2);
  CHECK(m["inputs"][0]["sha256"] == sha256_file(o.stack));
  CHECK(m["inputs"][1]["role"] == "config");
  CHECK(m["inputs"][1]["sha256"] == sha256_file(*o.config));
  REQUIRE(m["outputs"].size() == s.outputs.size());
  for (const auto &entry : m["outputs"])
    CHECK(entry["sha256"] == sha256_file(dir / "out" / entry["file"].get<std::string>()));
  CHECK(m["counts"]["frames"] == 25);
  CHECK(m["counts"]["bubbles"] == s.bubbles);
  CHECK(m["counts"]["velocity_samples"] == s.velocity_samples);
  for (const char *k : {"ingest", "localize", "track", "render"})
    CHECK(m["timings_ms"].contains(k));
  CHECK_FALSE(fs::exists(dir / "out" / kPairingsCsv));
}

TEST_CASE("noise-free run recovers the truth") {
  const fs::path dir = simulated("recall");
  RunOptions o;
  o.stack = dir / "sim" / kStackFile;
  o.out_dir = dir / "out";
  cmd_run(o);
  const auto m = cmd_evaluate(dir / "out", dir / "sim" / kTruthCsv, 1.0, dir / "out");
  CHECK(m.recall >= 0.99);
  CHECK(m.precision >= 0.99);
  CHECK(m.rmse <= 0.15);
  CHECK(m.link_recall >= 0.9);
  const auto metrics = slurp(dir / "out" / kMetricsCsv);
  CHECK(metrics.rfind("rmse_px,precision,recall,identity_accuracy,link_recall,matched,predicted,truth\n", 0) == 0);
  CHECK(format_metrics(m).find("recall") != std::string::npos);
}

TEST_CASE("evaluate on truth itself and on a shifted copy") {
  const fs::path dir = simulated("evaluate");
  const auto truth = csv::read_tracks(dir / "sim" / kTruthCsv);

  // a prediction directory built from the truth
  const fs::path pred = dir / "pred";
  fs::create_directories(pred);
  auto write_pred = [&](double shift) {
    std::ofstream b(pred / kBubblesCsv), t(pred / kTracksCsv);
    b << "frame,row,col,amplitude\n";
    t << "track_id,frame,row,col,vr_mps,vc_mps\n";
    for (const auto &r : truth) {
      b << r.frame << "," << r.position.row + shift << "," << r.position.col << ",1\n";
      t << r.track_id << "," << r.frame << "," << r.position.row + shift << "," << r.position.col
        << ",0,0\n";
    }
  };
  write_pred(0.0);
  auto m = cmd_evaluate(pred, dir / "sim" / kTruthCsv, 1.0, pred);
  CHECK(m.rmse == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(m.recall == 1.0);
  CHECK(m.precision == 1.0);
  CHECK(m.identity_accuracy == 1.0);

  write_pred(0.25);
  m = cmd_evaluate(pred, dir / "sim" / kTruthCsv, 1.0, pred);
  CHECK(m.rmse == doctest::Approx(0.25).epsilon(1e-4));
  CHECK(m.recall == 1.0);

  write_pred(1.5);
  m = cmd_evaluate(pred, dir / "sim" / kTruthCsv, 1.0, pred);
  CHECK(m.matched == 0);
}

TEST_CASE("split commands agree with run on localization") {
  const fs::path dir = simulated("split", 0.02);
  RunOptions o;
  o.stack = dir / "sim" / kStackFile;
  o.out_dir = dir / "run";
  cmd_run(o);
  o.out_dir = dir / "loc";
  cmd_localize(o);
  CHECK(slurp(dir / "loc" / kBubblesCsv) == slurp(dir / "run" / kBubblesCsv));

  o.out_dir = dir / "trk";
  cmd_track(o, dir / "loc" / kBubblesCsv);
  CHECK(fs::exists(dir / "trk" / kTracksCsv));
  o.out_dir = dir / "ren";
  cmd_render(o, dir / "run" / kBubblesCsv, dir / "run" / kTracksCsv);
  // density depends on positions only; the CSV keeps 4 decimals
  const auto a = maps::read_map_raw(dir / "ren" / kDensityRaw);
  const auto b = maps::read_map_raw(dir / "run" / kDensityRaw);
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c)
      CHECK(a(r, c) == doctest::Approx(b(r, c)).epsilon(1e-3).scale(1.0));
  CHECK(fs::exists(dir / "ren" / kSpeedCsv));
}

TEST_CASE("errors are tagged with their stage") {
  const fs::path dir = scratch("errors");
  write_stack(FrameStack(0, 8, 8, 0.1f, 100.0f, {}), dir / "empty.ulmf");
  RunOptions o;
  o.stack = dir / "empty.ulmf";
  o.out_dir = dir / "out";
  CHECK(stage_of([&] { cmd_run(o); }) == "ingest");

  o.stack = dir / "missing.ulmf";
  CHECK(stage_of([&] { cmd_run(o); }) == "ingest");

  std::ofstream(dir / "bad.cfg") << "alpha = -1\n";
  o.config = dir / "bad.cfg";
  CHECK(stage_of([&] { cmd_run(o); }) == "config");

  auto sim = simulated("errors_sim");
  o.stack = sim / "sim" / kStackFile;
  o.config.reset();
  o.psf.sigma = 1.0;
  o.psf.frame = 0;
  CHECK(stage_of([&] { cmd_run(o); }) == "localize");

  CHECK(stage_of([&] { cmd_evaluate(dir, sim / "sim" / kTruthCsv, 1.0, dir); }) == "evaluate");
}

TEST_CASE("resolve_psf") {
  synth::Scenario s = small();
  s.vessels.clear();
  s.n_bubbles = 0;
  s.stationary = {{20, 20}};
  s.n_frames = 2;
  const auto sim = synth::simulate(s);
  PipelineConfig c;
  const auto g = resolve_psf(sim.stack, {}, c);
  CHECK(g.size == c.psf_patch_size);
  CHECK(describe_psf({}, c) == "gaussian sigma=1");

  PsfChoice pick{0, 20, 20, std::nullopt};
  const auto p = resolve_psf(sim.stack, pick, c);
  double dot = 0;
  for (std::size_t k = 0; k < p.values.size(); ++k)
    dot += p.values[k] * g.values[k];
  CHECK(dot > 0.99);
  CHECK(describe_psf(pick, c) == "pick frame=0 row=20 col=20");

  CHECK_THROWS_AS(resolve_psf(sim.stack, {0, 20, std::nullopt, std::nullopt}, c), ConfigError);
  CHECK_THROWS_AS(resolve_psf(sim.stack, {0, 20, 20, 1.0}, c), ConfigError);
}

TEST_CASE("csv round trips") {
  const fs::path dir = simulated("csv");
  const auto stack = read_stack(dir / "sim" / kStackFile);
  PipelineConfig c;
  const auto sets = localize::localize_stack(stack, localize::gaussian_psf(1.0, 7), c);
  csv::write_bubbles(dir / "b.csv", sets);
  const auto rows = csv::read_bubbles(dir / "b.csv");
  const auto back = bubble_sets_from_rows(stack, rows, c);
  REQUIRE(back.size() == sets.size());
  for (std::size_t f = 0; f < sets.size(); ++f) {
    REQUIRE(back[f].size() == sets[f].size());
    for (std::size_t k = 0; k < sets[f].size(); ++k) {
      CHECK(distance(back[f].bubbles[k].position, sets[f].bubbles[k].position) < 1e-4);
      CHECK(back[f].bubbles[k].patch.size() == 49);
    }
  }

  const auto t = track_bubbles(sets, c, stack.pixel_size_mm(), stack.frame_rate_hz());
  csv::write_tracks(dir / "t.csv", t.tracks);
  const auto trows = csv::read_tracks(dir / "t.csv");
  const auto tracks = csv::tracks_from_rows(trows, stack.pixel_size_mm(), stack.frame_rate_hz());
  REQUIRE(tracks.size() == t.tracks.size());
  for (std::size_t k = 0; k < tracks.size(); ++k) {
    CHECK(tracks[k].id == t.tracks[k].id);
    REQUIRE(tracks[k].points.size() == t.tracks[k].points.size());
    REQUIRE(tracks[k].velocities.size() == t.tracks[k].velocities.size());
    for (std::size_t j = 0; j < tracks[k].velocities.size(); ++j)
      CHECK(tracks[k].velocities[j].col == doctest::Approx(t.tracks[k].velocities[j].col).epsilon(1e-3));
  }
  // a row beyond the stack is rejected
  std::vector<csv::BubbleRow> bad{{stack.n_frames(), {5, 5}, 1}};
  CHECK_THROWS_AS(bubble_sets_from_rows(stack, bad, c), ContractError);
}
