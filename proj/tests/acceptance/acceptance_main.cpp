// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Each check builds its own synthetic data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "../support.hpp"
#include "ulm/localize.hpp"
#include "ulm/maps.hpp"
#include "ulm/pipeline.hpp"
#include "ulm/registration.hpp"
#include "ulm/synth.hpp"
#include "ulm/text_config.hpp"

using namespace ulm;
using namespace ulm::registration;
using testing::blob_set;
using testing::separated_points;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty())
    return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t argmax_row(const ProbabilityMatrix &p, std::size_t i) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < p.cols(); ++j)
    if (p(i, j) > p(i, best))
      best = j;
  return best;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- 1 -----------------------------------------------------------------

synth::Metrics localize_scenario(double noise, double &secs) {
  synth::Scenario s;
  s.height = s.width = 64;
  s.n_frames = 100;
  s.noise_std = noise;
  s.seed = 3;
  // one bubble per narrow vessel; rows 6 px apart keep every pair >= 4 px
  for (int k = 0; k < 10; ++k) {
    const double row = 5.0 + 6.0 * k;
    s.vessels.push_back({{row, 4.0}, {row, 60.0}, 1.0, 0.002 + 0.0005 * k});
  }
  s.n_bubbles = 10;
  const auto sim = synth::simulate(s);
  const PipelineConfig c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto sets = localize::localize_stack(sim.stack, localize::gaussian_psf(c.psf_sigma, c.psf_patch_size), c);
  secs = seconds_since(t0);
  std::vector<synth::LabeledPoint> det;
  for (const auto &set : sets)
    for (const auto &b : set.bubbles)
      det.push_back({0, set.frame_index, b.position});
  return synth::evaluate(det, {}, synth::truth_points(sim.truth), 1.0);
}

Outcome localization_recovery() {
  double t_clean = 0, t_noisy = 0;
  const auto clean = localize_scenario(0.0, t_clean);
  const auto noisy = localize_scenario(0.1, t_noisy);
  const bool ok = clean.recall >= 0.99 && clean.precision >= 0.99 && clean.rmse <= 0.15 &&
                  noisy.rmse <= 0.3 && t_clean < 10.0 && t_noisy < 10.0;
  return {ok, fmt("recall %.4f precision %.4f rmse %.4f px | noise 0.1: rmse %.4f px | %.2f s / 100 frames",
                  clean.recall, clean.precision, clean.rmse, noisy.rmse, std::max(t_clean, t_noisy))};
}

// --- 2 -----------------------------------------------------------------

Outcome fixed_point() {
  std::mt19937 rng(202);
  std::uniform_int_distribution<int> count(5, 50);
  PipelineConfig c;
  double worst = 0;
  int bad_argmax = 0;
  for (int trial = 0; trial < 50; ++trial) {
    // separation above the gate, so each bubble has one candidate
    const auto s = blob_set(separated_points(rng, count(rng), 128, c.pair_gate_distance + 1.0));
    c.transform_mode = trial % 2 ? TransformMode::affine : TransformMode::translation;
    const auto reg = register_sets(s, s, c);
    worst = std::max(worst, reg.transform.parameter_norm());
    for (std::size_t i = 0; i < s.size(); ++i)
      bad_argmax += argmax_row(reg.probabilities, i) != i;
  }
  return {worst < 1e-6 && bad_argmax == 0,
          fmt("max |params| %.3g, non-identity argmax rows %d (50 sets, n 5..50)", worst, bad_argmax)};
}

// --- 3 -----------------------------------------------------------------

Outcome shift_recovery() {
  std::mt19937 rng(303);
  std::uniform_real_distribution<double> mag(0.2, 2.0), angle(0.0, 2 * M_PI);
  PipelineConfig c;
  c.gamma = 0.0; // the movement prior shrinks shifts on purpose
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto pts = separated_points(rng, 10, 64, 10);
    const double m = mag(rng), a = angle(rng);
    const Vec2 d{m * std::cos(a), m * std::sin(a)};
    std::vector<Vec2> moved;
    for (const auto &p : pts)
      moved.push_back(p + d);
    const auto reg = register_sets(blob_set(pts), blob_set(moved), c);
    // f maps target onto reference, so it undoes d
    worst = std::max(worst, distance(reg.transform.translation, -d));
  }
  return {worst <= 0.05, fmt("max error %.4f px over 100 shifts in [0.2, 2] px", worst)};
}

// --- 4 -----------------------------------------------------------------

Outcome sinkhorn() {
  std::mt19937 rng(404);
  std::uniform_int_distribution<int> dim(1, 50);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  double worst_sum = 0, worst_ref = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = trial < 10 ? 50 : dim(rng);
    std::vector<std::vector<double>> v(n, std::vector<double>(n));
    for (auto &row : v)
      for (double &x : row)
        x = u(rng);
    const auto p = sinkhorn_normalize(testing::to_matrix(v), 20, 1e-9);
    const auto ref = testing::reference_sinkhorn(v, 20, 1e-9);
    for (int i = 0; i < n; ++i) {
      worst_sum = std::max({worst_sum, std::fabs(p.row_sum(i) - 1), std::fabs(p.col_sum(i) - 1)});
      for (int j = 0; j < n; ++j)
        worst_ref = std::max(worst_ref, std::fabs(p(i, j) - ref[i][j]));
    }
  }
  return {worst_sum <= 1e-3 && worst_ref <= 1e-9,
          fmt("max |sum - 1| %.3g, max |p - reference| %.3g (200 matrices, n <= 50)", worst_sum, worst_ref)};
}

// --- 5 -----------------------------------------------------------------

Outcome cost_monotonicity() {
  std::mt19937 rng(505);
  std::normal_distribution<double> jitter(0.0, 0.4);
  std::uniform_real_distribution<double> shift(-1.5, 1.5);
  double worst = -INFINITY;
  int steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    PipelineConfig c;
    c.transform_mode = trial % 2 ? TransformMode::affine : TransformMode::translation;
    const auto pts = separated_points(rng, 4 + trial % 20, 64, 4);
    const Vec2 d{shift(rng), shift(rng)};
    std::vector<Vec2> moved;
    for (const auto &p : pts)
      if (rng() % 8 != 0) // some bubbles vanish
        moved.push_back(p + d + Vec2{jitter(rng), jitter(rng)});
    if (moved.empty())
      moved.push_back(pts[0] + d);
    register_sets(blob_set(pts), blob_set(moved), c, [&](const IterationTrace &t) {
      worst = std::max(worst, t.cost_after - t.cost_before);
      ++steps;
    });
  }
  return {worst <= 1e-9, fmt("max increase %.3g over %d fits in 100 runs", worst, steps)};
}

// --- 6 -----------------------------------------------------------------

Outcome pairing_vs_oracle() {
  std::mt19937 rng(606);
  std::normal_distribution<double> jitter(0.0, 0.3);
  PipelineConfig c;
  int agree = 0;
  const int trials = 30;
  std::string log;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t n = 2 + trial % 7;
    const auto pts = separated_points(rng, n, 48, 8);
    std::vector<Vec2> moved;
    for (const auto &p : pts)
      moved.push_back(p + Vec2{0.5 + jitter(rng), -0.3 + jitter(rng)});
    const auto ref = blob_set(pts), tgt = blob_set(moved);
    const auto reg = register_sets(ref, tgt, c);
    const auto greedy = pair(reg.probabilities, ref, tgt, reg.transform, c);
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        cost[i][j] = -std::log(std::max(reg.probabilities(i, j), 1e-300));
    const auto opt = synth::hungarian_assign(cost);
    bool same = greedy.pairs.size() == n;
    for (const auto &pr : greedy.pairs)
      if (opt.row_to_col[pr.ref] != static_cast<int>(pr.tgt)) {
        same = false;
        const double margin = pr.probability - reg.probabilities(pr.ref, opt.row_to_col[pr.ref]);
        log += fmt("\n      instance %d row %zu: greedy %zu vs optimal %d, margin %.3g", trial, pr.ref,
                   pr.tgt, opt.row_to_col[pr.ref], margin);
      }
    if (!same && greedy.pairs.size() != n)
      log += fmt("\n      instance %d: greedy kept %zu of %zu pairs", trial, greedy.pairs.size(), n);
    agree += same;
  }
  const double rate = static_cast<double>(agree) / trials;
  return {rate >= 0.95, fmt("%d/%d instances agree (%.1f%%)", agree, trials, 100 * rate) + log};
}

// --- 7 -----------------------------------------------------------------

Outcome pca_statistics() {
  std::mt19937 rng(707);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec2> cloud(10000);
  for (auto &v : cloud)
    v = {g(rng), g(rng)};
  const double rejected = 1.0 - static_cast<double>(maps::pca_reject(cloud).size()) / cloud.size();

  // one gross outlier among 50 inliers, 200 placements
  int caught = 0;
  std::uniform_real_distribution<double> box(-1.0, 1.0), angle(0.0, 2 * M_PI);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec2> v(50);
    for (auto &x : v)
      x = {box(rng), box(rng)};
    const double a = angle(rng);
    v.push_back({20 * std::cos(a), 20 * std::sin(a)});
    const auto kept = maps::pca_reject(v);
    caught += std::find(kept.begin(), kept.end(), std::size_t{50}) == kept.end();
  }
  return {rejected >= 0.0024 && rejected <= 0.0084 && caught == 200,
          fmt("rejected %.2f%% of 10^4 isotropic samples; outlier rejected %d/200", 100 * rejected, caught)};
}

// --- 8 -----------------------------------------------------------------

Outcome speed_contrast() {
  const auto s = load_scenario(fs::path(ULM_CONFIG_DIR) / "demo_scenario.txt");
  const auto sim = synth::simulate(s);
  const PipelineConfig c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto sets = localize::localize_stack(sim.stack, localize::gaussian_psf(c.psf_sigma, c.psf_patch_size), c);
  const auto tr = pipeline::track_bubbles(sets, c, sim.stack.pixel_size_mm(), sim.stack.frame_rate_hz());
  maps::render_density(sets, s.height, s.width, c);
  const auto field = maps::render_velocity(tracks::velocity_samples(tr.tracks), s.height, s.width, c);
  const double secs = seconds_since(t0);
  const auto speed = field.speed();

  // both medians over the valid SR points inside each lumen
  double rendered[2], truth[2];
  for (int v = 0; v < 2; ++v) {
    const auto &ves = s.vessels[v];
    std::vector<double> rend, prof;
    for (int r = 0; r < speed.rows(); ++r)
      for (int col = 0; col < speed.cols(); ++col) {
        if (!field.valid(r, col))
          continue;
        const double off = r / static_cast<double>(c.sr_factor) - ves.start.row;
        const double pc = col / static_cast<double>(c.sr_factor);
        if (std::fabs(off) > ves.radius_px || pc < ves.start.col || pc > ves.end.col)
          continue;
        rend.push_back(speed(r, col));
        prof.push_back(synth::profile_speed(ves, off));
      }
    rendered[v] = median(rend);
    truth[v] = median(prof);
  }
  const double ratio = rendered[1] / rendered[0];
  const double nominal = s.vessels[1].peak_speed_mps / s.vessels[0].peak_speed_mps;
  const double e0 = rendered[0] / truth[0] - 1, e1 = rendered[1] / truth[1] - 1;
  const bool ok = std::fabs(ratio / nominal - 1) <= 0.2 && std::fabs(e0) <= 0.15 &&
                  std::fabs(e1) <= 0.15 && secs < 60.0;
  return {ok, fmt("ratio %.2f (nominal %.0f); slow %.2f mm/s (%+.1f%%), fast %.2f mm/s (%+.1f%%); %.1f s / %zu frames",
                  ratio, nominal, 1e3 * rendered[0], 100 * e0, 1e3 * rendered[1], 100 * e1, secs,
                  sim.stack.n_frames())};
}

// --- 9 -----------------------------------------------------------------

Outcome density_mass() {
  std::mt19937 rng(909);
  std::uniform_real_distribution<double> u(8.0, 56.0);
  std::vector<BubbleSet> sets(10);
  for (std::size_t f = 0; f < sets.size(); ++f) {
    sets[f].frame_index = f;
    for (int k = 0; k < 100; ++k) {
      Bubble b;
      b.position = {u(rng), u(rng)};
      sets[f].bubbles.push_back(b);
    }
  }
  const double mass = maps::render_density(sets, 64, 64, PipelineConfig{}).total_mass();
  return {std::fabs(mass - 1000.0) <= 1.0, fmt("total mass %.4f for 1000 bubbles", mass)};
}

// --- 10 ----------------------------------------------------------------

Outcome determinism() {
  const fs::path work = fs::temp_directory_path() / "ulm_acceptance_determinism";
  fs::remove_all(work);
  pipeline::cmd_simulate(fs::path(ULM_CONFIG_DIR) / "small_scenario.txt", work / "sim");
  pipeline::RunOptions o;
  o.stack = work / "sim" / pipeline::kStackFile;
  o.dump_pairings = true;
  o.out_dir = work / "a";
  const auto summary = pipeline::cmd_run(o);
  o.out_dir = work / "b";
  pipeline::cmd_run(o);
  o.out_dir = work / "t8";
  o.threads = 8;
  pipeline::cmd_run(o);
  int differing = 0;
  for (const auto &p : summary.outputs) {
    const auto ref = slurp(work / "a" / p.filename());
    differing += slurp(work / "b" / p.filename()) != ref;
    differing += slurp(work / "t8" / p.filename()) != ref;
  }
  return {differing == 0 && !summary.outputs.empty(),
          fmt("%zu output files x 3 runs (threads 1, 1, 8): %d differ", summary.outputs.size(), differing)};
}

} // namespace

int main() {
  const std::vector<std::pair<const char *, std::function<Outcome()>>> criteria{
      {"localization recovery", localization_recovery},
      {"registration fixed point", fixed_point},
      {"shift recovery", shift_recovery},
      {"sinkhorn normalization", sinkhorn},
      {"cost monotonicity", cost_monotonicity},
      {"greedy pairing vs optimal assignment", pairing_vs_oracle},
      {"velocity outlier rejection", pca_statistics},
      {"speed map contrast", speed_contrast},
      {"density mass", density_mass},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception &e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed ? 1 : 0;
}
