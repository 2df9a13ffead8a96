// ulm: microbubble localization, registration-based tracking and
// super-resolution map rendering from ULMF frame stacks.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "ulm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ulm;

namespace {

struct CommonFlags {
  std::string config;
  std::string out = ".";
  int threads = 1;
  bool dump_pairings = false;
  std::optional<std::size_t> psf_frame;
  std::optional<int> psf_row;
  std::optional<int> psf_col;
  std::optional<double> psf_sigma;
};

void add_common(CLI::App *cmd, CommonFlags &f, bool with_psf, bool with_pairings) {
  cmd->add_option("--config", f.config, "pipeline config file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--threads", f.threads, "worker cap")->check(CLI::PositiveNumber);
  if (with_pairings)
    cmd->add_flag("--dump-pairings", f.dump_pairings, "write pairings.csv (frame,i,j,prob,dist_px)");
  if (with_psf) {
    cmd->add_option("--psf-frame", f.psf_frame, "frame of the operator-picked PSF");
    cmd->add_option("--psf-row", f.psf_row, "row of the operator-picked PSF center");
    cmd->add_option("--psf-col", f.psf_col, "column of the operator-picked PSF center");
    cmd->add_option("--psf-sigma", f.psf_sigma, "synthetic Gaussian PSF sigma (px)");
  }
}

pipeline::RunOptions to_options(const CommonFlags &f, const std::string &stack) {
  pipeline::RunOptions o;
  o.stack = stack;
  if (!f.config.empty())
    o.config = f.config;
  o.out_dir = f.out;
  o.threads = f.threads;
  o.dump_pairings = f.dump_pairings;
  o.psf = {f.psf_frame, f.psf_row, f.psf_col, f.psf_sigma};
  return o;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Ultrasound localization microscopy pipeline"};
  app.set_version_flag("--version", std::string(pipeline::kToolVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  std::string stack, bubbles, tracks_csv, scenario, pred_dir, truth;
  std::optional<std::uint64_t> seed;
  double tol = 1.0;

  auto *sim = app.add_subcommand("simulate", "render a synthetic scenario to a ULMF stack + truth CSV");
  sim->add_option("scenario", scenario, "scenario file")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", flags.out, "output directory");
  sim->add_option("--seed", seed, "override the scenario seed");

  auto *loc = app.add_subcommand("localize", "detect and refine bubbles -> bubbles.csv");
  loc->add_option("stack", stack, "ULMF stack")->required()->check(CLI::ExistingFile);
  add_common(loc, flags, true, false);

  auto *trk = app.add_subcommand("track", "register consecutive frames and link tracks -> tracks.csv");
  trk->add_option("stack", stack, "ULMF stack")->required()->check(CLI::ExistingFile);
  trk->add_option("bubbles", bubbles, "bubbles.csv")->required()->check(CLI::ExistingFile);
  add_common(trk, flags, false, true);

  auto *ren = app.add_subcommand("render", "density and speed maps from bubbles + tracks");
  ren->add_option("stack", stack, "ULMF stack (geometry)")->required()->check(CLI::ExistingFile);
  ren->add_option("bubbles", bubbles, "bubbles.csv")->required()->check(CLI::ExistingFile);
  ren->add_option("tracks", tracks_csv, "tracks.csv")->required()->check(CLI::ExistingFile);
  add_common(ren, flags, false, false);

  auto *run = app.add_subcommand("run", "localize + track + render + manifest");
  run->add_option("stack", stack, "ULMF stack")->required()->check(CLI::ExistingFile);
  add_common(run, flags, true, true);

  auto *ev = app.add_subcommand("evaluate", "score a run directory against ground truth");
  ev->add_option("pred_dir", pred_dir, "directory with bubbles.csv and tracks.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("truth", truth, "truth tracks CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--tol", tol, "match tolerance (px)")->check(CLI::PositiveNumber);
  ev->add_option("--out", flags.out, "where to write metrics.csv (default: pred_dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      pipeline::cmd_simulate(scenario, flags.out, seed);
    } else if (loc->parsed()) {
      pipeline::cmd_localize(to_options(flags, stack));
    } else if (trk->parsed()) {
      pipeline::cmd_track(to_options(flags, stack), bubbles);
    } else if (ren->parsed()) {
      pipeline::cmd_render(to_options(flags, stack), bubbles, tracks_csv);
    } else if (run->parsed()) {
      const auto s = pipeline::cmd_run(to_options(flags, stack));
      std::printf("%zu frames, %zu bubbles, %zu tracks, %zu velocity samples -> %s\n", s.frames,
                  s.bubbles, s.tracks, s.velocity_samples, flags.out.c_str());
    } else if (ev->parsed()) {
      const fs::path out = ev->count("--out") ? fs::path(flags.out) : fs::path(pred_dir);
      const auto m = pipeline::cmd_evaluate(pred_dir, truth, tol, out);
      std::cout << pipeline::format_metrics(m);
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
