#include "ulm/localize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ulm/parallel.hpp"

namespace ulm::localize {

namespace {

// Windows whose RMS deviation from their own mean falls below this fraction
// of the frame's peak intensity are treated as flat (correlation 0).
constexpr double kFlatFraction = 1e-3;

void require_inside(const FrameView &frame, Pixel center, int k, const char *what) {
  const int h = k / 2;
  if (center.row - h < 0 || center.col - h < 0 || center.row + h >= frame.height ||
      center.col + h >= frame.width)
    throw BoundsError(std::string(what) + ": " + std::to_string(k) + "x" + std::to_string(k) +
                      " window at (" + std::to_string(center.row) + ", " +
                      std::to_string(center.col) + ") exceeds " + std::to_string(frame.height) +
                      "x" + std::to_string(frame.width) + " frame");
}

} // namespace

std::vector<float> extract_window(const FrameView &frame, Pixel center, int k) {
  if (k < 1 || k % 2 == 0)
    throw ContractError("window size must be odd and positive");
  require_inside(frame, center, k, "extract_window");
  const int h = k / 2;
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
  for (int r = -h; r <= h; ++r)
    for (int c = -h; c <= h; ++c)
      out.push_back(frame(center.row + r, center.col + c));
  return out;
}

Psf normalize_psf(std::span<const float> window, int k) {
  if (k < 1 || k % 2 == 0 || window.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(k))
    throw ContractError("PSF window must be k x k with odd k");
  double mean = 0.0;
  for (float v : window)
    mean += v;
  mean /= static_cast<double>(window.size());
  double energy = 0.0;
  for (float v : window)
    energy += (v - mean) * (v - mean);
  if (!(energy > 0.0))
    throw ContractError("flat PSF window has zero energy");
  const double scale = 1.0 / std::sqrt(energy);
  Psf psf;
  psf.size = k;
  psf.values.reserve(window.size());
  for (float v : window)
    psf.values.push_back(static_cast<float>((v - mean) * scale));
  return psf;
}

Psf extract_psf(const FrameStack &stack, std::size_t frame_index, Pixel center, int k) {
  const FrameView frame = stack.frame(frame_index);
  return normalize_psf(extract_window(frame, center, k), k);
}

Psf gaussian_psf(double sigma, int k) {
  if (!(sigma > 0.0))
    throw ContractError("PSF sigma must be positive");
  if (k < 3 || k % 2 == 0)
    throw ContractError("PSF size must be odd and >= 3");
  const int h = k / 2;
  std::vector<float> window;
  for (int r = -h; r <= h; ++r)
    for (int c = -h; c <= h; ++c)
      window.push_back(static_cast<float>(std::exp(-(r * r + c * c) / (2.0 * sigma * sigma))));
  return normalize_psf(window, k);
}

CorrelationMap correlation_map(const FrameView &frame, const Psf &psf) {
  const int k = psf.size;
  if (frame.height <= k || frame.width <= k)
    throw ContractError("frame must be larger than the PSF patch in both axes");
  CorrelationMap map{Grid<double>(frame.height, frame.width, -1.0), k};

  double peak = 0.0;
  for (float v : frame.pixels)
    peak = std::max(peak, static_cast<double>(std::fabs(v)));
  const double n = static_cast<double>(k) * k;
  const double flat_energy = n * (kFlatFraction * peak) * (kFlatFraction * peak);

  const int h = k / 2;
  for (int r = h; r < frame.height - h; ++r) {
    for (int c = h; c < frame.width - h; ++c) {
      double sum = 0.0, sum_sq = 0.0, dot = 0.0;
      for (int dr = -h; dr <= h; ++dr) {
        for (int dc = -h; dc <= h; ++dc) {
          const double v = frame(r + dr, c + dc);
          sum += v;
          sum_sq += v * v;
          dot += v * psf(dr + h, dc + h);
        }
      }
      const double energy = std::max(0.0, sum_sq - sum * sum / n);
      map.values(r, c) = energy <= flat_energy ? 0.0 : dot / std::sqrt(energy);
    }
  }
  return map;
}

std::vector<Pixel> detect_peaks(const CorrelationMap &map, double threshold, int min_sep) {
  struct Candidate {
    double value;
    Pixel at;
  };
  std::vector<Candidate> candidates;
  const auto &g = map.values;
  for (int r = 0; r < g.rows(); ++r) {
    for (int c = 0; c < g.cols(); ++c) {
      if (!map.is_valid(r, c))
        continue;
      const double v = g(r, c);
      if (v < threshold)
        continue;
      // Ties go to the first cell in raster order, so an exact two-pixel
      // plateau (bubble on a half-pixel) still yields one peak.
      bool is_max = true;
      for (int dr = -1; dr <= 1 && is_max; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || !g.contains(r + dr, c + dc))
            continue;
          const bool earlier = dr < 0 || (dr == 0 && dc < 0);
          const double n = g(r + dr, c + dc);
          if (n > v || (earlier && n == v)) {
            is_max = false;
            break;
          }
        }
      if (is_max)
        candidates.push_back({v, {r, c}});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate &a, const Candidate &b) {
    if (a.value != b.value)
      return a.value > b.value;
    if (a.at.row != b.at.row)
      return a.at.row < b.at.row;
    return a.at.col < b.at.col;
  });

  std::vector<Pixel> kept;
  for (const auto &cand : candidates) {
    const bool clear = std::all_of(kept.begin(), kept.end(), [&](const Pixel &p) {
      return std::max(std::abs(p.row - cand.at.row), std::abs(p.col - cand.at.col)) >= min_sep;
    });
    if (clear)
      kept.push_back(cand.at);
  }
  return kept;
}

Refined subpixel_refine(const FrameView &frame, Pixel peak, int window) {
  if (window < 1 || window % 2 == 0)
    throw ContractError("refinement window must be odd and positive");
  require_inside(frame, peak, window, "subpixel_refine");
  const int h = window / 2;
  double floor = frame(peak.row, peak.col);
  for (int dr = -h; dr <= h; ++dr)
    for (int dc = -h; dc <= h; ++dc)
      floor = std::min(floor, static_cast<double>(frame(peak.row + dr, peak.col + dc)));

  // Offsets are accumulated relative to the peak so the result is exact for
  // symmetric windows.
  double wsum = 0.0, rsum = 0.0, csum = 0.0;
  for (int dr = -h; dr <= h; ++dr) {
    for (int dc = -h; dc <= h; ++dc) {
      const double w = std::max(frame(peak.row + dr, peak.col + dc) - floor, 0.0);
      wsum += w;
      rsum += w * dr;
      csum += w * dc;
    }
  }
  Refined out;
  out.amplitude = frame(peak.row, peak.col);
  out.position = {static_cast<double>(peak.row), static_cast<double>(peak.col)};
  if (wsum > 0.0) {
    out.position.row += rsum / wsum;
    out.position.col += csum / wsum;
  }
  return out;
}

BubbleSet localize_frame(const FrameView &frame, std::size_t frame_index, const Psf &psf,
                         const PipelineConfig &config) {
  config.validate();
  if (psf.size != config.psf_patch_size)
    throw ContractError("PSF size " + std::to_string(psf.size) +
                        " does not match psf_patch_size " + std::to_string(config.psf_patch_size));
  const CorrelationMap map = correlation_map(frame, psf);
  const auto peaks = detect_peaks(map, config.corr_threshold, config.min_peak_separation);

  BubbleSet set;
  set.frame_index = frame_index;
  set.bubbles.reserve(peaks.size());
  for (const Pixel &p : peaks) {
    const Refined refined = subpixel_refine(frame, p, config.com_window);
    Bubble b;
    b.position = refined.position;
    b.amplitude = refined.amplitude;
    b.peak = p;
    b.correlation = map.values(p.row, p.col);
    b.patch_size = config.psf_patch_size;
    b.patch = extract_window(frame, p, config.psf_patch_size);
    set.bubbles.push_back(std::move(b));
  }
  return set;
}

std::vector<BubbleSet> localize_stack(const FrameStack &stack, const Psf &psf,
                                      const PipelineConfig &config, int threads) {
  config.validate();
  std::vector<BubbleSet> out(stack.n_frames());
  parallel_for(stack.n_frames(), threads,
               [&](std::size_t f) { out[f] = localize_frame(stack.frame(f), f, psf, config); });
  return out;
}

} // namespace ulm::localize
