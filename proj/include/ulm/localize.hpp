#pragma once

#include <vector>

#include "ulm/core.hpp"

namespace ulm::localize {

// Zero-mean, unit-energy k x k template.
struct Psf {
  int size = 0;
  std::vector<float> values;

  float operator()(int r, int c) const {
    return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(size) +
                  static_cast<std::size_t>(c)];
  }
};

// ZNCC scores; cells within half a patch of the border are invalid and
// hold -1.
struct CorrelationMap {
  Grid<double> values;
  int psf_patch_size = 0;

  int half() const { return psf_patch_size / 2; }
  bool is_valid(int r, int c) const {
    return r >= half() && c >= half() && r < values.rows() - half() && c < values.cols() - half();
  }
};

inline constexpr double kCorrelationSlack = 1e-6;

// Mean-subtracts and scales a raw k x k window to unit energy. Throws
// ContractError for flat (zero-energy) input.
Psf normalize_psf(std::span<const float> window, int k);

// Operator-picked PSF: the k x k window of `frame_index` centered on
// `center`. Throws BoundsError if the window leaves the frame.
Psf extract_psf(const FrameStack &stack, std::size_t frame_index, Pixel center, int k);

// Sampled isotropic Gaussian, normalized like extract_psf.
Psf gaussian_psf(double sigma, int k);

CorrelationMap correlation_map(const FrameView &frame, const Psf &psf);

std::vector<Pixel> detect_peaks(const CorrelationMap &map, double threshold, int min_sep);

struct Refined {
  Vec2 position;
  double amplitude = 0;
};

// Amplitude-weighted centre of mass over a window x window neighbourhood,
// with the window minimum subtracted from every weight.
Refined subpixel_refine(const FrameView &frame, Pixel peak, int window);

// Raw k x k window centered on `center` (row-major). Throws BoundsError.
std::vector<float> extract_window(const FrameView &frame, Pixel center, int k);

BubbleSet localize_frame(const FrameView &frame, std::size_t frame_index, const Psf &psf,
                         const PipelineConfig &config);

// Frames are processed on up to `threads` workers; output is in frame order
// and independent of the worker count.
std::vector<BubbleSet> localize_stack(const FrameStack &stack, const Psf &psf,
                                      const PipelineConfig &config, int threads = 1);

} // namespace ulm::localize
