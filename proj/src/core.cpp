#include "ulm/core.hpp"

#include <cmath>
#include <string>

namespace ulm {

FrameStack::FrameStack(std::size_t n_frames, int height, int width, float pixel_size_mm,
                       float frame_rate_hz, std::vector<float> data)
    : n_frames_(n_frames), height_(height), width_(width), pixel_size_mm_(pixel_size_mm),
      frame_rate_hz_(frame_rate_hz), data_(std::move(data)) {
  if (height_ <= 0 || width_ <= 0)
    throw ContractError("frame dimensions must be positive");
  if (!(pixel_size_mm_ > 0.0f) || !std::isfinite(pixel_size_mm_))
    throw ContractError("pixel_size must be positive");
  if (!(frame_rate_hz_ > 0.0f) || !std::isfinite(frame_rate_hz_))
    throw ContractError("frame_rate must be positive");
  const std::size_t expected =
      n_frames_ * static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  if (data_.size() != expected)
    throw ContractError("frame data holds " + std::to_string(data_.size()) +
                        " values, expected " + std::to_string(expected));
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw ContractError("non-finite intensity at element " + std::to_string(i));
    if (data_[i] < 0.0f)
      throw ContractError("negative intensity at element " + std::to_string(i));
  }
}

FrameView FrameStack::frame(std::size_t index) const {
  if (index >= n_frames_)
    throw BoundsError("frame index " + std::to_string(index) + " out of range (" +
                      std::to_string(n_frames_) + " frames)");
  const std::size_t plane = static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  return {std::span<const float>(data_).subspan(index * plane, plane), height_, width_};
}

std::string to_string(TransformMode mode) {
  return mode == TransformMode::affine ? "affine" : "translation";
}

TransformMode transform_mode_from_string(const std::string &s) {
  if (s == "translation")
    return TransformMode::translation;
  if (s == "affine")
    return TransformMode::affine;
  throw ConfigError("unknown transform mode '" + s + "' (expected translation|affine)");
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string &field, const std::string &why) {
    throw ConfigError("invalid " + field + ": " + why);
  };
  if (psf_patch_size < 3 || psf_patch_size % 2 == 0)
    fail("psf_patch_size", "must be odd and >= 3");
  if (com_window < 1 || com_window % 2 == 0)
    fail("com_window", "must be odd and >= 1");
  if (com_window > psf_patch_size)
    fail("com_window", "must not exceed psf_patch_size");
  if (!(corr_threshold > 0.0 && corr_threshold < 1.0))
    fail("corr_threshold", "must lie in (0, 1)");
  if (min_peak_separation < 1)
    fail("min_peak_separation", "must be >= 1");
  if (!(psf_sigma > 0.0))
    fail("psf_sigma", "must be positive");
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0))
    fail("alpha/beta/gamma", "must be non-negative");
  if (!(w1 > 0.0))
    fail("w1", "must be positive");
  if (!(w2 > 0.0))
    fail("w2", "must be positive");
  if (max_outer_iters < 1)
    fail("max_outer_iters", "must be >= 1");
  if (sinkhorn_iters < 1)
    fail("sinkhorn_iters", "must be >= 1");
  if (!(sinkhorn_tol > 0.0))
    fail("sinkhorn_tol", "must be positive");
  if (!(pair_gate_distance > 0.0))
    fail("pair_gate_distance", "must be positive");
  if (!(pair_min_prob >= 0.0 && pair_min_prob <= 1.0))
    fail("pair_min_prob", "must lie in [0, 1]");
  if (min_track_length < 2)
    fail("min_track_length", "must be >= 2");
  if (sr_factor < 1)
    fail("sr_factor", "must be >= 1");
  if (!(density_sigma > 0.0))
    fail("density_sigma", "must be positive");
  if (!(gather_radius > 0.0))
    fail("gather_radius", "must be positive");
  if (!(avg_sigma > 0.0))
    fail("avg_sigma", "must be positive");
}

} // namespace ulm
