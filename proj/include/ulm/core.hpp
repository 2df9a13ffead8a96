#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ulm/errors.hpp"

namespace ulm {

// Subpixel image coordinate, (row, col) in pixel units.
struct Vec2 {
  double row = 0.0;
  double col = 0.0;

  Vec2 &operator+=(const Vec2 &o) {
    row += o.row;
    col += o.col;
    return *this;
  }
  Vec2 &operator-=(const Vec2 &o) {
    row -= o.row;
    col -= o.col;
    return *this;
  }
  friend Vec2 operator+(Vec2 a, const Vec2 &b) { return a += b; }
  friend Vec2 operator-(Vec2 a, const Vec2 &b) { return a -= b; }
  friend Vec2 operator*(double s, const Vec2 &v) { return {s * v.row, s * v.col}; }
  friend Vec2 operator*(const Vec2 &v, double s) { return s * v; }
  friend Vec2 operator-(const Vec2 &v) { return {-v.row, -v.col}; }
  friend bool operator==(const Vec2 &, const Vec2 &) = default;

  double norm_sq() const { return row * row + col * col; }
  double norm() const { return std::sqrt(norm_sq()); }
};

inline double distance(const Vec2 &a, const Vec2 &b) { return (a - b).norm(); }

// Integer pixel location.
struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel &, const Pixel &) = default;
};

// Dense row-major 2D array.
template <typename T> class Grid {
public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill) {
    if (rows < 0 || cols < 0)
      throw ContractError("grid dimensions must be non-negative");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T &operator()(int r, int c) { return data_[index(r, c)]; }
  const T &operator()(int r, int c) const { return data_[index(r, c)]; }

  bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  friend bool operator==(const Grid &, const Grid &) = default;

private:
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) +
           static_cast<std::size_t>(c);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

// Non-owning read-only view of one frame.
struct FrameView {
  std::span<const float> pixels;
  int height = 0;
  int width = 0;

  float operator()(int r, int c) const {
    return pixels[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) +
                  static_cast<std::size_t>(c)];
  }
  bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < height && c < width; }
};

inline FrameView view_of(const Grid<float> &g) { return {g.values(), g.rows(), g.cols()}; }

// Time-ordered stack of non-negative intensity frames. Immutable once built.
class FrameStack {
public:
  FrameStack() = default;
  // Throws ContractError when any invariant fails.
  FrameStack(std::size_t n_frames, int height, int width, float pixel_size_mm,
             float frame_rate_hz, std::vector<float> data);

  std::size_t n_frames() const { return n_frames_; }
  int height() const { return height_; }
  int width() const { return width_; }
  float pixel_size_mm() const { return pixel_size_mm_; }
  float frame_rate_hz() const { return frame_rate_hz_; }

  FrameView frame(std::size_t index) const;
  float at(std::size_t f, int r, int c) const { return frame(f)(r, c); }
  std::span<const float> data() const { return data_; }

  friend bool operator==(const FrameStack &, const FrameStack &) = default;

private:
  std::size_t n_frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  float pixel_size_mm_ = 1.0f;
  float frame_rate_hz_ = 1.0f;
  std::vector<float> data_;
};

struct Bubble {
  Vec2 position;        // refined center
  double amplitude = 0; // intensity at the integer peak
  Pixel peak;           // integer detection location
  double correlation = 0;
  int patch_size = 0;
  std::vector<float> patch; // patch_size x patch_size, row-major, centered on peak
};

struct BubbleSet {
  std::size_t frame_index = 0;
  std::vector<Bubble> bubbles;

  std::size_t size() const { return bubbles.size(); }
  bool empty() const { return bubbles.empty(); }
};

enum class TransformMode { translation, affine };

std::string to_string(TransformMode mode);
TransformMode transform_mode_from_string(const std::string &s);

// Every tunable of the pipeline. Lengths are in CEUS pixels unless marked as
// super-resolution (SR) pixels.
struct PipelineConfig {
  // localization
  int psf_patch_size = 7;
  double corr_threshold = 0.6;
  int min_peak_separation = 3;
  int com_window = 5;
  double psf_sigma = 1.0; // synthetic Gaussian PSF when no operator pick is given

  // registration
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 0.1;
  double w1 = 4.0;
  double w2 = 0.5;
  int max_outer_iters = 10;
  int sinkhorn_iters = 20;
  double sinkhorn_tol = 1e-9;
  TransformMode transform_mode = TransformMode::translation;
  double pair_gate_distance = 5.0;
  double pair_min_prob = 0.05;

  // tracks
  int min_track_length = 3;

  // maps (SR pixels)
  int sr_factor = 8;
  double density_sigma = 1.0;
  double gather_radius = 24.0;
  double avg_sigma = 12.0;

  // Throws ConfigError naming the first offending field.
  void validate() const;
};

} // namespace ulm
