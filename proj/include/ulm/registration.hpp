#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "ulm/core.hpp"

namespace ulm::registration {

// Displacement-form registration function f(y) = y + u(y), with
// u(y) = t (translation) or u(y) = (A - I) y + t (affine). Zero parameters
// give the identity.
struct Transform {
  TransformMode mode = TransformMode::translation;
  // Displacement gradient B = A - I, row-major [b_rr, b_rc, b_cr, b_cc].
  // Always zero in translation mode.
  std::array<double, 4> gradient{0.0, 0.0, 0.0, 0.0};
  Vec2 translation;

  static Transform identity(TransformMode mode = TransformMode::translation) {
    Transform t;
    t.mode = mode;
    return t;
  }

  Vec2 apply(const Vec2 &y) const { return y + displacement(y); }
  Vec2 displacement(const Vec2 &y) const {
    return {gradient[0] * y.row + gradient[1] * y.col + translation.row,
            gradient[2] * y.row + gradient[3] * y.col + translation.col};
  }

  // [b_rr, b_rc, t_r, b_cr, b_cc, t_c]; all zero for the identity.
  std::array<double, 6> parameters() const {
    return {gradient[0], gradient[1], translation.row, gradient[2], gradient[3], translation.col};
  }
  double parameter_norm() const;
};

double parameter_distance(const Transform &a, const Transform &b);

// m x n non-negative matrix; rows index reference bubbles, columns targets.
class ProbabilityMatrix {
public:
  ProbabilityMatrix() = default;
  ProbabilityMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double row_sum(std::size_t i) const;
  double col_sum(std::size_t j) const;
  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Pair {
  std::size_t ref = 0;
  std::size_t tgt = 0;
  double probability = 0;
  double distance = 0; // |x_i - f(y_j)| in pixels
};

struct Pairing {
  std::vector<Pair> pairs; // in acceptance order
  std::vector<std::size_t> unmatched_ref;
  std::vector<std::size_t> unmatched_tgt;
};

// Location similarity, (1/w1) exp(-|x - fy|^2 / (2 w1)).
double p_loc(const Vec2 &x, const Vec2 &fy, double w1);

// Appearance similarity, (1/w2) exp(-SSD / (2 w2)), with SSD taken between
// the two patches after each is scaled to unit energy. Throws ContractError
// on shape mismatch.
double p_psf(std::span<const float> patch_ref, std::span<const float> patch_tgt, double w2);

// Sum of squared differences between the unit-energy versions of a and b.
double patch_disparity(std::span<const float> a, std::span<const float> b);

// Unnormalized p_ij = p_loc(x_i, f(y_j)) * p_psf(patch_i, patch_j).
ProbabilityMatrix probability_matrix(const BubbleSet &ref, const BubbleSet &tgt,
                                     const Transform &f, double w1, double w2);

// Alternating row/column normalization. Stops after `iters` sweeps or once
// every row and column sum is within `tol` of one. Throws GateError on an
// all-zero row or column.
ProbabilityMatrix sinkhorn_normalize(const ProbabilityMatrix &p, int iters, double tol);

// alpha * sum p_ij |x_i - f(y_j)|^2 + beta * sum p_ij SSD_ij
//   + gamma * sum_j |f(y_j) - y_j|^2
double cost(const BubbleSet &ref, const BubbleSet &tgt, const ProbabilityMatrix &p,
            const Transform &f, double alpha, double beta, double gamma);

// Gauss-Newton minimization of the f-dependent part of the cost with p
// fixed. The model is linear in its parameters, so one step from `start`
// lands on the minimizer. An affine fit with rank-deficient normal
// equations falls back to translation; the returned mode reports it.
Transform fit_transform(const BubbleSet &ref, const BubbleSet &tgt, const ProbabilityMatrix &p,
                        double alpha, double gamma, TransformMode mode,
                        const Transform &start = Transform{});

struct IterationTrace {
  int iteration = 0;
  Transform before;
  Transform after;
  double cost_before = 0; // cost with this iteration's p and the previous f
  double cost_after = 0;  // same p, refitted f
};

struct Registration {
  Transform transform;
  ProbabilityMatrix probabilities; // normalized, m x n
  std::vector<bool> active_ref;    // rows that took part in normalization
  std::vector<bool> active_tgt;
  int iterations = 0;
};

using TraceObserver = std::function<void(const IterationTrace &)>;

// Alternates {probability_matrix -> sinkhorn_normalize -> fit_transform}
// from the identity. Candidates farther than pair_gate_distance (under the
// current f) get probability zero; bubbles left with no candidate are kept
// out of normalization and fitting, and their rows/columns are zero.
Registration register_sets(const BubbleSet &ref, const BubbleSet &tgt,
                           const PipelineConfig &config, const TraceObserver &observer = {});

// Greedy max-probability assignment with probability and distance gates.
Pairing pair(const ProbabilityMatrix &p, const BubbleSet &ref, const BubbleSet &tgt,
             const Transform &f, const PipelineConfig &config);

} // namespace ulm::registration
