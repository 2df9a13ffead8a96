#include "ulm/registration.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

namespace ulm::registration {

namespace {

std::vector<double> unit_energy(std::span<const float> patch) {
  double energy = 0.0;
  for (float v : patch)
    energy += static_cast<double>(v) * v;
  std::vector<double> out(patch.begin(), patch.end());
  if (energy > 0.0) {
    const double s = 1.0 / std::sqrt(energy);
    for (double &v : out)
      v *= s;
  }
  return out;
}

double ssd(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

std::vector<std::vector<double>> unit_patches(const BubbleSet &set) {
  std::vector<std::vector<double>> out;
  out.reserve(set.size());
  for (const auto &b : set.bubbles)
    out.push_back(unit_energy(b.patch));
  return out;
}

// m x n matrix of patch disparities; throws on any shape mismatch.
std::vector<double> disparity_table(const BubbleSet &ref, const BubbleSet &tgt) {
  const auto a = unit_patches(ref);
  const auto b = unit_patches(tgt);
  std::vector<double> out(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (a[i].size() != b[j].size())
        throw ContractError("patch shape mismatch between reference bubble " + std::to_string(i) +
                            " and target bubble " + std::to_string(j));
      out[i * b.size() + j] = ssd(a[i], b[j]);
    }
  return out;
}

double max_marginal_deviation(const ProbabilityMatrix &p) {
  double dev = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i)
    dev = std::max(dev, std::fabs(p.row_sum(i) - 1.0));
  for (std::size_t j = 0; j < p.cols(); ++j)
    dev = std::max(dev, std::fabs(p.col_sum(j) - 1.0));
  return dev;
}

} // namespace

double Transform::parameter_norm() const {
  double s = 0.0;
  for (double v : parameters())
    s += v * v;
  return std::sqrt(s);
}

double parameter_distance(const Transform &a, const Transform &b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  double s = 0.0;
  for (std::size_t k = 0; k < pa.size(); ++k)
    s += (pa[k] - pb[k]) * (pa[k] - pb[k]);
  return std::sqrt(s);
}

double ProbabilityMatrix::row_sum(std::size_t i) const {
  double s = 0.0;
  for (std::size_t j = 0; j < cols_; ++j)
    s += (*this)(i, j);
  return s;
}

double ProbabilityMatrix::col_sum(std::size_t j) const {
  double s = 0.0;
  for (std::size_t i = 0; i < rows_; ++i)
    s += (*this)(i, j);
  return s;
}

double p_loc(const Vec2 &x, const Vec2 &fy, double w1) {
  if (!(w1 > 0.0))
    throw ContractError("w1 must be positive");
  return std::exp(-(x - fy).norm_sq() / (2.0 * w1)) / w1;
}

double patch_disparity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw ContractError("patch shape mismatch: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + " pixels");
  return ssd(unit_energy(a), unit_energy(b));
}

double p_psf(std::span<const float> patch_ref, std::span<const float> patch_tgt, double w2) {
  if (!(w2 > 0.0))
    throw ContractError("w2 must be positive");
  return std::exp(-patch_disparity(patch_ref, patch_tgt) / (2.0 * w2)) / w2;
}

ProbabilityMatrix probability_matrix(const BubbleSet &ref, const BubbleSet &tgt,
                                     const Transform &f, double w1, double w2) {
  if (!(w1 > 0.0) || !(w2 > 0.0))
    throw ContractError("w1 and w2 must be positive");
  const std::size_t m = ref.size(), n = tgt.size();
  ProbabilityMatrix p(m, n);
  if (m == 0 || n == 0)
    return p;
  const auto disparity = disparity_table(ref, tgt);
  std::vector<Vec2> moved(n);
  for (std::size_t j = 0; j < n; ++j)
    moved[j] = f.apply(tgt.bubbles[j].position);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double loc = std::exp(-(ref.bubbles[i].position - moved[j]).norm_sq() / (2.0 * w1)) / w1;
      const double psf = std::exp(-disparity[i * n + j] / (2.0 * w2)) / w2;
      p(i, j) = loc * psf;
    }
  return p;
}

ProbabilityMatrix sinkhorn_normalize(const ProbabilityMatrix &input, int iters, double tol) {
  for (double v : input.values())
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ContractError("probability matrix entries must be finite and non-negative");
  for (std::size_t i = 0; i < input.rows(); ++i)
    if (!(input.row_sum(i) > 0.0))
      throw GateError("reference bubble " + std::to_string(i) + " has no candidate partner", true, i);
  for (std::size_t j = 0; j < input.cols(); ++j)
    if (!(input.col_sum(j) > 0.0))
      throw GateError("target bubble " + std::to_string(j) + " has no candidate partner", false, j);

  ProbabilityMatrix p = input;
  for (int sweep = 0; sweep < iters; ++sweep) {
    if (max_marginal_deviation(p) < tol)
      break;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      const double s = p.row_sum(i);
      for (std::size_t j = 0; j < p.cols(); ++j)
        p(i, j) /= s;
    }
    for (std::size_t j = 0; j < p.cols(); ++j) {
      const double s = p.col_sum(j);
      for (std::size_t i = 0; i < p.rows(); ++i)
        p(i, j) /= s;
    }
  }
  return p;
}

double cost(const BubbleSet &ref, const BubbleSet &tgt, const ProbabilityMatrix &p,
            const Transform &f, double alpha, double beta, double gamma) {
  const std::size_t m = ref.size(), n = tgt.size();
  if (p.rows() != m || p.cols() != n)
    throw ContractError("probability matrix shape does not match the bubble sets");
  double position = 0.0, appearance = 0.0, movement = 0.0;
  std::vector<double> disparity;
  if (beta != 0.0)
    disparity = disparity_table(ref, tgt);
  for (std::size_t j = 0; j < n; ++j) {
    const Vec2 fy = f.apply(tgt.bubbles[j].position);
    movement += (fy - tgt.bubbles[j].position).norm_sq();
    for (std::size_t i = 0; i < m; ++i) {
      position += p(i, j) * (ref.bubbles[i].position - fy).norm_sq();
      if (beta != 0.0)
        appearance += p(i, j) * disparity[i * n + j];
    }
  }
  return alpha * position + beta * appearance + gamma * movement;
}

namespace {

// Parameter vector layout follows Transform::parameters().
Eigen::Matrix<double, 6, 1> to_vector(const Transform &f) {
  const auto a = f.parameters();
  return Eigen::Map<const Eigen::Matrix<double, 6, 1>>(a.data());
}

Transform from_vector(const Eigen::Matrix<double, 6, 1> &v, TransformMode mode) {
  Transform f;
  f.mode = mode;
  if (mode == TransformMode::affine)
    f.gradient = {v(0), v(1), v(3), v(4)};
  f.translation = {v(2), v(5)};
  return f;
}

// One Gauss-Newton step over the active parameters (translation: indices 2
// and 5; affine: all six). Returns false when the normal equations are
// rank deficient.
bool gauss_newton_step(const BubbleSet &ref, const BubbleSet &tgt, const ProbabilityMatrix &p,
                       double alpha, double gamma, TransformMode mode, const Transform &start,
                       Transform &out) {
  const std::size_t m = ref.size(), n = tgt.size();
  Transform base = start;
  if (mode == TransformMode::translation)
    base.gradient = {0.0, 0.0, 0.0, 0.0};
  Eigen::Matrix<double, 6, 6> normal = Eigen::Matrix<double, 6, 6>::Zero();
  Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();

  // Per-axis feature vector: d u_axis / d theta_axis.
  auto features = [mode](const Vec2 &y) {
    Eigen::Vector3d phi;
    if (mode == TransformMode::affine)
      phi << y.row, y.col, 1.0;
    else
      phi << 0.0, 0.0, 1.0;
    return phi;
  };

  for (std::size_t j = 0; j < n; ++j) {
    const Vec2 y = tgt.bubbles[j].position;
    const Vec2 u = base.displacement(y);
    double weight = 0.0;
    Vec2 weighted_ref;
    for (std::size_t i = 0; i < m; ++i) {
      const double w = alpha * p(i, j);
      weight += w;
      weighted_ref += w * ref.bubbles[i].position;
    }
    // Data residuals x_i - y - u(y) and regularizer residuals u(y) share the
    // Jacobian of u, so the block for this target collapses to
    // (weight + gamma) phi phi^T.
    const Vec2 data = weighted_ref - weight * (y + u);
    const Vec2 reg = -gamma * u;
    const Eigen::Vector3d phi = features(y);
    const Eigen::Matrix3d block = (weight + gamma) * phi * phi.transpose();
    normal.block<3, 3>(0, 0) += block;
    normal.block<3, 3>(3, 3) += block;
    rhs.segment<3>(0) += (data.row + reg.row) * phi;
    rhs.segment<3>(3) += (data.col + reg.col) * phi;
  }

  std::vector<int> active = mode == TransformMode::affine ? std::vector<int>{0, 1, 2, 3, 4, 5}
                                                          : std::vector<int>{2, 5};
  const int k = static_cast<int>(active.size());
  Eigen::MatrixXd h(k, k);
  Eigen::VectorXd g(k);
  for (int a = 0; a < k; ++a) {
    g(a) = rhs(active[a]);
    for (int b = 0; b < k; ++b)
      h(a, b) = normal(active[a], active[b]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  const double largest = eig.eigenvalues().maxCoeff();
  const double smallest = eig.eigenvalues().minCoeff();
  if (!(largest > 0.0) || smallest <= 1e-12 * largest)
    return false;
  const Eigen::VectorXd step = h.ldlt().solve(g);

  Eigen::Matrix<double, 6, 1> theta = to_vector(base);
  for (int a = 0; a < k; ++a)
    theta(active[a]) += step(a);
  out = from_vector(theta, mode);
  return true;
}

} // namespace

Transform fit_transform(const BubbleSet &ref, const BubbleSet &tgt, const ProbabilityMatrix &p,
                        double alpha, double gamma, TransformMode mode, const Transform &start) {
  if (p.rows() != ref.size() || p.cols() != tgt.size())
    throw ContractError("probability matrix shape does not match the bubble sets");
  if (alpha < 0.0 || gamma < 0.0)
    throw ContractError("alpha and gamma must be non-negative");
  Transform out;
  if (mode == TransformMode::affine) {
    if (gauss_newton_step(ref, tgt, p, alpha, gamma, mode, start, out))
      return out;
    // Rank-deficient affine system (too few or collinear pairs). The
    // translation-mode result signals the fallback to the caller.
  }
  if (!gauss_newton_step(ref, tgt, p, alpha, gamma, TransformMode::translation, start, out))
    throw ContractError("no correspondence mass to fit a transform");
  return out;
}

namespace {

struct ActiveSets {
  std::vector<bool> rows;
  std::vector<bool> cols;
  std::vector<std::size_t> row_index;
  std::vector<std::size_t> col_index;
};

// Zeroes every candidate beyond the gate distance (under f) and records which
// bubbles keep at least one candidate.
ActiveSets gate(const BubbleSet &ref, const BubbleSet &tgt, const Transform &f,
                ProbabilityMatrix &raw, double gate_distance) {
  ActiveSets a{std::vector<bool>(ref.size(), false), std::vector<bool>(tgt.size(), false), {}, {}};
  for (std::size_t j = 0; j < tgt.size(); ++j) {
    const Vec2 fy = f.apply(tgt.bubbles[j].position);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (distance(ref.bubbles[i].position, fy) > gate_distance)
        raw(i, j) = 0.0;
      if (raw(i, j) > 0.0)
        a.rows[i] = a.cols[j] = true;
    }
  }
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (a.rows[i])
      a.row_index.push_back(i);
  for (std::size_t j = 0; j < tgt.size(); ++j)
    if (a.cols[j])
      a.col_index.push_back(j);
  return a;
}

// Normalizes the gated submatrix and scatters it back into an m x n matrix
// whose inactive rows and columns are zero.
ProbabilityMatrix normalize_gated(const ProbabilityMatrix &raw, const ActiveSets &a,
                                  const PipelineConfig &config) {
  ProbabilityMatrix full(raw.rows(), raw.cols());
  if (a.row_index.empty())
    return full;
  ProbabilityMatrix sub(a.row_index.size(), a.col_index.size());
  for (std::size_t r = 0; r < a.row_index.size(); ++r)
    for (std::size_t c = 0; c < a.col_index.size(); ++c)
      sub(r, c) = raw(a.row_index[r], a.col_index[c]);
  sub = sinkhorn_normalize(sub, config.sinkhorn_iters, config.sinkhorn_tol);
  for (std::size_t r = 0; r < a.row_index.size(); ++r)
    for (std::size_t c = 0; c < a.col_index.size(); ++c)
      full(a.row_index[r], a.col_index[c]) = sub(r, c);
  return full;
}

} // namespace

Registration register_sets(const BubbleSet &ref, const BubbleSet &tgt,
                           const PipelineConfig &config, const TraceObserver &observer) {
  config.validate();
  Registration result;
  result.transform = Transform::identity(config.transform_mode);
  result.probabilities = ProbabilityMatrix(ref.size(), tgt.size());
  result.active_ref.assign(ref.size(), false);
  result.active_tgt.assign(tgt.size(), false);
  if (ref.empty() || tgt.empty())
    return result;

  Transform f = result.transform;
  for (int it = 1; it <= config.max_outer_iters; ++it) {
    ProbabilityMatrix raw = probability_matrix(ref, tgt, f, config.w1, config.w2);
    const ActiveSets active = gate(ref, tgt, f, raw, config.pair_gate_distance);
    if (active.row_index.empty())
      break;
    const ProbabilityMatrix p = normalize_gated(raw, active, config);

    IterationTrace trace;
    trace.iteration = it;
    trace.before = f;
    trace.cost_before = cost(ref, tgt, p, f, config.alpha, config.beta, config.gamma);
    const Transform next =
        fit_transform(ref, tgt, p, config.alpha, config.gamma, config.transform_mode, f);
    trace.after = next;
    result.iterations = it;
    if (observer) {
      trace.cost_after = cost(ref, tgt, p, next, config.alpha, config.beta, config.gamma);
      observer(trace);
    }
    const double change = parameter_distance(f, next);
    f = next;
    if (change < 1e-6)
      break;
  }

  ProbabilityMatrix raw = probability_matrix(ref, tgt, f, config.w1, config.w2);
  const ActiveSets active = gate(ref, tgt, f, raw, config.pair_gate_distance);
  result.transform = f;
  result.probabilities = normalize_gated(raw, active, config);
  result.active_ref = active.rows;
  result.active_tgt = active.cols;
  return result;
}

Pairing pair(const ProbabilityMatrix &p, const BubbleSet &ref, const BubbleSet &tgt,
             const Transform &f, const PipelineConfig &config) {
  if (p.rows() != ref.size() || p.cols() != tgt.size())
    throw ContractError("probability matrix shape does not match the bubble sets");
  struct Entry {
    double prob;
    std::size_t i, j;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0.0 && p(i, j) >= config.pair_min_prob)
        entries.push_back({p(i, j), i, j});
  std::sort(entries.begin(), entries.end(), [](const Entry &a, const Entry &b) {
    if (a.prob != b.prob)
      return a.prob > b.prob;
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });

  std::vector<bool> ref_used(ref.size(), false), tgt_used(tgt.size(), false);
  Pairing out;
  for (const auto &e : entries) {
    if (ref_used[e.i] || tgt_used[e.j])
      continue;
    const double d = distance(ref.bubbles[e.i].position, f.apply(tgt.bubbles[e.j].position));
    if (d > config.pair_gate_distance)
      continue;
    ref_used[e.i] = tgt_used[e.j] = true;
    out.pairs.push_back({e.i, e.j, e.prob, d});
  }
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (!ref_used[i])
      out.unmatched_ref.push_back(i);
  for (std::size_t j = 0; j < tgt.size(); ++j)
    if (!tgt_used[j])
      out.unmatched_tgt.push_back(j);
  return out;
}

} // namespace ulm::registration
