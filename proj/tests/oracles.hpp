#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "racebench/qp.hpp"
#include "racebench/track.hpp"

namespace oracle {

struct DenseNearest {
  double s = 0.0;
  double dist = 0.0;
  racebench::Point2 point;
};

// Brute-force nearest point on the linear polyline, sampled every `step` m.
inline DenseNearest dense_nearest(const racebench::Polyline& line, racebench::Point2 q, double step = 1e-4) {
  DenseNearest best{0.0, std::numeric_limits<double>::infinity(), {}};
  const auto& pts = line.points();
  const auto& cum = line.cum_arclength();
  for (std::size_t i = 0; i < line.segment_count(); ++i) {
    const racebench::Point2 a = pts[i];
    const racebench::Point2 b = pts[(i + 1) % pts.size()];
    const double len = racebench::norm(b - a);
    const int k = std::max(1, static_cast<int>(std::ceil(len / step)));
    for (int j = 0; j < k; ++j) {
      const double t = static_cast<double>(j) / k;
      const racebench::Point2 c = a + t * (b - a);
      const double d = racebench::norm(q - c);
      if (d < best.dist) best = {cum[i] + t * len, d, c};
    }
  }
  return best;
}

struct ActiveSetResult {
  Eigen::VectorXd z;
  Eigen::VectorXd y;
  double objective = 0.0;
  int active_count = 0;
  bool found = false;
};

// Enumerates active sets by increasing size. Each row is inactive, at its
// lower bound or at its upper bound; each candidate equality-constrained KKT
// system is solved directly. The first candidate that is primal feasible and
// has correctly signed multipliers is the unique optimum of a strictly
// convex problem.
inline ActiveSetResult enumerate_active_sets(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                                             const Eigen::MatrixXd& A, const Eigen::VectorXd& lo,
                                             const Eigen::VectorXd& hi, int max_size = -1) {
  const int n = static_cast<int>(g.size());
  const int m = static_cast<int>(A.rows());
  if (max_size < 0) max_size = std::min(n, m);
  const double tol = 1e-9;
  ActiveSetResult res;

  // Reduced KKT via the Schur complement A_S H^-1 A_S' of the active rows.
  const Eigen::LLT<Eigen::MatrixXd> hl(H);
  const Eigen::VectorXd z_free = hl.solve(-g);
  const Eigen::MatrixXd hinv_at = hl.solve(A.transpose());
  const Eigen::MatrixXd G = A * hinv_at;
  const Eigen::VectorXd a_zfree = A * z_free;

  using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 32, 32>;
  using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 32, 1>;
  std::vector<int> rows;
  std::vector<int> sides;
  auto try_candidate = [&]() -> bool {
    const int k = static_cast<int>(rows.size());
    SmallVec ya(k);
    if (k > 0) {
      SmallMat S(k, k);
      SmallVec rhs(k);
      for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) S(r, c) = G(rows[r], rows[c]);
        rhs[r] = a_zfree[rows[r]] - (sides[r] < 0 ? lo[rows[r]] : hi[rows[r]]);
      }
      Eigen::LLT<SmallMat> sl(S);
      if (sl.info() != Eigen::Success || sl.matrixLLT().diagonal().minCoeff() < 1e-7) return false;
      ya = sl.solve(rhs);
    }
    for (int r = 0; r < k; ++r) {
      const bool equality = hi[rows[r]] - lo[rows[r]] < 1e-12;
      if (!equality && sides[r] < 0 && ya[r] > tol) return false;
      if (!equality && sides[r] > 0 && ya[r] < -tol) return false;
    }
    // Feasibility of A z = A z_free - G_S ya before anything else.
    for (int i = 0; i < m; ++i) {
      double az = a_zfree[i];
      for (int r = 0; r < k; ++r) az -= G(i, rows[r]) * ya[r];
      if (az < lo[i] - tol || az > hi[i] + tol) return false;
    }
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd z = z_free;
    for (int r = 0; r < k; ++r) {
      y[rows[r]] = ya[r];
      z -= ya[r] * hinv_at.col(rows[r]);
    }
    res.z = z;
    res.y = y;
    res.objective = 0.5 * z.dot(H * z) + g.dot(z);
    res.active_count = k;
    res.found = true;
    return true;
  };

  // Depth-first over combinations of `size` rows, each at one of two sides.
  auto search = [&](auto&& self, int start, int size) -> bool {
    if (static_cast<int>(rows.size()) == size) return try_candidate();
    for (int i = start; i < m; ++i) {
      const bool equality = hi[i] - lo[i] < 1e-12;
      for (int side : {-1, 1}) {
        if (side < 0 && std::isinf(lo[i])) continue;
        if (side > 0 && std::isinf(hi[i])) continue;
        if (equality && side > 0) continue;
        rows.push_back(i);
        sides.push_back(side);
        const bool done = self(self, i + 1, size);
        rows.pop_back();
        sides.pop_back();
        if (done) return true;
      }
    }
    return false;
  };
  for (int size = 0; size <= max_size; ++size) {
    if (search(search, 0, size)) return res;
  }
  return res;
}

// Arc length of a point sequence.
inline double polyline_length(const std::vector<racebench::Point2>& pts, bool closed) {
  double total = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) total += racebench::norm(pts[i] - pts[i - 1]);
  if (closed && pts.size() > 1) total += racebench::norm(pts.front() - pts.back());
  return total;
}

// Strictly convex QP with a known feasible point: H = M'M + 0.1 I, two-sided
// rows around A z0, some rows one-sided and an occasional equality row.
template <class Rng>
racebench::QpProblem random_qp(Rng& rng, int max_n = 10, int max_m = 20) {
  std::uniform_int_distribution<int> un(1, max_n);
  std::uniform_int_distribution<int> um(1, max_m);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uw(0.3, 2.5);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int n = un(rng);
  const int m = um(rng);
  auto randn = [&](int r, int c) {
    Eigen::MatrixXd M(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = gauss(rng);
    return M;
  };
  racebench::QpProblem p;
  const Eigen::MatrixXd M = randn(n, n);
  p.H = M.transpose() * M + 0.1 * Eigen::MatrixXd::Identity(n, n);
  p.g = 2.0 * randn(n, 1);
  p.A = randn(m, n);
  const Eigen::VectorXd z0 = randn(n, 1);
  const Eigen::VectorXd az0 = p.A * z0;
  p.lower.resize(m);
  p.upper.resize(m);
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    const double r = u01(rng);
    p.lower[i] = az0[i] - uw(rng);
    p.upper[i] = az0[i] + uw(rng);
    if (r < 0.15) p.lower[i] = -inf;
    else if (r < 0.3) p.upper[i] = inf;
    else if (r < 0.35 && i < n / 2) p.lower[i] = p.upper[i] = az0[i];
  }
  return p;
}

}  // namespace oracle
