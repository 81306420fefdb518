#include "racebench/qp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>

#include "racebench/errors.hpp"

namespace racebench {

namespace {

constexpr double kInf = 1e20;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqScale = 1e3;

bool is_inf_upper(double u) { return u >= kInf; }
bool is_inf_lower(double l) { return l <= -kInf; }

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

// Active-set correction passes per polish attempt; more once ADMM is slow.
int polish_passes(int iter) { return iter < 200 ? 1 : 25; }

double clip_scale(double v) {
  if (v < 1e-4) return 1.0;
  return std::min(v, 1e4);
}

}  // namespace

void QpProblem::validate() const {
  const auto n = g.size();
  const auto m = A.rows();
  if (H.rows() != n || H.cols() != n) throw UsageError("QP: H must be n x n with n = size of g");
  if (A.cols() != n && m > 0) throw UsageError("QP: A must have n columns");
  if (lower.size() != m || upper.size() != m) throw UsageError("QP: bounds must have one entry per row of A");
  if (!H.allFinite() || !g.allFinite() || !A.allFinite()) throw UsageError("QP: non-finite problem data");
  const double asym = n ? (H - H.transpose()).lpNorm<Eigen::Infinity>() : 0.0;
  if (asym > 1e-9 * std::max(1.0, H.lpNorm<Eigen::Infinity>())) throw UsageError("QP: H is not symmetric");
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::isnan(lower[i]) || std::isnan(upper[i]) || lower[i] > upper[i]) {
      throw UsageError("QP: lower > upper in row " + std::to_string(i));
    }
  }
}

std::string_view to_string(QpStatus status) {
  switch (status) {
    case QpStatus::solved: return "solved";
    case QpStatus::max_iter: return "max_iter";
    case QpStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& y) {
  KktResiduals r;
  if (problem.num_constraints() > 0) {
    const Eigen::VectorXd az = problem.A * z;
    const Eigen::VectorXd clamped = az.cwiseMax(problem.lower).cwiseMin(problem.upper);
    r.primal = inf_norm(clamped - az);
    r.dual = inf_norm(problem.H * z + problem.g + problem.A.transpose() * y);
  } else {
    r.dual = inf_norm(problem.H * z + problem.g);
  }
  return r;
}

QpSolver::QpSolver(QpSettings settings) : settings_(settings) {}

void QpSolver::setup(const QpProblem& problem) {
  const int n = problem.num_vars();
  const int m = problem.num_constraints();
  polish_ready_ = false;
  P_ = problem.H;
  P_.diagonal().array() += settings_.regularization;
  A_ = problem.A;
  q_ = problem.g;
  D_ = Eigen::VectorXd::Ones(n);
  E_ = Eigen::VectorXd::Ones(m);
  c_ = 1.0;

  // Ruiz equilibration of the KKT matrix [P A'; A 0].
  for (int it = 0; it < settings_.scaling_iters; ++it) {
    Eigen::VectorXd dd(n), de(m);
    Eigen::RowVectorXd colmax = P_.cwiseAbs().colwise().maxCoeff();
    if (m > 0) colmax = colmax.cwiseMax(A_.cwiseAbs().colwise().maxCoeff());
    for (int j = 0; j < n; ++j) dd[j] = 1.0 / std::sqrt(clip_scale(colmax[j]));
    if (m > 0) {
      const Eigen::VectorXd rowmax = A_.cwiseAbs().rowwise().maxCoeff();
      for (int i = 0; i < m; ++i) de[i] = 1.0 / std::sqrt(clip_scale(rowmax[i]));
    }
    P_.array().colwise() *= dd.array();
    P_.array().rowwise() *= dd.transpose().array();
    A_.array().colwise() *= de.array();
    A_.array().rowwise() *= dd.transpose().array();
    q_ = dd.cwiseProduct(q_);
    D_ = D_.cwiseProduct(dd);
    E_ = E_.cwiseProduct(de);

    double mean_col = 0.0;
    for (int j = 0; j < n; ++j) mean_col += P_.col(j).lpNorm<Eigen::Infinity>();
    mean_col /= std::max(1, n);
    const double gamma = 1.0 / clip_scale(std::max(mean_col, inf_norm(q_)));
    P_ *= gamma;
    q_ *= gamma;
    c_ *= gamma;
  }

  l_.resize(m);
  u_.resize(m);
  row_kind_.resize(m);
  for (int i = 0; i < m; ++i) {
    const double lo = problem.lower[i];
    const double hi = problem.upper[i];
    l_[i] = is_inf_lower(lo) ? -kInf : E_[i] * lo;
    u_[i] = is_inf_upper(hi) ? kInf : E_[i] * hi;
    if (is_inf_lower(lo) && is_inf_upper(hi)) {
      row_kind_[i] = 2;
    } else if (hi - lo < 1e-12 * std::max(1.0, std::abs(lo))) {
      row_kind_[i] = 1;
    } else {
      row_kind_[i] = 0;
    }
  }
  for (int k = 0; k < 3; ++k) {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i) {
      if (row_kind_[i] == k) rows.push_back(i);
    }
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), n);
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = A_.row(rows[r]);
    gram_[k] = Eigen::MatrixXd::Zero(n, n);
    if (!rows.empty()) {
      gram_[k].selfadjointView<Eigen::Lower>().rankUpdate(sub.transpose());
      gram_[k].triangularView<Eigen::StrictlyUpper>() = gram_[k].transpose();
    }
  }
  rho_ = settings_.rho;
}

void QpSolver::factor() {
  const int m = static_cast<int>(A_.rows());
  const double rho_k[3] = {rho_, std::min(kRhoMax, rho_ * kRhoEqScale), kRhoMin};
  rho_vec_.resize(m);
  for (int i = 0; i < m; ++i) rho_vec_[i] = rho_k[row_kind_[i]];
  Eigen::MatrixXd K = P_;
  K.diagonal().array() += settings_.sigma;
  for (int k = 0; k < 3; ++k) {
    if (gram_[k].size()) K += rho_k[k] * gram_[k];
  }
  llt_.compute(K);
  if (llt_.info() != Eigen::Success) throw std::runtime_error("QP: KKT factorization failed");
}

bool QpSolver::try_polish(const QpProblem& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& y,
                          int passes, QpSolution& out) {
  const int n = problem.num_vars();
  const int m = problem.num_constraints();
  const Eigen::VectorXd az = problem.A * z;
  // side: 0 inactive, -1 lower, +1 upper, 2 equality.
  std::vector<signed char> side(static_cast<std::size_t>(m), 0);
  for (int i = 0; i < m; ++i) {
    const double lo = problem.lower[i];
    const double hi = problem.upper[i];
    if (row_kind_[i] == 2) continue;
    if (row_kind_[i] == 1) side[static_cast<std::size_t>(i)] = 2;
    else if (!is_inf_lower(lo) && az[i] - lo < -y[i]) side[static_cast<std::size_t>(i)] = -1;
    else if (!is_inf_upper(hi) && hi - az[i] < y[i]) side[static_cast<std::size_t>(i)] = 1;
  }

  Eigen::MatrixXd H = problem.H;
  H.diagonal().array() += settings_.regularization;
  if (!polish_ready_) {
    polish_llt_.compute(H);
    if (polish_llt_.info() != Eigen::Success) return false;
    polish_w_ = problem.A.transpose();
    polish_llt_.matrixL().solveInPlace(polish_w_);
    polish_ready_ = true;
  }
  const Eigen::LLT<Eigen::MatrixXd>& hl = polish_llt_;

  // Equality-constrained solves on the guessed active set, corrected a few
  // times by dropping wrong-sign multipliers and adding violated rows.
  for (int pass = 0; pass < passes; ++pass) {
    std::vector<int> rows;
    for (int i = 0; i < m; ++i) {
      if (side[static_cast<std::size_t>(i)] != 0) rows.push_back(i);
    }
    const auto k = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd Aa(k, n);
    Eigen::VectorXd b(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      const int i = rows[static_cast<std::size_t>(r)];
      Aa.row(r) = problem.A.row(i);
      b[r] = side[static_cast<std::size_t>(i)] == 1 ? problem.upper[i] : problem.lower[i];
    }

    Eigen::VectorXd x, ya = Eigen::VectorXd::Zero(k);
    if (k == 0) {
      x = hl.solve(-problem.g);
    } else {
      const Eigen::MatrixXd W = polish_w_(Eigen::all, rows);
      Eigen::MatrixXd S(k, k);
      S.triangularView<Eigen::Lower>() = W.transpose() * W;
      S.triangularView<Eigen::StrictlyUpper>() = S.transpose();
      S.diagonal().array() += 1e-12 * std::max(1.0, S.diagonal().maxCoeff());
      Eigen::LDLT<Eigen::MatrixXd> sl(S);
      if (sl.info() != Eigen::Success) return false;
      // Solves [H Aa'; Aa 0][dx; dy] = [r1; r2] with iterative refinement.
      x = Eigen::VectorXd::Zero(n);
      for (int refine = 0; refine < 4; ++refine) {
        const Eigen::VectorXd r1 = -problem.g - H * x - Aa.transpose() * ya;
        const Eigen::VectorXd r2 = b - Aa * x;
        if (refine > 0 && std::max(inf_norm(r1), inf_norm(r2)) < 1e-13) break;
        const Eigen::VectorXd hr1 = hl.solve(r1);
        const Eigen::VectorXd dy = sl.solve(Aa * hr1 - r2);
        x += hl.solve(r1 - Aa.transpose() * dy);
        ya += dy;
      }
    }
    if (!x.allFinite() || !ya.allFinite()) return false;

    const double tol = settings_.eps_abs;
    Eigen::VectorXd yf = Eigen::VectorXd::Zero(m);
    bool changed = false;
    for (Eigen::Index r = 0; r < k; ++r) {
      const int i = rows[static_cast<std::size_t>(r)];
      auto& s = side[static_cast<std::size_t>(i)];
      if ((s == -1 && ya[r] > tol) || (s == 1 && ya[r] < -tol)) {
        s = 0;
        changed = true;
      }
      yf[i] = ya[r];
    }
    if (!changed) {
      const Eigen::VectorXd ax = problem.A * x;
      for (int i = 0; i < m; ++i) {
        auto& s = side[static_cast<std::size_t>(i)];
        if (s != 0 || row_kind_[i] == 2) continue;
        if (ax[i] < problem.lower[i] - tol) {
          s = -1;
          changed = true;
        } else if (ax[i] > problem.upper[i] + tol) {
          s = 1;
          changed = true;
        }
      }
    }
    if (changed) continue;

    const KktResiduals res = kkt_residuals(problem, x, yf);
    if (res.primal > settings_.eps_abs || res.dual > settings_.eps_abs) return false;
    out.z = x;
    out.y = yf;
    out.primal_res = res.primal;
    out.dual_res = res.dual;
    out.polished = true;
    return true;
  }
  return false;
}

QpSolution QpSolver::solve(const QpProblem& problem, const std::optional<QpWarmStart>& warm) {
  problem.validate();
  const int n = problem.num_vars();
  const int m = problem.num_constraints();

  QpSolution out;
  out.z = Eigen::VectorXd::Zero(n);
  out.y = Eigen::VectorXd::Zero(m);

  auto finish = [&](QpSolution& s, QpStatus status) {
    s.status = status;
    const KktResiduals r = kkt_residuals(problem, s.z, s.y);
    s.primal_res = r.primal;
    s.dual_res = r.dual;
    s.objective = problem.objective(s.z);
    return s;
  };

  if (warm) {
    if (warm->z.size() != n || warm->y.size() != m) throw UsageError("QP: warm start has wrong dimensions");
    const KktResiduals r = kkt_residuals(problem, warm->z, warm->y);
    if (r.primal <= settings_.eps_abs && r.dual <= settings_.eps_abs) {
      out.z = warm->z;
      out.y = warm->y;
      out.iterations = 0;
      return finish(out, QpStatus::solved);
    }
  }

  setup(problem);
  factor();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (warm) {
    x = warm->z.cwiseQuotient(D_);
    y = c_ * warm->y.cwiseQuotient(E_);
  }
  Eigen::VectorXd z = (A_ * x).cwiseMax(l_).cwiseMin(u_);

  const double alpha = settings_.alpha;
  const double sigma = settings_.sigma;
  Eigen::VectorXd xt(n), zt(m), zr(m), znew(m), ynew(m), dy(m), rhs(n);

  double best_score = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_z = D_.cwiseProduct(x);
  Eigen::VectorXd best_y = m ? Eigen::VectorXd(E_.cwiseProduct(y) / c_) : Eigen::VectorXd();
  std::vector<signed char> prev_active, polished_active;
  int next_polish = 0;
  int polish_wait = settings_.check_interval;

  for (int iter = 1; iter <= settings_.max_iter; ++iter) {
    rhs = sigma * x - q_;
    if (m > 0) rhs.noalias() += A_.transpose() * (rho_vec_.cwiseProduct(z) - y);
    xt = llt_.solve(rhs);
    zt.noalias() = A_ * xt;
    x = alpha * xt + (1.0 - alpha) * x;
    zr = alpha * zt + (1.0 - alpha) * z;
    znew = (zr + y.cwiseQuotient(rho_vec_)).cwiseMax(l_).cwiseMin(u_);
    ynew = y + rho_vec_.cwiseProduct(zr - znew);
    dy = ynew - y;
    z = znew;
    y = ynew;

    const bool check = iter % settings_.check_interval == 0 || iter == settings_.max_iter;
    if (!check) continue;

    const Eigen::VectorXd zu = D_.cwiseProduct(x);
    const Eigen::VectorXd yu = m ? Eigen::VectorXd(E_.cwiseProduct(y) / c_) : Eigen::VectorXd();
    const KktResiduals r = kkt_residuals(problem, zu, yu);
    out.iterations = iter;
    const double score = std::max(r.primal, r.dual);
    if (score < best_score) {
      best_score = score;
      best_z = zu;
      best_y = yu;
    }
    if (r.primal <= settings_.eps_abs && r.dual <= settings_.eps_abs) {
      out.z = zu;
      out.y = yu;
      return finish(out, QpStatus::solved);
    }

    if (settings_.polish && m > 0) {
      const Eigen::VectorXd az = problem.A * zu;
      std::vector<signed char> active(static_cast<std::size_t>(m), 0);
      for (int i = 0; i < m; ++i) {
        if (az[i] - problem.lower[i] < -yu[i]) active[static_cast<std::size_t>(i)] = -1;
        else if (problem.upper[i] - az[i] < yu[i]) active[static_cast<std::size_t>(i)] = 1;
      }
      if (active == prev_active && active != polished_active && iter >= next_polish) {
        polished_active = active;
        next_polish = iter + polish_wait;
        polish_wait *= 2;
        if (try_polish(problem, zu, yu, polish_passes(iter), out)) return finish(out, QpStatus::solved);
      }
      prev_active = std::move(active);
    } else if (settings_.polish && m == 0 && try_polish(problem, zu, yu, polish_passes(iter), out)) {
      return finish(out, QpStatus::solved);
    }

    // Primal infeasibility certificate from the dual increment.
    if (m > 0) {
      Eigen::VectorXd d = E_.cwiseProduct(dy);
      for (int i = 0; i < m; ++i) {
        if (is_inf_upper(problem.upper[i])) d[i] = std::min(d[i], 0.0);
        if (is_inf_lower(problem.lower[i])) d[i] = std::max(d[i], 0.0);
      }
      const double dn = inf_norm(d);
      if (dn > 1e-30) {
        const double at = inf_norm(problem.A.transpose() * d);
        double support = 0.0;
        for (int i = 0; i < m; ++i) {
          if (d[i] > 0.0) support += problem.upper[i] * d[i];
          else if (d[i] < 0.0) support += problem.lower[i] * d[i];
        }
        if (at <= settings_.eps_infeasible * dn && support < -settings_.eps_infeasible * dn) {
          out.z = zu;
          out.y = yu;
          return finish(out, QpStatus::infeasible);
        }
      }
    }

    if (settings_.adaptive_rho && m > 0 && iter % settings_.adaptive_rho_interval == 0) {
      const Eigen::VectorXd ax = A_ * x;
      const double rp = inf_norm((ax - z).cwiseQuotient(E_));
      const double np = std::max(inf_norm(ax.cwiseQuotient(E_)), inf_norm(z.cwiseQuotient(E_)));
      const Eigen::VectorXd px = P_ * x;
      const Eigen::VectorXd aty = A_.transpose() * y;
      const double rd = inf_norm((px + q_ + aty).cwiseQuotient(D_)) / c_;
      const double nd = std::max({inf_norm(px.cwiseQuotient(D_)), inf_norm(aty.cwiseQuotient(D_)),
                                  inf_norm(q_.cwiseQuotient(D_))}) /
                        c_;
      if (rp > 0.0 && rd > 0.0 && np > 0.0 && nd > 0.0) {
        const double ratio = std::sqrt((rp / np) / (rd / nd));
        const double rho_new = std::clamp(rho_ * ratio, kRhoMin, kRhoMax);
        if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) {
          rho_ = rho_new;
          factor();
        }
      }
    }
  }

  out.z = best_z;
  out.y = best_y;
  out.iterations = settings_.max_iter;
  return finish(out, QpStatus::max_iter);
}

QpSolution solve_qp(const QpProblem& problem, const std::optional<QpWarmStart>& warm, const QpSettings& settings) {
  QpSolver solver(settings);
  return solver.solve(problem, warm);
}

void dump_problem(const QpProblem& problem, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  auto matrix = [&](const char* name, const Eigen::MatrixXd& M) {
    out << "# " << name << ',' << M.rows() << ',' << M.cols() << '\n';
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      for (Eigen::Index j = 0; j < M.cols(); ++j) out << (j ? "," : "") << M(i, j);
      out << '\n';
    }
  };
  auto vector = [&](const char* name, const Eigen::VectorXd& v) {
    out << "# " << name << ',' << v.size() << '\n';
    for (Eigen::Index i = 0; i < v.size(); ++i) out << v[i] << '\n';
  };
  matrix("H", problem.H);
  vector("g", problem.g);
  matrix("A", problem.A);
  vector("lower", problem.lower);
  vector("upper", problem.upper);
}

}  // namespace racebench
