#pragma once

#include <filesystem>
#include <optional>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Cholesky>

namespace racebench {

// minimize 0.5 z'Hz + g'z  subject to  lower <= Az <= upper.
// Bounds may be +-infinity (or beyond +-1e20) for one-sided rows.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd A;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_vars() const { return static_cast<int>(g.size()); }
  int num_constraints() const { return static_cast<int>(A.rows()); }
  double objective(const Eigen::VectorXd& z) const { return 0.5 * z.dot(H * z) + g.dot(z); }
  // Throws UsageError on inconsistent dimensions, asymmetric H or lower > upper.
  void validate() const;
};

enum class QpStatus { solved, max_iter, infeasible };
std::string_view to_string(QpStatus status);

struct QpSettings {
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  double eps_abs = 1e-6;
  double eps_infeasible = 1e-8;
  int max_iter = 4000;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 25;
  int scaling_iters = 10;
  bool polish = true;
  int check_interval = 5;
  // Added to the diagonal of H so that its smallest eigenvalue is positive.
  double regularization = 1e-8;
};

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd y;
  QpStatus status = QpStatus::max_iter;
  int iterations = 0;
  double primal_res = 0.0;
  double dual_res = 0.0;
  double objective = 0.0;
  bool polished = false;
};

struct KktResiduals {
  double primal = 0.0;  // ||clamp(Az, lower, upper) - Az||_inf
  double dual = 0.0;    // ||Hz + g + A'y||_inf
};

// Multiplier sign convention: y_i <= 0 when row i sits at its lower bound,
// y_i >= 0 at its upper bound.
KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& y);

struct QpWarmStart {
  Eigen::VectorXd z;
  Eigen::VectorXd y;
};

// Dense ADMM with Ruiz equilibration, adaptive penalty, infeasibility
// detection and active-set polishing. The instance keeps its workspace, so
// one solve at a time per instance.
class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {});

  QpSolution solve(const QpProblem& problem, const std::optional<QpWarmStart>& warm = std::nullopt);

  const QpSettings& settings() const { return settings_; }
  QpSettings& settings() { return settings_; }

 private:
  void setup(const QpProblem& problem);
  void factor();
  bool try_polish(const QpProblem& problem, const Eigen::VectorXd& z, const Eigen::VectorXd& y, int passes,
                  QpSolution& out);

  QpSettings settings_;
  // Scaled problem data.
  Eigen::MatrixXd P_, A_;
  Eigen::VectorXd q_, l_, u_;
  Eigen::VectorXd D_, E_;
  double c_ = 1.0;
  Eigen::VectorXd rho_vec_;
  Eigen::ArrayXi row_kind_;  // 0 inequality, 1 equality, 2 free
  Eigen::MatrixXd gram_[3];
  double rho_ = 0.1;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  // Polishing workspace on the unscaled problem, built on first use per solve.
  bool polish_ready_ = false;
  Eigen::LLT<Eigen::MatrixXd> polish_llt_;
  Eigen::MatrixXd polish_w_;  // L^-1 A'
};

// Convenience wrapper around a temporary solver.
QpSolution solve_qp(const QpProblem& problem, const std::optional<QpWarmStart>& warm = std::nullopt,
                    const QpSettings& settings = {});

// Writes H, g, A, lower, upper as labelled CSV blocks.
void dump_problem(const QpProblem& problem, const std::filesystem::path& path);

}  // namespace racebench
