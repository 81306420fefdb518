#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "racebench/errors.hpp"
#include "racebench/qp.hpp"

using namespace racebench;

namespace {

QpProblem scalar(double h, double g, double lo, double hi) {
  QpProblem p;
  p.H = Eigen::MatrixXd::Constant(1, 1, h);
  p.g = Eigen::VectorXd::Constant(1, g);
  p.A = Eigen::MatrixXd::Identity(1, 1);
  p.lower = Eigen::VectorXd::Constant(1, lo);
  p.upper = Eigen::VectorXd::Constant(1, hi);
  return p;
}

}  // namespace

TEST(Qp, InteriorOptimum) {
  const QpSolution s = solve_qp(scalar(1.0, -1.0, -10.0, 10.0));
  ASSERT_EQ(s.status, QpStatus::solved);
  EXPECT_NEAR(s.z[0], 1.0, 1e-6);
  EXPECT_NEAR(s.y[0], 0.0, 1e-6);
}

TEST(Qp, ClampedAtLowerBound) {
  const QpSolution s = solve_qp(scalar(1.0, 0.0, 2.0, 3.0));
  ASSERT_EQ(s.status, QpStatus::solved);
  EXPECT_NEAR(s.z[0], 2.0, 1e-6);
  // Lower-bound multipliers are non-positive under Hz + g + A'y = 0.
  EXPECT_NEAR(s.y[0], -2.0, 1e-6);
}

TEST(Qp, ResidualExamples) {
  QpProblem p;
  p.H = Eigen::MatrixXd::Identity(1, 1);
  p.g = Eigen::VectorXd::Constant(1, -1.0);
  p.A.resize(0, 1);
  p.lower.resize(0);
  p.upper.resize(0);
  const KktResiduals r = kkt_residuals(p, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(0));
  EXPECT_DOUBLE_EQ(r.dual, 1.0);
  EXPECT_DOUBLE_EQ(r.primal, 0.0);

  const QpProblem b = scalar(1.0, 0.0, -1.0, 1.0);
  EXPECT_EQ(kkt_residuals(b, Eigen::VectorXd::Constant(1, 0.3), Eigen::VectorXd::Zero(1)).primal, 0.0);
  EXPECT_DOUBLE_EQ(kkt_residuals(b, Eigen::VectorXd::Constant(1, 1.5), Eigen::VectorXd::Zero(1)).primal, 0.5);
}

TEST(Qp, UnconstrainedProblem) {
  QpProblem p;
  p.H = Eigen::Matrix2d{{2.0, 0.5}, {0.5, 1.0}};
  p.g = Eigen::Vector2d{1.0, -1.0};
  p.A.resize(0, 2);
  p.lower.resize(0);
  p.upper.resize(0);
  const QpSolution s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::solved);
  const Eigen::VectorXd z = p.H.ldlt().solve(-p.g);
  EXPECT_NEAR((s.z - z).norm(), 0.0, 1e-7);
}

TEST(Qp, MatchesActiveSetEnumeration) {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 100; ++k) {
    const QpProblem p = oracle::random_qp(rng);
    const auto ref = oracle::enumerate_active_sets(p.H, p.g, p.A, p.lower, p.upper);
    ASSERT_TRUE(ref.found) << "case " << k;
    const QpSolution s = solve_qp(p);
    ASSERT_EQ(s.status, QpStatus::solved) << "case " << k;
    EXPECT_NEAR(s.objective, ref.objective, 1e-6) << "case " << k;
    const KktResiduals r = kkt_residuals(p, s.z, s.y);
    EXPECT_LT(r.primal, 1e-6);
    EXPECT_LT(r.dual, 1e-6);
    const KktResiduals ro = kkt_residuals(p, ref.z, ref.y);
    EXPECT_LT(ro.primal, 1e-6);
    EXPECT_LT(ro.dual, 1e-6);
  }
}

TEST(Qp, WarmStartResolvesQuickly) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 20; ++k) {
    const QpProblem p = oracle::random_qp(rng);
    const QpSolution cold = solve_qp(p);
    ASSERT_EQ(cold.status, QpStatus::solved);
    const QpSolution warm = solve_qp(p, QpWarmStart{cold.z, cold.y});
    EXPECT_EQ(warm.status, QpStatus::solved);
    EXPECT_LE(warm.iterations, 5);
  }
}

TEST(Qp, ScaleInvariance) {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 20; ++k) {
    QpProblem p = oracle::random_qp(rng);
    const QpSolution a = solve_qp(p);
    p.H *= 37.5;
    p.g *= 37.5;
    const QpSolution b = solve_qp(p);
    ASSERT_EQ(a.status, QpStatus::solved);
    ASSERT_EQ(b.status, QpStatus::solved);
    EXPECT_LT((a.z - b.z).lpNorm<Eigen::Infinity>(), 1e-5);
  }
}

TEST(Qp, SemidefiniteCostIsRegularized) {
  QpProblem p;
  p.H = Eigen::Matrix2d{{1.0, 0.0}, {0.0, 0.0}};
  p.g = Eigen::Vector2d{0.0, -1.0};
  p.A = Eigen::Matrix2d::Identity();
  p.lower = Eigen::Vector2d{-1.0, -1.0};
  p.upper = Eigen::Vector2d{1.0, 1.0};
  const QpSolution s = solve_qp(p);
  ASSERT_EQ(s.status, QpStatus::solved);
  EXPECT_NEAR(s.z[0], 0.0, 1e-6);
  EXPECT_NEAR(s.z[1], 1.0, 1e-6);
}

TEST(Qp, DetectsInfeasibility) {
  QpProblem p;
  p.H = Eigen::Matrix2d::Identity();
  p.g = Eigen::Vector2d::Zero();
  p.A = Eigen::MatrixXd(2, 2);
  p.A << 1.0, 1.0, 1.0, 1.0;
  p.lower = Eigen::Vector2d{2.0, -std::numeric_limits<double>::infinity()};
  p.upper = Eigen::Vector2d{std::numeric_limits<double>::infinity(), 1.0};
  const QpSolution s = solve_qp(p);
  EXPECT_EQ(s.status, QpStatus::infeasible);
}

TEST(Qp, IterationCapReturnsBestIterate) {
  std::mt19937_64 rng(5);
  const QpProblem p = oracle::random_qp(rng);
  QpSettings st;
  st.max_iter = 3;
  st.polish = false;
  const QpSolution s = solve_qp(p, std::nullopt, st);
  if (s.status != QpStatus::solved) {
    EXPECT_EQ(s.status, QpStatus::max_iter);
    EXPECT_TRUE(s.z.allFinite());
  }
}

TEST(Qp, RejectsInconsistentProblem) {
  QpProblem p = scalar(1.0, 0.0, 3.0, 2.0);
  EXPECT_THROW(solve_qp(p), UsageError);
  QpProblem q = scalar(1.0, 0.0, 0.0, 1.0);
  q.g.resize(2);
  EXPECT_THROW(solve_qp(q), UsageError);
}

TEST(Qp, DumpWritesBlocks) {
  const auto path = std::filesystem::temp_directory_path() / "racebench_qp_dump.csv";
  dump_problem(scalar(1.0, -1.0, -10.0, 10.0), path);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const char* block : {"# H,1,1", "# g,1", "# A,1,1", "# lower,1", "# upper,1"}) {
    EXPECT_NE(text.find(block), std::string::npos) << block;
  }
  std::filesystem::remove(path);
}
