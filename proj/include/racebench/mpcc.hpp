#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "racebench/qp.hpp"
#include "racebench/track.hpp"
#include "racebench/vehicle.hpp"

namespace racebench {

struct MpccConfig {
  int N = 25;
  double dt_mpc = 0.02;
  double q_c = 10.0;
  double q_l = 1000.0;
  double gamma_prog = 2.0;
  double R_a = 0.01;
  double R_ddelta = 5.0;
  double R_dvtheta = 0.1;
  double slack_weight = 1000.0;
  double boundary_margin = 1.5 * 0.31;
  // Control period of the closed loop; maps the planned steering rate to a
  // steering target for the next simulation step.
  double dt_control = 0.01;
  bool warm_start_qp = true;
  int qp_max_iter = 4000;

  void validate() const;
};

struct ContouringErrors {
  double e_c = 0.0;  // along the left normal of the tangent at theta
  double e_l = 0.0;  // along the tangent at theta
};

ContouringErrors contouring_errors(Point2 pose, double theta, const ReferenceTrajectory& path);

struct MpccStage {
  double x = 0.0;
  double y = 0.0;
  double v_x = 0.0;
  double theta = 0.0;
};

struct PlannedTrajectory {
  std::vector<MpccStage> stages;  // N + 1 predicted stages, stage 0 is the current state
  std::vector<double> slacks;     // N
  Action first_action;
  double solve_time = 0.0;  // s
  QpStatus qp_status = QpStatus::solved;
  int iterations = 0;
  bool degraded = false;  // fallback braking action was used
};

// Real-time-iteration contouring controller. Each call linearizes the model
// around the shifted previous plan, condenses the horizon into one dense QP
// over inputs and slacks, solves it once and returns the first input as an
// actuator-layer action.
class MpccController {
 public:
  static constexpr int kNx = 8;  // x, y, psi, v_x, v_y, yaw rate, delta, theta
  static constexpr int kNu = 3;  // accel, steering rate, progress speed

  MpccController(std::shared_ptr<const TrackGeometry> track, ReferenceTrajectory path, VehicleParams model,
                 MpccConfig config = {});

  PlannedTrajectory solve_step(const DynamicState& state);
  // Drops the warm start so the next call starts cold.
  void reset();

  const MpccConfig& config() const { return config_; }
  const ReferenceTrajectory& path() const { return path_; }

 private:
  using Vec8 = Eigen::Matrix<double, kNx, 1>;
  using Vec3 = Eigen::Matrix<double, kNu, 1>;
  Vec8 model_step(const Vec8& x, const Vec3& u) const;
  Action fallback(const DynamicState& state) const;

  std::shared_ptr<const TrackGeometry> track_;
  ReferenceTrajectory path_;
  VehicleParams model_;
  MpccConfig config_;
  QpSolver solver_;

  bool has_warm_ = false;
  std::vector<Vec3> u_guess_;
  Eigen::VectorXd y_guess_;
  double theta_prev_ = 0.0;
  double vtheta_prev_ = 0.0;
  std::vector<double> track_hint_;
};

struct SolveLogRow {
  int step = 0;
  double solve_ms = 0.0;
  QpStatus status = QpStatus::solved;
  int iterations = 0;
};

void write_solve_log(const std::vector<SolveLogRow>& rows, const std::filesystem::path& path);

struct RacelineResult {
  ReferenceTrajectory trajectory;
  std::vector<SolveLogRow> log;
  double lap_time = 0.0;  // of the logged lap, s
};

// Drives `laps` closed-loop laps with nominal friction from p = 0 and logs
// the positions of the last lap as a closed trajectory resampled at 0.1 m.
// Throws RacelineError when the controller crashes or times out.
RacelineResult generate_raceline(std::shared_ptr<const TrackGeometry> track, const MpccConfig& config,
                                 int laps = 2, const VehicleParams& params = {});

}  // namespace racebench
