#include "racebench/mpcc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "racebench/env.hpp"
#include "racebench/errors.hpp"

namespace racebench {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kRowsPerStage = 9;
constexpr int kVarsPerStage = 4;  // accel, steering rate, progress speed, slack

}  // namespace

void MpccConfig::validate() const {
  if (N < 1) throw ConfigError("mpcc.N must be at least 1");
  if (!(dt_mpc > 0.0)) throw ConfigError("mpcc.dt_mpc must be positive");
  if (N * dt_mpc < 0.3 - 1e-12) throw ConfigError("mpcc horizon N * dt_mpc must cover at least 0.3 s");
  const std::pair<const char*, double> weights[] = {
      {"q_c", q_c},           {"q_l", q_l},           {"gamma_prog", gamma_prog},
      {"R_a", R_a},           {"R_ddelta", R_ddelta}, {"R_dvtheta", R_dvtheta},
      {"slack_weight", slack_weight}, {"boundary_margin", boundary_margin},
  };
  for (const auto& [name, v] : weights) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("mpcc.") + name + " must be >= 0");
  }
  if (!(dt_control > 0.0)) throw ConfigError("mpcc.dt_control must be positive");
  if (qp_max_iter < 1) throw ConfigError("mpcc.qp_max_iter must be positive");
}

ContouringErrors contouring_errors(Point2 pose, double theta, const ReferenceTrajectory& path) {
  const Polyline::Frame f = path.path().frame_at(theta);
  const Point2 d = pose - f.origin;
  return {dot(d, left_normal(f.tangent)), dot(d, f.tangent)};
}

MpccController::MpccController(std::shared_ptr<const TrackGeometry> track, ReferenceTrajectory path,
                               VehicleParams model, MpccConfig config)
    : track_(std::move(track)), path_(std::move(path)), model_(model), config_(config) {
  if (!track_) throw ConfigError("mpcc needs a track");
  if (path_.empty()) throw ConfigError("mpcc needs a non-empty path");
  model_.validate();
  config_.validate();
  solver_.settings().max_iter = config_.qp_max_iter;
}

void MpccController::reset() {
  has_warm_ = false;
  u_guess_.clear();
  y_guess_.resize(0);
  track_hint_.clear();
}

MpccController::Vec8 MpccController::model_step(const Vec8& x, const Vec3& u) const {
  Vec8 out;
  out.head<kStateDim>() = integrate_rk4(x.head<kStateDim>(), u[0], u[1], model_, config_.dt_mpc);
  out[7] = x[7] + u[2] * config_.dt_mpc;
  return out;
}

Action MpccController::fallback(const DynamicState& state) const { return {0.0, state.delta}; }

PlannedTrajectory MpccController::solve_step(const DynamicState& state) {
  const auto t_start = std::chrono::steady_clock::now();
  const int N = config_.N;
  const int nz = kVarsPerStage * N;
  const int m = kRowsPerStage * N;
  const double dt = config_.dt_mpc;
  const Polyline& line = path_.path();
  const double L = line.length();

  // Path parameter of the current position, unwrapped near the previous plan.
  const double max_dist = 4.0 * track_->max_half_width() + 2.0;
  double theta0 = 0.0;
  {
    std::optional<double> hint;
    if (has_warm_) hint = line.wrap(theta_prev_);
    FrenetPose pose;
    try {
      pose = line.project({state.s_x, state.s_y}, state.psi, hint, max_dist);
    } catch (const ProjectionError&) {
      PlannedTrajectory out;
      out.first_action = fallback(state);
      out.degraded = true;
      out.qp_status = QpStatus::infeasible;
      reset();
      out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      return out;
    }
    theta0 = pose.p;
    if (has_warm_ && line.closed()) theta0 = theta_prev_ + track_advancement(line.wrap(theta_prev_), pose.p, L);
  }

  // Input guess: shifted previous solution or a coasting guess.
  std::vector<Vec3> ubar(static_cast<std::size_t>(N));
  if (has_warm_ && static_cast<int>(u_guess_.size()) == N) {
    for (int k = 0; k < N; ++k) ubar[static_cast<std::size_t>(k)] = u_guess_[static_cast<std::size_t>(std::min(k + 1, N - 1))];
  } else {
    for (auto& u : ubar) u = Vec3(0.0, 0.0, std::max(state.v_x, 0.5));
  }

  std::vector<Vec8> xbar(static_cast<std::size_t>(N + 1));
  xbar[0] << state.s_x, state.s_y, state.psi, state.v_x, state.v_y, state.psi_dot, state.delta, theta0;
  for (int k = 0; k < N; ++k) xbar[static_cast<std::size_t>(k + 1)] = model_step(xbar[static_cast<std::size_t>(k)], ubar[static_cast<std::size_t>(k)]);

  // Condensed sensitivities: x_k - xbar_k = Gamma_k (z - zbar).
  std::vector<Eigen::Matrix<double, kNx, Eigen::Dynamic>> gamma(static_cast<std::size_t>(N + 1));
  gamma[0] = Eigen::Matrix<double, kNx, Eigen::Dynamic>::Zero(kNx, nz);
  for (int k = 0; k < N; ++k) {
    const Vec8& x = xbar[static_cast<std::size_t>(k)];
    const Vec3& u = ubar[static_cast<std::size_t>(k)];
    const Vec8& fx = xbar[static_cast<std::size_t>(k + 1)];
    Eigen::Matrix<double, kNx, kNx> Ak;
    Eigen::Matrix<double, kNx, kNu> Bk;
    for (int i = 0; i < kNx; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
      Vec8 xp = x;
      xp[i] += h;
      Ak.col(i) = (model_step(xp, u) - fx) / h;
    }
    for (int j = 0; j < kNu; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(u[j]));
      Vec3 up = u;
      up[j] += h;
      Bk.col(j) = (model_step(x, up) - fx) / h;
    }
    auto& next = gamma[static_cast<std::size_t>(k + 1)];
    next.noalias() = Ak * gamma[static_cast<std::size_t>(k)];
    next.middleCols(kVarsPerStage * k, kNu) += Bk;
  }

  Eigen::VectorXd zbar = Eigen::VectorXd::Zero(nz);
  for (int k = 0; k < N; ++k) zbar.segment<kNu>(kVarsPerStage * k) = ubar[static_cast<std::size_t>(k)];

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(nz, nz);
  qp.g = Eigen::VectorXd::Zero(nz);
  qp.A = Eigen::MatrixXd::Zero(m, nz);
  qp.lower = Eigen::VectorXd::Constant(m, -kInf);
  qp.upper = Eigen::VectorXd::Constant(m, kInf);

  // Contouring and lag costs on stages 1..N.
  Eigen::Matrix<double, 2, Eigen::Dynamic> M(2, nz);
  for (int k = 1; k <= N; ++k) {
    const Vec8& x = xbar[static_cast<std::size_t>(k)];
    const Point2 q{x[0], x[1]};
    const double th = x[7];
    const Polyline::Frame f = line.frame_at(th);
    const Point2 T = f.tangent;
    const Point2 Nl = left_normal(T);
    const Point2 d = q - f.origin;
    const Eigen::Vector2d e(dot(d, Nl), dot(d, T));
    const double h = 0.05;
    const ContouringErrors ep = contouring_errors(q, th + h, path_);
    const ContouringErrors em = contouring_errors(q, th - h, path_);
    Eigen::Matrix<double, 2, kNx> J = Eigen::Matrix<double, 2, kNx>::Zero();
    J(0, 0) = Nl.x;
    J(0, 1) = Nl.y;
    J(1, 0) = T.x;
    J(1, 1) = T.y;
    J(0, 7) = (ep.e_c - em.e_c) / (2 * h);
    J(1, 7) = (ep.e_l - em.e_l) / (2 * h);
    // Stage k depends only on the inputs of stages 0..k-1.
    const int c = kVarsPerStage * k;
    M.noalias() = J * gamma[static_cast<std::size_t>(k)];
    const Eigen::Vector2d e0 = e - M * zbar;
    const Eigen::Vector2d w(config_.q_c, config_.q_l);
    auto block = qp.H.topLeftCorner(c, c).selfadjointView<Eigen::Lower>();
    block.rankUpdate(M.row(0).head(c).transpose(), 2.0 * w[0]);
    block.rankUpdate(M.row(1).head(c).transpose(), 2.0 * w[1]);
    qp.g.noalias() += 2.0 * M.transpose() * w.cwiseProduct(e0);
  }
  qp.H.triangularView<Eigen::StrictlyUpper>() = qp.H.transpose();

  // Input, rate, progress and slack terms.
  for (int k = 0; k < N; ++k) {
    const int a = kVarsPerStage * k;
    // Input weights act on the per-stage increments a * dt and delta_rate * dt.
    qp.H(a, a) += 2.0 * config_.R_a * dt * dt;
    qp.H(a + 1, a + 1) += 2.0 * config_.R_ddelta * dt * dt;
    qp.H(a + 3, a + 3) += 2.0 * config_.slack_weight;
    qp.g[a + 2] -= config_.gamma_prog * dt;
    const int v = a + 2;
    if (k == 0) {
      const double prev = has_warm_ ? vtheta_prev_ : std::max(state.v_x, 0.0);
      qp.H(v, v) += 2.0 * config_.R_dvtheta;
      qp.g[v] -= 2.0 * config_.R_dvtheta * prev;
    } else {
      const int vp = v - kVarsPerStage;
      qp.H(v, v) += 2.0 * config_.R_dvtheta;
      qp.H(vp, vp) += 2.0 * config_.R_dvtheta;
      qp.H(v, vp) -= 2.0 * config_.R_dvtheta;
      qp.H(vp, v) -= 2.0 * config_.R_dvtheta;
    }
  }

  // Constraint rows, stage-major.
  const double margin = config_.boundary_margin;
  const double vtheta_max = 1.2 * model_.v_max;
  track_hint_.resize(static_cast<std::size_t>(N), 0.0);
  std::vector<double> new_hints(static_cast<std::size_t>(N), 0.0);
  auto linear_row = [&](int row, const Eigen::RowVectorXd& coeff, double value_at_bar, double lo, double hi) {
    // Row expresses value_at_bar + coeff (z - zbar) in [lo, hi].
    qp.A.row(row) = coeff;
    const double shift = value_at_bar - coeff.dot(zbar);
    qp.lower[row] = lo - shift;
    qp.upper[row] = hi - shift;
  };
  for (int k = 0; k < N; ++k) {
    const int r = kRowsPerStage * k;
    const int a = kVarsPerStage * k;
    const Vec8& xn = xbar[static_cast<std::size_t>(k + 1)];
    const auto& gn = gamma[static_cast<std::size_t>(k + 1)];
    const auto& gk = gamma[static_cast<std::size_t>(k)];

    qp.A(r, a) = 1.0;
    qp.lower[r] = -model_.a_max;
    qp.upper[r] = model_.a_max;
    qp.A(r + 1, a + 1) = 1.0;
    qp.lower[r + 1] = -model_.delta_rate_max;
    qp.upper[r + 1] = model_.delta_rate_max;
    qp.A(r + 2, a + 2) = 1.0;
    qp.lower[r + 2] = 0.0;
    qp.upper[r + 2] = vtheta_max;

    // Commanded speed v_x + a / K_v within [0, v_max].
    {
      Eigen::RowVectorXd c = model_.k_v * gk.row(3);
      c[a] += 1.0;
      const double val = ubar[static_cast<std::size_t>(k)][0] + model_.k_v * xbar[static_cast<std::size_t>(k)][3];
      linear_row(r + 3, c, val, 0.0, model_.k_v * model_.v_max);
    }
    linear_row(r + 4, gn.row(6), xn[6], -model_.delta_max, model_.delta_max);
    {
      Eigen::RowVectorXd c = gn.row(3);
      c[a + 3] = -1.0;
      linear_row(r + 5, c, xn[3], -kInf, model_.v_max);
    }

    // Track half-spaces at the centerline frame nearest the predicted position.
    std::optional<double> hint;
    if (has_warm_ && k + 1 < N) hint = track_hint_[static_cast<std::size_t>(k + 1)];
    bool have_frame = true;
    FrenetPose tp;
    try {
      tp = track_->centerline().project({xn[0], xn[1]}, xn[2], hint, max_dist);
    } catch (const ProjectionError&) {
      have_frame = false;
    }
    if (have_frame) {
      new_hints[static_cast<std::size_t>(k)] = tp.p;
      const Polyline::Frame f = track_->centerline().frame_at(tp.p);
      const Point2 Nl = left_normal(f.tangent);
      const double nbar = dot(Point2{xn[0], xn[1]} - f.origin, Nl);
      Eigen::RowVectorXd c = Nl.x * gn.row(0) + Nl.y * gn.row(1);
      Eigen::RowVectorXd cl = c;
      cl[a + 3] -= 1.0;
      linear_row(r + 6, cl, nbar, -kInf, track_->width_left_at(tp.p) - margin);
      Eigen::RowVectorXd cr = -c;
      cr[a + 3] -= 1.0;
      linear_row(r + 7, cr, -nbar, -kInf, track_->width_right_at(tp.p) - margin);
    } else {
      new_hints[static_cast<std::size_t>(k)] = hint.value_or(0.0);
    }
    qp.A(r + 8, a + 3) = 1.0;
    qp.lower[r + 8] = 0.0;
  }

  std::optional<QpWarmStart> warm;
  if (config_.warm_start_qp && has_warm_ && y_guess_.size() == m) {
    QpWarmStart w;
    w.z = zbar;
    w.y = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < N; ++k) {
      const int src = std::min(k + 1, N - 1);
      w.y.segment<kRowsPerStage>(kRowsPerStage * k) = y_guess_.segment<kRowsPerStage>(kRowsPerStage * src);
    }
    warm = std::move(w);
  }

  PlannedTrajectory out;
  QpSolution sol = solver_.solve(qp, warm);
  out.qp_status = sol.status;
  out.iterations = sol.iterations;

  if (sol.status == QpStatus::infeasible || !sol.z.allFinite()) {
    out.first_action = fallback(state);
    out.degraded = true;
    reset();
    out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
  }

  u_guess_.resize(static_cast<std::size_t>(N));
  out.slacks.resize(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    u_guess_[static_cast<std::size_t>(k)] = sol.z.segment<kNu>(kVarsPerStage * k);
    out.slacks[static_cast<std::size_t>(k)] = sol.z[kVarsPerStage * k + 3];
  }
  y_guess_ = sol.y;
  for (int k = 0; k + 1 < N; ++k) track_hint_[static_cast<std::size_t>(k)] = new_hints[static_cast<std::size_t>(k + 1)];
  track_hint_[static_cast<std::size_t>(N - 1)] = new_hints[static_cast<std::size_t>(N - 1)];
  has_warm_ = true;
  theta_prev_ = theta0;
  vtheta_prev_ = u_guess_[0][2];

  const Eigen::VectorXd dz = sol.z - zbar;
  out.stages.resize(static_cast<std::size_t>(N + 1));
  for (int k = 0; k <= N; ++k) {
    const Vec8 x = xbar[static_cast<std::size_t>(k)] + gamma[static_cast<std::size_t>(k)] * dz;
    out.stages[static_cast<std::size_t>(k)] = {x[0], x[1], x[3], x[7]};
  }

  const double a0 = u_guess_[0][0];
  const double dd0 = u_guess_[0][1];
  out.first_action.v_des = std::clamp(state.v_x + a0 / model_.k_v, 0.0, model_.v_max);
  out.first_action.delta_des = std::clamp(state.delta + dd0 * config_.dt_control, -model_.delta_max, model_.delta_max);
  out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

void write_solve_log(const std::vector<SolveLogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,solve_ms,status,iterations\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) out << r.step << ',' << r.solve_ms << ',' << to_string(r.status) << ',' << r.iterations << '\n';
}

RacelineResult generate_raceline(std::shared_ptr<const TrackGeometry> track, const MpccConfig& config, int laps,
                                 const VehicleParams& params) {
  if (laps < 1) throw ConfigError("raceline generation needs at least one lap");
  EnvConfig env_cfg;
  env_cfg.laps = laps;
  env_cfg.max_steps = 100000;
  RacingEnv env(track, params, env_cfg);
  MpccController mpc(track, ReferenceTrajectory::from_centerline(*track), params, config);

  RacelineResult result;
  std::vector<Point2> lap_points;
  int lap_start_step = -1;
  const double L = track->total_length();
  StepOutcome out = env.reset(0).outcome;
  // A controller that makes no progress for this long is treated as stalled.
  constexpr double kStallSeconds = 5.0;
  const int stall_steps = static_cast<int>(std::lround(kStallSeconds / env_cfg.dt));
  double best_progress = 0.0;
  int best_step = 0;
  while (!out.done) {
    const PlannedTrajectory plan = mpc.solve_step(env.state());
    result.log.push_back({env.steps(), plan.solve_time * 1e3, plan.qp_status, plan.iterations});
    out = env.step(plan.first_action);
    if (out.info.progress > best_progress + 0.05) {
      best_progress = out.info.progress;
      best_step = env.steps();
    } else if (env.steps() - best_step > stall_steps) {
      throw RacelineError("controller stalled at p = " + std::to_string(out.info.p) +
                          " m while generating the raceline; adjust the mpcc settings or use the centerline");
    }
    if (out.info.progress >= (laps - 1) * L) {
      if (lap_start_step < 0) lap_start_step = env.steps();
      if (out.info.progress < laps * L) lap_points.push_back({env.state().s_x, env.state().s_y});
    }
  }
  if (out.info.crashed) {
    throw RacelineError("controller crashed at p = " + std::to_string(out.info.p) +
                        " m while generating the raceline; adjust the mpcc settings or use the centerline");
  }
  if (!out.info.lap_complete) {
    throw RacelineError("raceline generation timed out; adjust the mpcc settings or use the centerline");
  }
  result.lap_time = (env.steps() - lap_start_step + 1) * env_cfg.dt;

  std::vector<Point2> pts;
  for (const Point2& q : lap_points) {
    if (pts.empty() || norm(q - pts.back()) > 1e-6) pts.push_back(q);
  }
  while (pts.size() > 3 && norm(pts.back() - pts.front()) < 1e-6) pts.pop_back();
  result.trajectory = resample_by_arclength(ReferenceTrajectory(pts, true), 0.1);
  return result;
}

}  // namespace racebench
