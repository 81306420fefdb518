#include "racebench/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "racebench/errors.hpp"

namespace racebench {

std::optional<AgentKind> parse_agent_kind(std::string_view name) {
  if (name == "end_to_end") return AgentKind::end_to_end;
  if (name == "tc_driver") return AgentKind::tc_driver;
  return std::nullopt;
}

std::string_view to_string(AgentKind kind) {
  return kind == AgentKind::end_to_end ? "end_to_end" : "tc_driver";
}

double TireNoiseSpec::sample(std::mt19937_64& rng) const {
  if (std <= 0.0) return std::clamp(mean, 1e-3, 2.0);
  std::normal_distribution<double> dist(mean, std);
  return std::clamp(dist(rng), 1e-3, 2.0);
}

void EnvConfig::validate() const {
  if (max_steps <= 0) throw ConfigError("env.max_steps must be positive");
  if (!(dt > 0.0)) throw ConfigError("env.dt must be positive");
  if (c_penalty < 0.0) throw ConfigError("env.c_penalty must be non-negative");
  if (tire_noise && tire_noise->std < 0.0) throw ConfigError("env.tire_noise std must be non-negative");
  if (cornering_noise_std < 0.0) throw ConfigError("env.cornering_noise_std must be non-negative");
  if (conditioning_points <= 0 || !(conditioning_spacing > 0.0)) {
    throw ConfigError("env conditioning points and spacing must be positive");
  }
  if (laps <= 0) throw ConfigError("env.laps must be positive");
  if (!(crash_margin_factor < safety_margin_factor)) {
    throw ConfigError("crash band must lie inside the soft-constraint band");
  }
  if (agent == AgentKind::tc_driver && (!conditioning || conditioning->empty())) {
    throw ConfigError("tc_driver requires a conditioning trajectory");
  }
}

double reward_end_to_end(double p_prev, double p_next, bool violated, double length, double c) {
  if (violated) return -c;
  return track_advancement(p_prev, p_next, length);
}

double reward_tc(double p_prev, double p_next, double n_t, bool violated, double length, double c) {
  if (violated) return -c;
  return track_advancement(p_prev, p_next, length) - std::abs(n_t);
}

ObservationTC build_tc_observation(const DynamicState& state, const ReferenceTrajectory& trajectory,
                                   const ConditioningOptions& options, std::optional<double> hint) {
  if (trajectory.empty()) throw ConfigError("conditioning trajectory is empty");
  const Polyline& path = trajectory.path();
  const double lookahead = (options.points - 1) * options.spacing;
  if (!path.closed() && path.length() < lookahead) {
    throw ConfigError("open conditioning trajectory is shorter than the lookahead");
  }
  const FrenetPose pose = path.project({state.s_x, state.s_y}, state.psi, hint, options.max_distance);

  ObservationTC obs;
  obs.traj.resize(static_cast<std::size_t>(options.points));
  const double c = std::cos(state.psi);
  const double s = std::sin(state.psi);
  for (int k = 0; k < options.points; ++k) {
    double at = pose.p + k * options.spacing;
    if (!path.closed()) at = std::min(at, path.length());
    const Point2 w = path.frame_at(at).origin - Point2{state.s_x, state.s_y};
    obs.traj[static_cast<std::size_t>(k)] = {c * w.x + s * w.y, -s * w.x + c * w.y};
  }
  obs.state = {pose.p, pose.n, pose.psi_rel, state.v_x, state.v_y, state.psi_dot};
  return obs;
}

RacingEnv::RacingEnv(std::shared_ptr<const TrackGeometry> track, VehicleParams params, EnvConfig config)
    : track_(std::move(track)), params_(params), episode_params_(params), config_(std::move(config)) {
  if (!track_) throw ConfigError("environment needs a track");
  params_.validate();
  config_.validate();
}

bool RacingEnv::violated_at(double p, double n) const {
  const double margin = config_.safety_margin_factor * episode_params_.w_car;
  return n >= track_->width_left_at(p) - margin || -n >= track_->width_right_at(p) - margin;
}

bool RacingEnv::crashed_at(double p, double n) const {
  const double margin = config_.crash_margin_factor * episode_params_.w_car;
  return n >= track_->width_left_at(p) - margin || -n >= track_->width_right_at(p) - margin;
}

Observation RacingEnv::observe() {
  if (config_.agent == AgentKind::end_to_end) {
    const FrenetPose pose = project_to_frenet(*track_, state_.s_x, state_.s_y, state_.psi, p_);
    return ObservationEndToEnd{pose.p, pose.n, pose.psi_rel, state_.v_x, state_.v_y, state_.psi_dot};
  }
  ConditioningOptions opts;
  opts.points = config_.conditioning_points;
  opts.spacing = config_.conditioning_spacing;
  opts.max_distance = 4.0 * track_->max_half_width();
  ObservationTC obs = build_tc_observation(state_, *config_.conditioning, opts, traj_s_);
  traj_s_ = obs.state.p;
  return obs;
}

RacingEnv::ResetResult RacingEnv::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  episode_params_ = params_;
  if (config_.tire_noise) episode_params_.mu = config_.tire_noise->sample(rng);
  if (config_.cornering_noise_std > 0.0) {
    std::normal_distribution<double> noise(1.0, config_.cornering_noise_std);
    episode_params_.C_Sf *= std::max(0.1, noise(rng));
    episode_params_.C_Sr *= std::max(0.1, noise(rng));
  }

  const FrenetPose start{track_->centerline().wrap(config_.start_pose.p), config_.start_pose.n,
                         config_.start_pose.psi_rel};
  if (crashed_at(start.p, start.n)) throw ConfigError("start pose lies outside the drivable band");
  const CartesianPose pose = frenet_to_cartesian(*track_, start);
  state_ = DynamicState{pose.x, pose.y, pose.heading, std::clamp(config_.start_speed, 0.0, params_.v_max),
                        0.0, 0.0, 0.0};
  p_ = start.p;
  n_ = start.n;
  progress_ = 0.0;
  steps_ = 0;
  done_ = false;
  traj_s_ = 0.0;
  if (config_.agent == AgentKind::tc_driver) {
    traj_s_ = config_.conditioning->path().project({pose.x, pose.y}, pose.heading, std::nullopt,
                                                   4.0 * track_->max_half_width()).p;
  }
  trace_.clear();

  StepOutcome out;
  out.observation = observe();
  last_obs_ = out.observation;
  out.info.p = p_;
  out.info.n = n_;
  out.info.constraint_violated = violated_at(p_, n_);
  if (config_.record_trace) {
    trace_.push_back({0.0, state_, p_, n_, 0.0, out.info.constraint_violated, false});
  }
  return {out, episode_params_.mu};
}

StepOutcome RacingEnv::step(const Action& action) {
  if (done_) throw UsageError("step() called on a finished episode; call reset()");

  StepOutcome out;
  const double p_prev = p_;
  bool crashed = false;
  try {
    state_ = racebench::step(state_, action, episode_params_, config_.dt);
    const FrenetPose pose = project_to_frenet(*track_, state_.s_x, state_.s_y, state_.psi, p_prev);
    p_ = pose.p;
    n_ = pose.n;
  } catch (const SimulationFault&) {
    crashed = true;
  } catch (const ProjectionError&) {
    crashed = true;
  }
  ++steps_;

  const double length = track_->total_length();
  bool violated = true;
  double adv = 0.0;
  if (!crashed) {
    adv = track_advancement(p_prev, p_, length);
    progress_ += adv;
    violated = violated_at(p_, n_);
    crashed = crashed_at(p_, n_);
  }

  if (!crashed) {
    out.observation = observe();
  } else {
    out.observation = last_obs_;
  }
  last_obs_ = out.observation;

  if (config_.agent == AgentKind::end_to_end || crashed) {
    out.reward = reward_end_to_end(p_prev, p_, violated, length, config_.c_penalty);
  } else {
    const double n_traj = std::get<ObservationTC>(out.observation).state.n;
    out.reward = reward_tc(p_prev, p_, n_traj, violated, length, config_.c_penalty);
  }

  out.info.crashed = crashed;
  out.info.constraint_violated = violated;
  out.info.lap_complete = !crashed && progress_ >= config_.laps * length;
  out.info.truncated = steps_ >= config_.max_steps;
  out.info.p = p_;
  out.info.n = n_;
  out.info.progress = progress_;
  out.done = out.info.crashed || out.info.lap_complete || out.info.truncated;
  done_ = out.done;

  if (config_.record_trace) {
    trace_.push_back({steps_ * config_.dt, state_, p_, n_, out.reward, violated, crashed});
  }
  return out;
}

int RacingEnv::feature_dim() const {
  return config_.agent == AgentKind::end_to_end ? 6 : 2 * config_.conditioning_points + 6;
}

Eigen::VectorXd RacingEnv::features(const Observation& obs) const {
  constexpr double kPi = std::numbers::pi;
  const double v_scale = params_.v_max;
  const double n_scale = track_->max_half_width();
  auto fill_state = [&](const ObservationEndToEnd& o, double length, Eigen::VectorXd& f, int at) {
    f[at + 0] = o.p / length;
    f[at + 1] = o.n / n_scale;
    f[at + 2] = o.psi_rel / kPi;
    f[at + 3] = o.v_x / v_scale;
    f[at + 4] = o.v_y / v_scale;
    f[at + 5] = o.psi_dot / kPi;
  };
  Eigen::VectorXd f(feature_dim());
  if (const auto* e2e = std::get_if<ObservationEndToEnd>(&obs)) {
    fill_state(*e2e, track_->total_length(), f, 0);
    return f;
  }
  const auto& tc = std::get<ObservationTC>(obs);
  const double lookahead = std::max(1e-9, (config_.conditioning_points - 1) * config_.conditioning_spacing);
  for (std::size_t k = 0; k < tc.traj.size(); ++k) {
    f[static_cast<int>(2 * k)] = tc.traj[k].x / lookahead;
    f[static_cast<int>(2 * k + 1)] = tc.traj[k].y / lookahead;
  }
  fill_state(tc.state, config_.conditioning->total_length(), f, 2 * config_.conditioning_points);
  return f;
}

Action RacingEnv::action_from_normalized(double a_speed, double a_steer) const {
  a_speed = std::clamp(a_speed, -1.0, 1.0);
  a_steer = std::clamp(a_steer, -1.0, 1.0);
  return {0.5 * (a_speed + 1.0) * params_.v_max, a_steer * params_.delta_max};
}

void RacingEnv::write_trace_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  out << "t_s,x_m,y_m,psi_rad,vx_mps,vy_mps,psidot_radps,p_m,n_m,reward,violated,crashed\n";
  for (const auto& r : trace_) {
    out << r.t << ',' << r.state.s_x << ',' << r.state.s_y << ',' << r.state.psi << ',' << r.state.v_x << ','
        << r.state.v_y << ',' << r.state.psi_dot << ',' << r.p << ',' << r.n << ',' << r.reward << ','
        << (r.violated ? 1 : 0) << ',' << (r.crashed ? 1 : 0) << '\n';
  }
}

}  // namespace racebench
