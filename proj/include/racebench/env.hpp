#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "racebench/track.hpp"
#include "racebench/vehicle.hpp"

namespace racebench {

enum class AgentKind { end_to_end, tc_driver };

std::optional<AgentKind> parse_agent_kind(std::string_view name);
std::string_view to_string(AgentKind kind);

// Per-episode friction randomization, mu ~ N(mean, std) clamped to (0, 2].
struct TireNoiseSpec {
  double mean = 1.0489;
  double std = 0.0375;

  double sample(std::mt19937_64& rng) const;
  // Evaluation distribution outside the training domain: mean shifted down
  // by 0.2, same spread.
  TireNoiseSpec mismatch() const { return {mean - 0.2, std}; }
};

struct EnvConfig {
  int max_steps = 10000;
  double dt = 0.01;
  double c_penalty = 0.01;
  std::optional<TireNoiseSpec> tire_noise;
  // Relative std of a per-episode cornering stiffness perturbation; 0 = off.
  double cornering_noise_std = 0.0;
  FrenetPose start_pose{};
  double start_speed = 0.0;
  AgentKind agent = AgentKind::end_to_end;
  std::shared_ptr<const ReferenceTrajectory> conditioning;
  int conditioning_points = 30;
  double conditioning_spacing = 0.2;
  // Soft-constraint band: |n| >= w/2 - safety_margin_factor * w_car.
  double safety_margin_factor = 1.5;
  // Wall contact: |n| >= w/2 - crash_margin_factor * w_car.
  double crash_margin_factor = 0.5;
  int laps = 1;
  bool record_trace = false;

  void validate() const;
};

struct ObservationEndToEnd {
  double p = 0.0;
  double n = 0.0;
  double psi_rel = 0.0;
  double v_x = 0.0;
  double v_y = 0.0;
  double psi_dot = 0.0;
};

// Trajectory-conditioned observation: the next points of the conditioning
// trajectory in the car body frame, plus path-relative state measured
// against the same trajectory.
struct ObservationTC {
  std::vector<Point2> traj;
  ObservationEndToEnd state;
};

using Observation = std::variant<ObservationEndToEnd, ObservationTC>;

struct StepInfo {
  bool crashed = false;
  bool lap_complete = false;
  bool constraint_violated = false;
  bool truncated = false;  // step limit reached
  double p = 0.0;          // centerline progress
  double n = 0.0;          // centerline lateral offset
  double progress = 0.0;   // cumulative signed advancement this episode
};

struct StepOutcome {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct TraceRow {
  double t = 0.0;
  DynamicState state;
  double p = 0.0;
  double n = 0.0;
  double reward = 0.0;
  bool violated = false;
  bool crashed = false;
};

double reward_end_to_end(double p_prev, double p_next, bool violated, double length, double c = 0.01);
double reward_tc(double p_prev, double p_next, double n_t, bool violated, double length, double c = 0.01);

struct ConditioningOptions {
  int points = 30;
  double spacing = 0.2;
  double max_distance = 10.0;
};

// Samples the trajectory ahead of the car starting at the nearest point on
// it, transformed into the body frame (translate by -position, rotate by
// -yaw). Closed trajectories wrap around; open ones must be long enough.
ObservationTC build_tc_observation(const DynamicState& state, const ReferenceTrajectory& trajectory,
                                   const ConditioningOptions& options = {},
                                   std::optional<double> hint = std::nullopt);

class RacingEnv {
 public:
  RacingEnv(std::shared_ptr<const TrackGeometry> track, VehicleParams params, EnvConfig config);

  struct ResetResult {
    StepOutcome outcome;
    double mu = 0.0;
  };
  ResetResult reset(std::uint64_t seed);
  StepOutcome step(const Action& action);

  const DynamicState& state() const { return state_; }
  const VehicleParams& episode_params() const { return episode_params_; }
  const VehicleParams& nominal_params() const { return params_; }
  const EnvConfig& config() const { return config_; }
  const TrackGeometry& track() const { return *track_; }
  std::shared_ptr<const TrackGeometry> track_ptr() const { return track_; }
  double mu() const { return episode_params_.mu; }
  int steps() const { return steps_; }
  double progress() const { return progress_; }
  double p() const { return p_; }
  bool done() const { return done_; }
  const std::vector<TraceRow>& trace() const { return trace_; }
  const Observation& last_observation() const { return last_obs_; }

  // Flat, normalized feature vector for a policy network.
  Eigen::VectorXd features(const Observation& obs) const;
  int feature_dim() const;

  // Affine map from [-1, 1]^2 to [0, v_max] x [-delta_max, delta_max].
  Action action_from_normalized(double a_speed, double a_steer) const;

  void write_trace_csv(const std::filesystem::path& path) const;

 private:
  Observation observe();
  bool violated_at(double p, double n) const;
  bool crashed_at(double p, double n) const;

  std::shared_ptr<const TrackGeometry> track_;
  VehicleParams params_;
  VehicleParams episode_params_;
  EnvConfig config_;
  DynamicState state_;
  double p_ = 0.0;
  double n_ = 0.0;
  double traj_s_ = 0.0;
  double progress_ = 0.0;
  int steps_ = 0;
  bool done_ = true;
  Observation last_obs_;
  std::vector<TraceRow> trace_;
};

}  // namespace racebench
