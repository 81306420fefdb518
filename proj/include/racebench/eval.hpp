#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "racebench/env.hpp"
#include "racebench/mpcc.hpp"
#include "racebench/sac.hpp"

namespace racebench {

enum class ControllerKind { mpcc, end_to_end, tc_driver };
enum class FrictionSampler { nominal, train_noise, mismatch };

std::optional<ControllerKind> parse_controller_kind(std::string_view name);
std::string_view to_string(ControllerKind kind);
std::optional<FrictionSampler> parse_friction_sampler(std::string_view name);
std::string_view to_string(FrictionSampler sampler);

// Closed-loop driver. act() is the timed control computation.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() {}
  virtual Action act(const RacingEnv& env, const Observation& obs) = 0;
};

class MpccDriver : public Controller {
 public:
  MpccDriver(std::shared_ptr<const TrackGeometry> track, ReferenceTrajectory path, VehicleParams model,
             MpccConfig config);
  void reset() override { mpc_.reset(); }
  Action act(const RacingEnv& env, const Observation& obs) override;

 private:
  MpccController mpc_;
};

// Deterministic squashed-Gaussian actor: action = tanh(mean).
class PolicyDriver : public Controller {
 public:
  explicit PolicyDriver(SacAgent agent) : agent_(std::move(agent)) {}
  Action act(const RacingEnv& env, const Observation& obs) override;

 private:
  SacAgent agent_;
};

struct ProtocolSpec {
  ControllerKind controller = ControllerKind::mpcc;
  std::optional<std::filesystem::path> checkpoint;             // end_to_end and tc_driver
  std::shared_ptr<const ReferenceTrajectory> conditioning;     // tc_driver
  std::shared_ptr<const TrackGeometry> track;
  std::string track_name;
  int n_runs = 21;
  FrictionSampler friction = FrictionSampler::nominal;
  TireNoiseSpec noise;  // training distribution; mismatch shifts its mean
  // Defaults to k * L / n_runs, or p = 0 for every run under the mismatch sampler.
  std::optional<std::vector<double>> start_positions;
  std::uint64_t seed = 0;
  VehicleParams vehicle;
  EnvConfig env;
  MpccConfig mpcc;
  // Runs longer than this count as crashes. Defaults to twice the nominal
  // MPCC lap time from p = 0.
  std::optional<double> timeout_s;
  int threads = 1;
  bool keep_traces = true;

  void validate() const;
  std::vector<double> resolved_start_positions() const;
  double sampler_mean() const;
  double sampler_std() const;
};

struct RunResult {
  int index = 0;
  double start_p = 0.0;
  double mu = 0.0;
  std::optional<double> lap_time;
  bool crashed = false;    // wall contact or timeout
  bool timed_out = false;
  double progress_fraction = 0.0;
  double path_length = 0.0;
  std::optional<double> path_length_excess;
  std::vector<double> compute_times;  // s per control step
  std::vector<Point2> trace;
};

struct BenchReport {
  std::string controller;
  std::string track;
  std::string friction;
  double sampler_mean = 0.0;
  double sampler_std = 0.0;
  std::uint64_t seed = 0;
  double timeout_s = 0.0;
  int n_runs = 0;
  int crashes = 0;
  double crash_ratio = 0.0;  // percent
  std::optional<double> t_mu;
  std::optional<double> t_sigma;
  std::optional<double> path_length_excess;  // mean over completed laps, m
  double compute_mu_ms = 0.0;
  double compute_sigma_ms = 0.0;
  std::vector<RunResult> runs;

  // Wall-clock fields make reports machine dependent, so they are opt-in.
  std::string to_json(bool include_timing = false) const;
  void write_json(const std::filesystem::path& path, bool include_timing = false) const;
  void write_csv(const std::filesystem::path& path, bool include_timing = false) const;
};

// Recomputes every statistic of `report` from its per-run table.
void aggregate(BenchReport& report);

// Lap time of MPCC from p = 0 with nominal friction; absent if it fails to finish.
std::optional<double> nominal_mpcc_lap_time(std::shared_ptr<const TrackGeometry> track, const VehicleParams& vehicle,
                                            const MpccConfig& mpcc, const EnvConfig& env);

BenchReport run_protocol(const ProtocolSpec& spec);

double polyline_length(const std::vector<Point2>& points);
// Trace length minus one reference lap; absent when the lap is incomplete.
std::optional<double> path_length_excess(const std::vector<Point2>& trace, bool lap_complete,
                                         const ReferenceTrajectory& reference);

struct TimingStats {
  int samples = 0;
  double mu_ms = 0.0;
  double sigma_ms = 0.0;
};
TimingStats timing_stats(const std::vector<double>& seconds);

// Times `steps` control computations while driving `env`; the environment is
// reset (seed 0, 1, ...) whenever an episode ends. Empty for zero steps.
std::optional<TimingStats> measure_compute_time(Controller& controller, RacingEnv& env, int steps,
                                                int warmup_steps = 0);

struct OverlayTrace {
  std::vector<Point2> points;
  bool crashed = false;
};
void render_overlay(const TrackGeometry& track, const std::vector<OverlayTrace>& traces,
                    const std::filesystem::path& path);

}  // namespace racebench
