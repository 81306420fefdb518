#include "racebench/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "racebench/errors.hpp"

namespace racebench {

namespace {

std::uint64_t run_seed(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Point2 position(const RacingEnv& env) { return {env.state().s_x, env.state().s_y}; }

std::unique_ptr<Controller> make_controller(const ProtocolSpec& spec, const SacAgent* agent) {
  if (spec.controller == ControllerKind::mpcc) {
    return std::make_unique<MpccDriver>(spec.track, ReferenceTrajectory::from_centerline(*spec.track), spec.vehicle,
                                        spec.mpcc);
  }
  return std::make_unique<PolicyDriver>(*agent);
}

}  // namespace

std::optional<ControllerKind> parse_controller_kind(std::string_view name) {
  if (name == "mpcc") return ControllerKind::mpcc;
  if (name == "end_to_end") return ControllerKind::end_to_end;
  if (name == "tc_driver") return ControllerKind::tc_driver;
  return std::nullopt;
}

std::string_view to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::mpcc: return "mpcc";
    case ControllerKind::end_to_end: return "end_to_end";
    case ControllerKind::tc_driver: return "tc_driver";
  }
  return "?";
}

std::optional<FrictionSampler> parse_friction_sampler(std::string_view name) {
  if (name == "nominal") return FrictionSampler::nominal;
  if (name == "train_noise") return FrictionSampler::train_noise;
  if (name == "mismatch") return FrictionSampler::mismatch;
  return std::nullopt;
}

std::string_view to_string(FrictionSampler sampler) {
  switch (sampler) {
    case FrictionSampler::nominal: return "nominal";
    case FrictionSampler::train_noise: return "train_noise";
    case FrictionSampler::mismatch: return "mismatch";
  }
  return "?";
}

MpccDriver::MpccDriver(std::shared_ptr<const TrackGeometry> track, ReferenceTrajectory path, VehicleParams model,
                       MpccConfig config)
    : mpc_(std::move(track), std::move(path), model, config) {}

Action MpccDriver::act(const RacingEnv& env, const Observation&) { return mpc_.solve_step(env.state()).first_action; }

Action PolicyDriver::act(const RacingEnv& env, const Observation& obs) {
  const ActionSample s = agent_.act(env.features(obs), true);
  return env.action_from_normalized(s.action[0], s.action[1]);
}

void ProtocolSpec::validate() const {
  if (!track) throw ConfigError("protocol has no track");
  if (n_runs < 1) throw ConfigError("protocol.n_runs must be >= 1");
  if (threads < 1) throw ConfigError("protocol.threads must be >= 1");
  if (timeout_s && !(*timeout_s > 0.0)) throw ConfigError("protocol.timeout_s must be positive");
  if (start_positions && static_cast<int>(start_positions->size()) != n_runs) {
    throw ConfigError("protocol.start_positions must list one position per run");
  }
  if (controller != ControllerKind::mpcc) {
    if (!checkpoint) throw ConfigError(std::string(to_string(controller)) + " evaluation needs a checkpoint");
    if (!std::filesystem::exists(*checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint->string());
  }
  if (controller == ControllerKind::tc_driver && !conditioning) {
    throw ConfigError("tc_driver evaluation needs a conditioning trajectory (raceline or centerline)");
  }
  vehicle.validate();
  mpcc.validate();
}

std::vector<double> ProtocolSpec::resolved_start_positions() const {
  if (start_positions) return *start_positions;
  std::vector<double> out(static_cast<std::size_t>(n_runs), 0.0);
  if (friction != FrictionSampler::mismatch) {
    for (int k = 0; k < n_runs; ++k) out[k] = k * track->total_length() / n_runs;
  }
  return out;
}

double ProtocolSpec::sampler_mean() const {
  switch (friction) {
    case FrictionSampler::nominal: return vehicle.mu;
    case FrictionSampler::train_noise: return noise.mean;
    case FrictionSampler::mismatch: return noise.mismatch().mean;
  }
  return vehicle.mu;
}

double ProtocolSpec::sampler_std() const { return friction == FrictionSampler::nominal ? 0.0 : noise.std; }

void aggregate(BenchReport& report) {
  report.n_runs = static_cast<int>(report.runs.size());
  report.crashes = 0;
  std::vector<double> laps, excess, times;
  for (const RunResult& r : report.runs) {
    if (r.crashed) ++report.crashes;
    if (r.lap_time) laps.push_back(*r.lap_time);
    if (r.path_length_excess) excess.push_back(*r.path_length_excess);
    times.insert(times.end(), r.compute_times.begin(), r.compute_times.end());
  }
  report.crash_ratio = report.n_runs > 0 ? 100.0 * report.crashes / report.n_runs : 0.0;
  report.t_mu.reset();
  report.t_sigma.reset();
  report.path_length_excess.reset();
  if (!laps.empty()) {
    report.t_mu = mean_of(laps);
    report.t_sigma = std_of(laps);
  }
  if (!excess.empty()) report.path_length_excess = mean_of(excess);
  const TimingStats t = timing_stats(times);
  report.compute_mu_ms = t.mu_ms;
  report.compute_sigma_ms = t.sigma_ms;
}

std::string BenchReport::to_json(bool include_timing) const {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["controller"] = controller;
  j["track"] = track;
  j["friction_sampler"] = {{"name", friction}, {"mean", sampler_mean}, {"std", sampler_std}};
  j["seed"] = seed;
  j["timeout_s"] = timeout_s;
  j["n_runs"] = n_runs;
  j["crashes"] = crashes;
  j["crash_ratio_percent"] = crash_ratio;
  j["t_mu_s"] = opt(t_mu);
  j["t_sigma_s"] = opt(t_sigma);
  j["path_length_excess_m"] = opt(path_length_excess);
  if (include_timing) j["compute_time_ms"] = {{"mu", compute_mu_ms}, {"sigma", compute_sigma_ms}};
  ordered_json runs_json = ordered_json::array();
  for (const RunResult& r : runs) {
    ordered_json row;
    row["run"] = r.index;
    row["start_p_m"] = r.start_p;
    row["mu"] = r.mu;
    row["crashed"] = r.crashed;
    row["timed_out"] = r.timed_out;
    row["lap_time_s"] = opt(r.lap_time);
    row["progress_fraction"] = r.progress_fraction;
    row["path_length_m"] = r.path_length;
    row["path_length_excess_m"] = opt(r.path_length_excess);
    if (include_timing) {
      const TimingStats t = timing_stats(r.compute_times);
      row["compute_time_ms"] = {{"mu", t.mu_ms}, {"sigma", t.sigma_ms}, {"samples", t.samples}};
    }
    runs_json.push_back(std::move(row));
  }
  j["runs"] = std::move(runs_json);
  return j.dump(2) + "\n";
}

void BenchReport::write_json(const std::filesystem::path& path, bool include_timing) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(include_timing);
}

void BenchReport::write_csv(const std::filesystem::path& path, bool include_timing) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  out << "run,start_p_m,mu,crashed,timed_out,lap_time_s,progress_fraction,path_length_m,path_length_excess_m";
  if (include_timing) out << ",compute_mu_ms,compute_sigma_ms";
  out << '\n';
  auto opt = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const RunResult& r : runs) {
    out << r.index << ',' << r.start_p << ',' << r.mu << ',' << (r.crashed ? 1 : 0) << ',' << (r.timed_out ? 1 : 0)
        << ',';
    opt(r.lap_time);
    out << ',' << r.progress_fraction << ',' << r.path_length << ',';
    opt(r.path_length_excess);
    if (include_timing) {
      const TimingStats t = timing_stats(r.compute_times);
      out << ',' << t.mu_ms << ',' << t.sigma_ms;
    }
    out << '\n';
  }
}

std::optional<double> nominal_mpcc_lap_time(std::shared_ptr<const TrackGeometry> track, const VehicleParams& vehicle,
                                            const MpccConfig& mpcc, const EnvConfig& env) {
  EnvConfig ec = env;
  ec.start_pose = {};
  ec.tire_noise.reset();
  ec.agent = AgentKind::end_to_end;
  ec.conditioning.reset();
  ec.laps = 1;
  ec.record_trace = false;
  RacingEnv sim(track, vehicle, ec);
  MpccDriver driver(track, ReferenceTrajectory::from_centerline(*track), vehicle, mpcc);
  StepOutcome out = sim.reset(0).outcome;
  while (!out.done) out = sim.step(driver.act(sim, out.observation));
  if (!out.info.lap_complete) return std::nullopt;
  return sim.steps() * ec.dt;
}

BenchReport run_protocol(const ProtocolSpec& spec) {
  spec.validate();
  std::optional<SacAgent> agent;
  if (spec.controller != ControllerKind::mpcc) agent = SacAgent::load(*spec.checkpoint);

  EnvConfig base = spec.env;
  base.laps = 1;
  base.record_trace = false;
  base.agent = spec.controller == ControllerKind::tc_driver ? AgentKind::tc_driver : AgentKind::end_to_end;
  base.conditioning = spec.controller == ControllerKind::tc_driver ? spec.conditioning : nullptr;
  switch (spec.friction) {
    case FrictionSampler::nominal: base.tire_noise.reset(); break;
    case FrictionSampler::train_noise: base.tire_noise = spec.noise; break;
    case FrictionSampler::mismatch: base.tire_noise = spec.noise.mismatch(); break;
  }
  if (agent) {
    const RacingEnv probe(spec.track, spec.vehicle, base);
    if (agent->obs_dim() != probe.feature_dim() || agent->act_dim() != 2) {
      throw ConfigError("checkpoint expects " + std::to_string(agent->obs_dim()) + " features, the " +
                        std::string(to_string(spec.controller)) + " environment provides " +
                        std::to_string(probe.feature_dim()));
    }
  }

  double timeout = 0.0;
  if (spec.timeout_s) {
    timeout = *spec.timeout_s;
  } else if (const auto lap = nominal_mpcc_lap_time(spec.track, spec.vehicle, spec.mpcc, spec.env)) {
    timeout = 2.0 * *lap;
  } else {
    timeout = spec.env.max_steps * spec.env.dt;
  }
  base.max_steps = static_cast<int>(std::ceil(timeout / base.dt - 1e-9));

  const ReferenceTrajectory reference = spec.controller == ControllerKind::tc_driver
                                            ? *spec.conditioning
                                            : ReferenceTrajectory::from_centerline(*spec.track);
  const std::vector<double> starts = spec.resolved_start_positions();
  std::vector<RunResult> results(static_cast<std::size_t>(spec.n_runs));

  auto run_one = [&](int k) {
    EnvConfig ec = base;
    ec.start_pose = {starts[k], 0.0, 0.0};
    RacingEnv env(spec.track, spec.vehicle, ec);
    auto controller = make_controller(spec, agent ? &*agent : nullptr);
    const auto reset = env.reset(run_seed(spec.seed, k));
    RunResult r;
    r.index = k;
    r.start_p = starts[k];
    r.mu = reset.mu;
    StepOutcome out = reset.outcome;
    std::vector<Point2> trace{position(env)};
    while (!out.done) {
      const auto t0 = std::chrono::steady_clock::now();
      const Action a = controller->act(env, out.observation);
      r.compute_times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      out = env.step(a);
      trace.push_back(position(env));
    }
    const double length = spec.track->total_length();
    r.timed_out = !out.info.crashed && !out.info.lap_complete;
    r.crashed = out.info.crashed || r.timed_out;
    if (out.info.lap_complete) {
      r.lap_time = env.steps() * ec.dt;
      r.progress_fraction = 1.0;
    } else {
      r.progress_fraction = std::clamp(out.info.progress / length, 0.0, 1.0);
      if (r.progress_fraction >= 1.0) r.progress_fraction = std::nextafter(1.0, 0.0);
    }
    r.path_length = polyline_length(trace);
    r.path_length_excess = path_length_excess(trace, out.info.lap_complete, reference);
    if (spec.keep_traces) r.trace = std::move(trace);
    results[k] = std::move(r);
  };

  if (spec.threads == 1) {
    for (int k = 0; k < spec.n_runs; ++k) run_one(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(spec.n_runs));
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(spec.threads, spec.n_runs); ++t) {
      pool.emplace_back([&] {
        for (int k = next++; k < spec.n_runs; k = next++) {
          try {
            run_one(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  BenchReport report;
  report.controller = std::string(to_string(spec.controller));
  report.track = spec.track_name.empty() ? spec.track->name() : spec.track_name;
  report.friction = std::string(to_string(spec.friction));
  report.sampler_mean = spec.sampler_mean();
  report.sampler_std = spec.sampler_std();
  report.seed = spec.seed;
  report.timeout_s = timeout;
  report.runs = std::move(results);
  aggregate(report);
  return report;
}

double polyline_length(const std::vector<Point2>& points) {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) total += norm(points[i] - points[i - 1]);
  return total;
}

std::optional<double> path_length_excess(const std::vector<Point2>& trace, bool lap_complete,
                                         const ReferenceTrajectory& reference) {
  if (!lap_complete || trace.size() < 2) return std::nullopt;
  return polyline_length(trace) - reference.total_length();
}

TimingStats timing_stats(const std::vector<double>& seconds) {
  TimingStats t;
  t.samples = static_cast<int>(seconds.size());
  if (seconds.empty()) return t;
  t.mu_ms = 1e3 * mean_of(seconds);
  t.sigma_ms = 1e3 * std_of(seconds);
  return t;
}

std::optional<TimingStats> measure_compute_time(Controller& controller, RacingEnv& env, int steps,
                                                int warmup_steps) {
  if (steps <= 0) return std::nullopt;
  std::uint64_t episode = 0;
  StepOutcome out = env.reset(episode++).outcome;
  controller.reset();
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < warmup_steps + steps; ++k) {
    if (out.done) {
      out = env.reset(episode++).outcome;
      controller.reset();
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Action a = controller.act(env, out.observation);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (k >= warmup_steps) times.push_back(dt);
    out = env.step(a);
  }
  return timing_stats(times);
}

void render_overlay(const TrackGeometry& track, const std::vector<OverlayTrace>& traces,
                    const std::filesystem::path& path) {
  std::vector<Point2> left, right;
  for (std::size_t i = 0; i < track.size(); ++i) {
    const double p = track.cum_arclength()[i];
    const CartesianPose l = frenet_to_cartesian(track, {p, track.width_left()[i], 0.0});
    const CartesianPose r = frenet_to_cartesian(track, {p, -track.width_right()[i], 0.0});
    left.push_back({l.x, l.y});
    right.push_back({r.x, r.y});
  }
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto extend = [&](const std::vector<Point2>& pts) {
    for (const Point2& q : pts) {
      xmin = std::min(xmin, q.x);
      xmax = std::max(xmax, q.x);
      ymin = std::min(ymin, q.y);
      ymax = std::max(ymax, q.y);
    }
  };
  extend(left);
  extend(right);
  for (const auto& t : traces) extend(t.points);
  const double margin = 0.05 * std::max(xmax - xmin, ymax - ymin) + 1.0;
  const double w = xmax - xmin + 2 * margin;
  const double h = ymax - ymin + 2 * margin;
  const double stroke = 0.002 * std::max(w, h);

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(3);
  // SVG y grows downward; flip so the plot matches world coordinates.
  auto pts = [&](const std::vector<Point2>& v, bool close) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3);
    for (const Point2& q : v) s << (q.x - xmin + margin) << ',' << (ymax + margin - q.y) << ' ';
    if (close && !v.empty()) s << (v.front().x - xmin + margin) << ',' << (ymax + margin - v.front().y);
    return s.str();
  };
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << w << ' ' << h << "\" width=\"800\" height=\""
      << static_cast<int>(800 * h / w) << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<polyline class=\"boundary\" fill=\"none\" stroke=\"black\" stroke-width=\"" << stroke << "\" points=\""
      << pts(left, true) << "\"/>\n";
  svg << "<polyline class=\"boundary\" fill=\"none\" stroke=\"black\" stroke-width=\"" << stroke << "\" points=\""
      << pts(right, true) << "\"/>\n";
  svg << "<polyline class=\"centerline\" fill=\"none\" stroke=\"gray\" stroke-dasharray=\"" << 4 * stroke << "\" "
      << "stroke-width=\"" << stroke << "\" points=\"" << pts(track.points(), true) << "\"/>\n";
  for (const auto& t : traces) {
    svg << "<polyline class=\"trace\" fill=\"none\" stroke=\"" << (t.crashed ? "crimson" : "steelblue")
        << "\" stroke-opacity=\"0.6\" stroke-width=\"" << stroke << "\" points=\"" << pts(t.points, false)
        << "\"/>\n";
    if (t.crashed && !t.points.empty()) {
      const Point2 c = t.points.back();
      svg << "<circle class=\"crash\" cx=\"" << (c.x - xmin + margin) << "\" cy=\"" << (ymax + margin - c.y)
          << "\" r=\"" << 4 * stroke << "\" fill=\"crimson\"/>\n";
    }
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg.str();
}

}  // namespace racebench
