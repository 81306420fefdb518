#include "racebench/cli.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "racebench/errors.hpp"
#include "racebench/rl_envs.hpp"

namespace racebench {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw UsageError("invalid value '" + value + "' for " + key);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value);
  return out;
}

void assign(double& dst, const std::string& k, const std::string& v) { dst = parse_number<double>(k, v); }
void assign(int& dst, const std::string& k, const std::string& v) { dst = parse_number<int>(k, v); }
void assign(long& dst, const std::string& k, const std::string& v) { dst = parse_number<long>(k, v); }
void assign(std::uint64_t& dst, const std::string& k, const std::string& v) {
  dst = parse_number<std::uint64_t>(k, v);
}
void assign(bool& dst, const std::string& k, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") {
    dst = true;
  } else if (v == "false" || v == "0" || v == "no") {
    dst = false;
  } else {
    bad_value(k, v);
  }
}
void assign(std::optional<double>& dst, const std::string& k, const std::string& v) {
  if (v == "none" || v.empty()) {
    dst.reset();
  } else {
    dst = parse_number<double>(k, v);
  }
}
void assign(std::vector<int>& dst, const std::string& k, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(k, trim(item)));
  if (out.empty()) bad_value(k, v);
  dst = std::move(out);
}
void assign(std::filesystem::path& dst, const std::string&, const std::string& v) { dst = v; }
void assign(FrictionSampler& dst, const std::string& k, const std::string& v) {
  const auto s = parse_friction_sampler(v);
  if (!s) bad_value(k, v);
  dst = *s;
}

using Setter = std::function<void(GlobalConfig&, const std::string&)>;

const std::map<std::string, Setter>& registry() {
  static const std::map<std::string, Setter> reg = [] {
    std::map<std::string, Setter> r;
#define RB_KEY(name, member) \
  r[name] = [](GlobalConfig& g, const std::string& v) { assign(g.member, name, v); }
    RB_KEY("vehicle.m", vehicle.m);
    RB_KEY("vehicle.I_z", vehicle.I_z);
    RB_KEY("vehicle.l_f", vehicle.l_f);
    RB_KEY("vehicle.l_r", vehicle.l_r);
    RB_KEY("vehicle.h_cg", vehicle.h_cg);
    RB_KEY("vehicle.mu", vehicle.mu);
    RB_KEY("vehicle.C_Sf", vehicle.C_Sf);
    RB_KEY("vehicle.C_Sr", vehicle.C_Sr);
    RB_KEY("vehicle.w_car", vehicle.w_car);
    RB_KEY("vehicle.v_max", vehicle.v_max);
    RB_KEY("vehicle.a_max", vehicle.a_max);
    RB_KEY("vehicle.delta_max", vehicle.delta_max);
    RB_KEY("vehicle.delta_rate_max", vehicle.delta_rate_max);
    RB_KEY("vehicle.k_v", vehicle.k_v);
    RB_KEY("vehicle.v_kin_low", vehicle.v_kin_low);
    RB_KEY("vehicle.v_kin_high", vehicle.v_kin_high);
    RB_KEY("vehicle.kin_relax_tau", vehicle.kin_relax_tau);
    RB_KEY("vehicle.g", vehicle.g);
    RB_KEY("env.max_steps", env.max_steps);
    RB_KEY("env.dt", env.dt);
    RB_KEY("env.c_penalty", env.c_penalty);
    RB_KEY("env.cornering_noise_std", env.cornering_noise_std);
    RB_KEY("env.start_p", env.start_pose.p);
    RB_KEY("env.start_speed", env.start_speed);
    RB_KEY("env.conditioning_points", env.conditioning_points);
    RB_KEY("env.conditioning_spacing", env.conditioning_spacing);
    RB_KEY("env.safety_margin_factor", env.safety_margin_factor);
    RB_KEY("env.crash_margin_factor", env.crash_margin_factor);
    RB_KEY("env.laps", env.laps);
    RB_KEY("noise.mean", noise.mean);
    RB_KEY("noise.std", noise.std);
    RB_KEY("track.radius", track.radius);
    RB_KEY("track.side", track.side);
    RB_KEY("track.corner_radius", track.corner_radius);
    RB_KEY("track.width", track.width);
    RB_KEY("track.spacing", track.spacing);
    RB_KEY("mpcc.N", mpcc.N);
    RB_KEY("mpcc.dt_mpc", mpcc.dt_mpc);
    RB_KEY("mpcc.q_c", mpcc.q_c);
    RB_KEY("mpcc.q_l", mpcc.q_l);
    RB_KEY("mpcc.gamma_prog", mpcc.gamma_prog);
    RB_KEY("mpcc.R_a", mpcc.R_a);
    RB_KEY("mpcc.R_ddelta", mpcc.R_ddelta);
    RB_KEY("mpcc.R_dvtheta", mpcc.R_dvtheta);
    RB_KEY("mpcc.slack_weight", mpcc.slack_weight);
    RB_KEY("mpcc.boundary_margin", mpcc.boundary_margin);
    RB_KEY("mpcc.dt_control", mpcc.dt_control);
    RB_KEY("mpcc.warm_start_qp", mpcc.warm_start_qp);
    RB_KEY("mpcc.qp_max_iter", mpcc.qp_max_iter);
    RB_KEY("sac.gamma", sac.gamma);
    RB_KEY("sac.batch_size", sac.batch_size);
    RB_KEY("sac.train_freq", sac.train_freq);
    RB_KEY("sac.gradient_steps", sac.gradient_steps);
    RB_KEY("sac.episode_len", sac.episode_len);
    RB_KEY("sac.buffer_capacity", sac.buffer_capacity);
    RB_KEY("sac.lr", sac.lr);
    RB_KEY("sac.tau", sac.tau);
    RB_KEY("sac.entropy_target", sac.entropy_target);
    RB_KEY("sac.warmup_steps", sac.warmup_steps);
    RB_KEY("sac.hidden", sac.hidden);
    RB_KEY("sac.init_alpha", sac.init_alpha);
    RB_KEY("sac.auto_alpha", sac.auto_alpha);
    RB_KEY("sac.checkpoint_interval", sac.checkpoint_interval);
    RB_KEY("protocol.n_runs", n_runs);
    RB_KEY("protocol.friction", friction);
    RB_KEY("protocol.timeout_s", timeout_s);
    RB_KEY("protocol.threads", threads);
    RB_KEY("paths.tracks", paths.tracks);
    RB_KEY("paths.checkpoints", paths.checkpoints);
    RB_KEY("paths.reports", paths.reports);
    RB_KEY("run.seed", seed);
#undef RB_KEY
    return r;
  }();
  return reg;
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

std::filesystem::path in_dir(const std::filesystem::path& dir, const std::filesystem::path& file) {
  return file.is_absolute() ? file : dir / file;
}

// A track argument is a file path, or a generator name when no such file exists.
std::shared_ptr<const TrackGeometry> resolve_track(const GlobalConfig& cfg, const std::string& arg) {
  for (const auto& candidate : {std::filesystem::path(arg), cfg.paths.tracks / arg}) {
    if (std::filesystem::is_regular_file(candidate)) {
      TrackGeometry t = load_track(candidate);
      if (t.name().empty()) t.set_name(candidate.stem().string());
      return std::make_shared<const TrackGeometry>(std::move(t));
    }
  }
  if (const auto kind = parse_track_kind(arg)) {
    TrackGeometry t = generate_track(*kind, cfg.track);
    t.set_name(std::string(to_string(*kind)));
    return std::make_shared<const TrackGeometry>(std::move(t));
  }
  throw ConfigError("track '" + arg + "' is neither a file nor one of circle, square, f, training_loop");
}

std::shared_ptr<const ReferenceTrajectory> resolve_conditioning(const TrackGeometry& track, const std::string& arg) {
  if (arg.empty()) return nullptr;
  if (arg == "centerline") {
    return std::make_shared<const ReferenceTrajectory>(ReferenceTrajectory::from_centerline(track));
  }
  require_file(arg, "conditioning trajectory");
  return std::make_shared<const ReferenceTrajectory>(load_trajectory(arg));
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  // gen-track
  std::string kind;
  std::optional<double> radius, side, corner_radius, width, spacing;
  std::string out;

  // plan / train / eval
  std::string track;
  std::string log;
  bool centerline = false;
  int laps = 2;
  std::string agent;
  std::string conditioning;
  long steps = 0;
  std::string checkpoint;
  std::string controller;
  std::optional<int> runs;
  std::string friction;
  std::string csv;
  std::string svg;
  bool timing = false;
  std::optional<int> threads;
  std::optional<double> timeout;

  // report
  std::vector<std::string> inputs;
};

GlobalConfig load_config(const Options& o) {
  GlobalConfig cfg;
  if (!o.config_file.empty()) {
    require_file(o.config_file, "config file");
    apply_config_file(cfg, o.config_file);
  }
  for (const auto& s : o.sets) apply_setting(cfg, s);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

int cmd_gen_track(const Options& o, std::ostream& out) {
  GlobalConfig cfg = load_config(o);
  const auto kind = parse_track_kind(o.kind);
  if (!kind) throw UsageError("unknown track kind '" + o.kind + "' (valid: circle, square, f, training_loop)");
  if (o.radius) cfg.track.radius = *o.radius;
  if (o.side) cfg.track.side = *o.side;
  if (o.corner_radius) cfg.track.corner_radius = *o.corner_radius;
  if (o.width) cfg.track.width = *o.width;
  if (o.spacing) cfg.track.spacing = *o.spacing;
  TrackGeometry t = generate_track(*kind, cfg.track);
  const std::filesystem::path path =
      o.out.empty() ? cfg.paths.tracks / (std::string(to_string(*kind)) + ".csv") : std::filesystem::path(o.out);
  save_track(t, path);
  out << "wrote " << path.string() << " (" << t.size() << " points, length " << fmt(t.total_length()) << " m)\n";
  return 0;
}

int cmd_plan(const Options& o, std::ostream& out) {
  const GlobalConfig cfg = load_config(o);
  cfg.mpcc.validate();
  cfg.vehicle.validate();
  const auto track = resolve_track(cfg, o.track);
  const std::filesystem::path path = o.out.empty() ? std::filesystem::path("raceline.csv") : std::filesystem::path(o.out);
  if (o.centerline) {
    save_trajectory(ReferenceTrajectory::from_centerline(*track), path);
    out << "wrote centerline " << path.string() << "\n";
    return 0;
  }
  RacelineResult r;
  try {
    r = generate_raceline(track, cfg.mpcc, o.laps, cfg.vehicle);
  } catch (const RacelineError& e) {
    throw RacelineError(std::string(e.what()) + " (rerun with --centerline to condition on the centerline)");
  }
  save_trajectory(r.trajectory, path);
  const std::filesystem::path log = o.log.empty() ? path.parent_path() / "solve_log.csv" : std::filesystem::path(o.log);
  write_solve_log(r.log, log);
  out << "wrote raceline " << path.string() << " (length " << fmt(r.trajectory.total_length()) << " m, lap "
      << fmt(r.lap_time, 2) << " s) and " << log.string() << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const GlobalConfig cfg = load_config(o);
  const auto kind = parse_agent_kind(o.agent);
  if (!kind) throw UsageError("unknown agent '" + o.agent + "' (valid: end_to_end, tc_driver)");
  if (o.steps < 0) throw UsageError("--steps must be >= 0");
  cfg.sac.validate();
  const auto track = resolve_track(cfg, o.track);
  EnvConfig ec = cfg.env;
  ec.agent = *kind;
  ec.tire_noise = cfg.noise;
  ec.max_steps = cfg.sac.episode_len;
  // Episodes end on a crash or at episode_len, not at the first finish line.
  ec.laps = std::max(ec.laps, 1000);
  if (*kind == AgentKind::tc_driver) {
    ec.conditioning = resolve_conditioning(*track, o.conditioning);
    if (!ec.conditioning) throw ConfigError("tc_driver training needs --conditioning <raceline.csv|centerline>");
  }
  ec.validate();
  RacingRlEnv env(track, cfg.vehicle, ec);
  TrainOptions topt;
  topt.checkpoint = o.checkpoint.empty() ? cfg.paths.checkpoints / (o.agent + ".ckpt") : std::filesystem::path(o.checkpoint);
  topt.log = o.log.empty() ? topt.checkpoint->parent_path() / (o.agent + "_train.csv") : std::filesystem::path(o.log);
  const TrainResult r = train(env, cfg.sac, o.steps, cfg.seed, topt);
  out << "trained " << o.agent << " for " << o.steps << " steps (" << r.log.size() << " episodes); wrote "
      << topt.checkpoint->string() << " and " << topt.log->string() << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const GlobalConfig cfg = load_config(o);
  const auto controller = parse_controller_kind(o.controller);
  if (!controller) throw UsageError("unknown controller '" + o.controller + "' (valid: mpcc, end_to_end, tc_driver)");
  ProtocolSpec spec;
  spec.controller = *controller;
  spec.friction = cfg.friction;
  if (!o.friction.empty()) {
    const auto f = parse_friction_sampler(o.friction);
    if (!f) throw UsageError("unknown friction sampler '" + o.friction + "' (valid: nominal, train_noise, mismatch)");
    spec.friction = *f;
  }
  if (!o.checkpoint.empty()) {
    spec.checkpoint = in_dir(cfg.paths.checkpoints, o.checkpoint);
    require_file(*spec.checkpoint, "checkpoint");
  }
  spec.track = resolve_track(cfg, o.track);
  spec.track_name = spec.track->name();
  spec.conditioning = resolve_conditioning(*spec.track, o.conditioning);
  spec.n_runs = o.runs.value_or(cfg.n_runs);
  spec.noise = cfg.noise;
  spec.seed = cfg.seed;
  spec.vehicle = cfg.vehicle;
  spec.env = cfg.env;
  spec.mpcc = cfg.mpcc;
  spec.timeout_s = o.timeout ? o.timeout : cfg.timeout_s;
  spec.threads = o.threads.value_or(cfg.threads);
  spec.keep_traces = !o.svg.empty();

  const BenchReport report = run_protocol(spec);
  const std::filesystem::path json = o.out.empty() ? cfg.paths.reports / "report.json" : std::filesystem::path(o.out);
  report.write_json(json, o.timing);
  if (!o.csv.empty()) report.write_csv(o.csv, o.timing);
  if (!o.svg.empty()) {
    std::vector<OverlayTrace> traces;
    for (const RunResult& r : report.runs) traces.push_back({r.trace, r.crashed});
    render_overlay(*spec.track, traces, o.svg);
  }
  out << report.controller << " on " << report.track << ", friction " << report.friction << " (sampler mean "
      << fmt(report.sampler_mean, 4) << ", std " << fmt(report.sampler_std, 4) << "): crash ratio "
      << fmt(report.crash_ratio, 2) << "% over " << report.n_runs << " runs";
  if (report.t_mu) out << ", lap " << fmt(*report.t_mu) << " +- " << fmt(*report.t_sigma) << " s";
  if (o.timing) out << ", compute " << fmt(report.compute_mu_ms) << " +- " << fmt(report.compute_sigma_ms) << " ms";
  out << "\nwrote " << json.string() << "\n";
  return 0;
}

int cmd_report(const Options& o, std::ostream& out) {
  std::ostringstream table;
  table << "| controller | track | friction | runs | crash ratio | lap time (s) | compute (ms) |\n";
  table << "|---|---|---|---|---|---|---|\n";
  for (const auto& in : o.inputs) {
    require_file(in, "report");
    std::ifstream f(in);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(in + ": " + e.what());
    }
    try {
      auto opt = [](const nlohmann::json& v, int digits) { return v.is_null() ? std::string("n.a.") : fmt(v.get<double>(), digits); };
      table << "| " << j.at("controller").get<std::string>() << " | " << j.at("track").get<std::string>() << " | "
            << j.at("friction_sampler").at("name").get<std::string>() << " (" << fmt(j.at("friction_sampler").at("mean").get<double>(), 4)
            << ") | " << j.at("n_runs").get<int>() << " | " << fmt(j.at("crash_ratio_percent").get<double>(), 2) << "% | ";
      if (j.at("t_mu_s").is_null()) {
        table << "n.a.";
      } else {
        table << opt(j.at("t_mu_s"), 2) << " +- " << opt(j.at("t_sigma_s"), 2);
      }
      table << " | ";
      if (j.contains("compute_time_ms")) {
        table << fmt(j["compute_time_ms"]["mu"].get<double>(), 2) << " +- " << fmt(j["compute_time_ms"]["sigma"].get<double>(), 2);
      } else {
        table << "-";
      }
      table << " |\n";
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(in + ": not a benchmark report (" + e.what() + ")");
    }
  }
  if (o.out.empty()) {
    out << table.str();
  } else {
    std::ofstream f(o.out);
    if (!f) throw std::runtime_error("cannot write " + o.out);
    f << table.str();
    out << "wrote " << o.out << "\n";
  }
  return 0;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : registry()) keys.push_back(k);
  return keys;
}

void apply_setting(GlobalConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto it = registry().find(key);
  if (it == registry().end()) throw UsageError("unknown config key '" + key + "'");
  it->second(config, value);
}

void apply_config_file(GlobalConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(path.string() + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::string full = section.empty() ? line : section + "." + line;
    try {
      apply_setting(config, full);
    } catch (const UsageError& e) {
      throw UsageError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Racing benchmark: tracks, MPCC planning, SAC training and evaluation protocols", "racebench"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_file, "key = value config file");
  app.add_option("--set", o.sets, "override a config key, section.key=value")->take_all();
  app.add_option("--seed", o.seed, "seed for every stochastic output");

  auto* gen = app.add_subcommand("gen-track", "generate a track and write it as CSV");
  gen->add_option("kind", o.kind, "circle, square, f or training_loop")->required();
  gen->add_option("--radius", o.radius, "circle radius (m)");
  gen->add_option("--side", o.side, "square side (m)");
  gen->add_option("--corner-radius", o.corner_radius, "square corner radius (m)");
  gen->add_option("--width", o.width, "track width (m)");
  gen->add_option("--spacing", o.spacing, "vertex spacing (m)");
  gen->add_option("--out", o.out, "output CSV");

  auto* plan = app.add_subcommand("plan", "drive MPCC laps and log the raceline");
  plan->add_option("--track", o.track, "track CSV or generator name")->required();
  plan->add_option("--out", o.out, "raceline CSV (default raceline.csv)");
  plan->add_option("--log", o.log, "solve-time log CSV");
  plan->add_option("--laps", o.laps, "laps to drive; the last one is logged");
  plan->add_flag("--centerline", o.centerline, "write the centerline instead of planning");

  auto* tr = app.add_subcommand("train", "train a SAC agent with tire-friction noise");
  tr->add_option("--agent", o.agent, "end_to_end or tc_driver")->required();
  tr->add_option("--track", o.track, "track CSV or generator name")->required();
  tr->add_option("--conditioning", o.conditioning, "raceline CSV or 'centerline' (tc_driver)");
  tr->add_option("--steps", o.steps, "environment steps")->required();
  tr->add_option("--checkpoint", o.checkpoint, "checkpoint output");
  tr->add_option("--log", o.log, "training log CSV");

  auto* ev = app.add_subcommand("eval", "run an evaluation protocol");
  ev->add_option("--controller", o.controller, "mpcc, end_to_end or tc_driver")->required();
  ev->add_option("--track", o.track, "track CSV or generator name")->required();
  ev->add_option("--checkpoint", o.checkpoint, "agent checkpoint");
  ev->add_option("--conditioning", o.conditioning, "raceline CSV or 'centerline' (tc_driver)");
  ev->add_option("--runs", o.runs, "number of runs (default 21)");
  ev->add_option("--friction", o.friction, "nominal, train_noise or mismatch");
  ev->add_option("--threads", o.threads, "parallel runs");
  ev->add_option("--timeout", o.timeout, "run timeout in s (default 2x the nominal MPCC lap)");
  ev->add_option("--out", o.out, "JSON report (default report.json)");
  ev->add_option("--csv", o.csv, "per-run CSV");
  ev->add_option("--svg", o.svg, "trajectory overlay SVG");
  ev->add_flag("--timing", o.timing, "include wall-clock compute times in the reports");

  auto* rep = app.add_subcommand("report", "summarize JSON reports as a table");
  rep->add_option("inputs", o.inputs, "report JSON files")->required();
  rep->add_option("--out", o.out, "write the table to a file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_track(o, out);
    if (plan->parsed()) return cmd_plan(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (rep->parsed()) return cmd_report(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace racebench
