#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "racebench/errors.hpp"
#include "racebench/eval.hpp"

using namespace racebench;

namespace {

std::shared_ptr<const TrackGeometry> circle() {
  static const auto t = std::make_shared<const TrackGeometry>(generate_track(TrackKind::circle, {}));
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count(const std::string& text, const std::string& needle) {
  int n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

RunResult run(int i, std::optional<double> lap, bool crashed, std::vector<double> times = {}) {
  RunResult r;
  r.index = i;
  r.lap_time = lap;
  r.crashed = crashed;
  r.progress_fraction = lap ? 1.0 : 0.5;
  r.path_length_excess = lap ? std::optional<double>(0.1 * i) : std::nullopt;
  r.compute_times = std::move(times);
  return r;
}

// Short protocol whose runs all time out after one second.
ProtocolSpec quick_spec() {
  ProtocolSpec s;
  s.track = circle();
  s.n_runs = 2;
  s.timeout_s = 1.0;
  return s;
}

}  // namespace

TEST(FrictionSampler, MismatchMeanIsPointTwoLower) {
  const TireNoiseSpec train;
  const TireNoiseSpec mismatch = train.mismatch();
  EXPECT_DOUBLE_EQ(mismatch.mean, train.mean - 0.2);
  EXPECT_EQ(mismatch.std, train.std);
  std::mt19937_64 rng(3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += mismatch.sample(rng);
  EXPECT_NEAR(sum / n, 0.8489, 5e-4);

  ProtocolSpec s;
  s.friction = FrictionSampler::mismatch;
  EXPECT_NEAR(s.sampler_mean(), 0.8489, 1e-12);
  EXPECT_EQ(s.sampler_std(), 0.0375);
}

TEST(FrictionSampler, Parsing) {
  EXPECT_EQ(parse_friction_sampler("train_noise"), FrictionSampler::train_noise);
  EXPECT_FALSE(parse_friction_sampler("icy").has_value());
  EXPECT_EQ(parse_controller_kind("tc_driver"), ControllerKind::tc_driver);
  EXPECT_FALSE(parse_controller_kind("pid").has_value());
}

TEST(Protocol, StartPositions) {
  ProtocolSpec s;
  s.track = circle();
  const auto spread = s.resolved_start_positions();
  ASSERT_EQ(spread.size(), 21u);
  for (int k = 0; k < 21; ++k) EXPECT_NEAR(spread[k], k * circle()->total_length() / 21, 1e-12);
  s.friction = FrictionSampler::mismatch;
  for (double p : s.resolved_start_positions()) EXPECT_EQ(p, 0.0);
}

TEST(Protocol, Validation) {
  ProtocolSpec s = quick_spec();
  s.n_runs = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = quick_spec();
  s.controller = ControllerKind::end_to_end;
  EXPECT_THROW(s.validate(), ConfigError);
  s.checkpoint = "/nonexistent/actor.txt";
  EXPECT_THROW(run_protocol(s), ConfigError);
  s = quick_spec();
  s.controller = ControllerKind::tc_driver;
  s.checkpoint = "/dev/null";
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Protocol, NominalSamplerUsesNominalFrictionAndTimeoutsCountAsCrashes) {
  const BenchReport r = run_protocol(quick_spec());
  ASSERT_EQ(r.runs.size(), 2u);
  for (const auto& run : r.runs) {
    EXPECT_EQ(run.mu, 1.0489);
    EXPECT_TRUE(run.timed_out);
    EXPECT_TRUE(run.crashed);
    EXPECT_FALSE(run.lap_time.has_value());
    EXPECT_LT(run.progress_fraction, 1.0);
    EXPECT_EQ(run.compute_times.size(), 100u);
  }
  EXPECT_EQ(r.crash_ratio, 100.0);
  EXPECT_FALSE(r.t_mu.has_value());
  EXPECT_EQ(r.timeout_s, 1.0);
}

TEST(Protocol, TrainNoiseSamplesDifferPerRun) {
  ProtocolSpec s = quick_spec();
  s.n_runs = 3;
  s.friction = FrictionSampler::train_noise;
  const BenchReport r = run_protocol(s);
  EXPECT_NE(r.runs[0].mu, r.runs[1].mu);
  EXPECT_NE(r.runs[1].mu, r.runs[2].mu);
}

TEST(Protocol, ReportIsDeterministic) {
  ProtocolSpec s = quick_spec();
  s.friction = FrictionSampler::mismatch;
  s.seed = 17;
  const std::string a = run_protocol(s).to_json();
  s.threads = 2;
  const std::string b = run_protocol(s).to_json();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.find("compute_time"), std::string::npos);
  EXPECT_NE(a.find("\"mean\": 0.8489"), std::string::npos);
}

TEST(Protocol, PolicyControllerRuns) {
  const auto dir = std::filesystem::temp_directory_path();
  SacConfig c;
  c.hidden = {32, 32};
  SacAgent(6, 2, c, 1).save(dir / "racebench_eval_e2e.txt");
  ProtocolSpec s = quick_spec();
  s.controller = ControllerKind::end_to_end;
  s.checkpoint = dir / "racebench_eval_e2e.txt";
  const BenchReport r = run_protocol(s);
  EXPECT_EQ(r.controller, "end_to_end");
  EXPECT_EQ(r.runs.size(), 2u);

  // An end-to-end checkpoint cannot drive the trajectory-conditioned observation.
  s.controller = ControllerKind::tc_driver;
  s.conditioning = std::make_shared<const ReferenceTrajectory>(ReferenceTrajectory::from_centerline(*circle()));
  EXPECT_THROW(run_protocol(s), ConfigError);
  std::filesystem::remove(dir / "racebench_eval_e2e.txt");
}

TEST(Aggregate, AllCrashedHasNoLapStatistics) {
  BenchReport r;
  for (int i = 0; i < 21; ++i) r.runs.push_back(run(i, std::nullopt, true));
  aggregate(r);
  EXPECT_EQ(r.crash_ratio, 100.0);
  EXPECT_EQ(r.crashes, 21);
  EXPECT_FALSE(r.t_mu.has_value());
  EXPECT_FALSE(r.t_sigma.has_value());
  EXPECT_NE(r.to_json().find("\"t_mu_s\": null"), std::string::npos);
}

TEST(Aggregate, StatisticsMatchPerRunTable) {
  BenchReport r;
  r.runs = {run(0, 10.0, false, {0.001, 0.003}), run(1, std::nullopt, true), run(2, 12.0, false, {0.002}),
            run(3, 11.0, false)};
  aggregate(r);
  EXPECT_EQ(r.n_runs, 4);
  EXPECT_EQ(r.crashes, 1);
  EXPECT_DOUBLE_EQ(r.crash_ratio, 25.0);
  EXPECT_DOUBLE_EQ(*r.t_mu, 11.0);
  EXPECT_DOUBLE_EQ(*r.t_sigma, 1.0);
  EXPECT_NEAR(*r.path_length_excess, (0.0 + 0.2 + 0.3) / 3.0, 1e-15);
  EXPECT_NEAR(r.compute_mu_ms, 2.0, 1e-12);
  EXPECT_NEAR(r.compute_sigma_ms, 1.0, 1e-12);
}

TEST(Report, CsvHasOneRowPerRun) {
  BenchReport r;
  r.runs = {run(0, 10.0, false), run(1, std::nullopt, true)};
  aggregate(r);
  const auto path = std::filesystem::temp_directory_path() / "racebench_report.csv";
  r.write_csv(path);
  const std::string text = slurp(path);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "run,start_p_m,mu,crashed,timed_out,lap_time_s,progress_fraction,path_length_m,path_length_excess_m");
  EXPECT_EQ(count(text, "\n"), 3);
  EXPECT_NE(text.find("1,0,0,1,0,,0.5,0,\n"), std::string::npos);
  std::filesystem::remove(path);
}

TEST(PathLengthExcess, IdenticalTraceIsZero) {
  const auto ref = ReferenceTrajectory::from_centerline(*circle());
  std::vector<Point2> trace = ref.points();
  trace.push_back(trace.front());
  EXPECT_NEAR(*path_length_excess(trace, true, ref), 0.0, 1e-9);
  EXPECT_FALSE(path_length_excess(trace, false, ref).has_value());
}

TEST(PathLengthExcess, SinusoidalSwerve) {
  const double amp = 0.5, period = 10.0, k = 2.0 * M_PI / period;
  const ReferenceTrajectory ref({{0.0, 0.0}, {100.0, 0.0}}, false);
  std::vector<Point2> trace;
  for (int i = 0; i <= 100000; ++i) {
    const double x = i * 1e-3;
    trace.push_back({x, amp * std::sin(k * x)});
  }
  boost::math::quadrature::tanh_sinh<double> quad;
  const double exact = quad.integrate([&](double x) { return std::hypot(1.0, amp * k * std::cos(k * x)); }, 0.0,
                                      100.0) - 100.0;
  const double excess = *path_length_excess(trace, true, ref);
  EXPECT_NEAR(excess, exact, 1e-6);
  EXPECT_NEAR(excess, 2.4, 0.05);
}

TEST(ComputeTime, ZeroStepsIsEmpty) {
  RacingEnv env(circle(), {}, {});
  MpccDriver driver(circle(), ReferenceTrajectory::from_centerline(*circle()), {}, {});
  EXPECT_FALSE(measure_compute_time(driver, env, 0).has_value());
  const TimingStats t = timing_stats({});
  EXPECT_EQ(t.samples, 0);
  EXPECT_FALSE(std::isnan(t.mu_ms));
  EXPECT_FALSE(std::isnan(t.sigma_ms));
}

TEST(ComputeTime, ActorInferenceIsStable) {
  SacConfig c;
  PolicyDriver driver(SacAgent(6, 2, c, 5));
  RacingEnv env(circle(), {}, {});
  const auto t = measure_compute_time(driver, env, 10000, 500);
  ASSERT_TRUE(t.has_value());
  EXPECT_EQ(t->samples, 10000);
  EXPECT_GT(t->mu_ms, 0.0);
  EXPECT_LT(t->sigma_ms / t->mu_ms, 0.5);
}

TEST(Overlay, OnePolylinePerTraceAndCrashMarkers) {
  const auto path = std::filesystem::temp_directory_path() / "racebench_overlay.svg";
  std::vector<OverlayTrace> traces;
  for (int i = 0; i < 21; ++i) {
    OverlayTrace t;
    for (int j = 0; j <= 10; ++j) t.points.push_back({10.0 * std::cos(0.1 * j + i), 10.0 * std::sin(0.1 * j + i)});
    t.crashed = i == 4;
    traces.push_back(t);
  }
  traces[4].points.push_back({11.5, 0.25});
  render_overlay(*circle(), traces, path);
  const std::string svg = slurp(path);
  EXPECT_EQ(count(svg, "class=\"trace\""), 21);
  EXPECT_EQ(count(svg, "class=\"boundary\""), 2);
  EXPECT_EQ(count(svg, "class=\"crash\""), 1);
  // The crashed trace ends at its marker.
  const std::string crashed = svg.substr(svg.find("stroke=\"crimson\""));
  const std::string pts = crashed.substr(crashed.find("points=\"") + 8);
  const std::string last = pts.substr(0, pts.find('"'));
  const std::string xy = last.substr(last.rfind(' ', last.size() - 2) + 1);
  const std::string cx = xy.substr(0, xy.find(','));
  const std::string cy = xy.substr(xy.find(',') + 1, xy.find(' ') - xy.find(',') - 1);
  EXPECT_NE(svg.find("class=\"crash\" cx=\"" + cx + "\" cy=\"" + cy + "\""), std::string::npos) << xy;

  render_overlay(*circle(), {}, path);
  const std::string empty = slurp(path);
  EXPECT_EQ(count(empty, "class=\"trace\""), 0);
  EXPECT_EQ(count(empty, "class=\"boundary\""), 2);
  EXPECT_EQ(count(empty, "class=\"centerline\""), 1);
  std::filesystem::remove(path);
}

TEST(Protocol, CrashCountDoesNotFallAsFrictionDrops) {
  // Mismatch sampler means 1.0489 - 0.05 k for k = 0..4, 21 runs each.
  std::vector<int> crashes;
  for (int k = 0; k < 5; ++k) {
    ProtocolSpec s;
    s.track = circle();
    s.friction = FrictionSampler::mismatch;
    s.noise.mean = 1.0489 + 0.2 - 0.05 * k;
    s.seed = 5;
    s.keep_traces = false;
    crashes.push_back(run_protocol(s).crashes);
  }
  // Binomial noise allowance of two crashes between neighbouring means.
  for (int k = 1; k < 5; ++k) EXPECT_GE(crashes[k], crashes[k - 1] - 2) << "mean step " << k;
  EXPECT_GE(crashes[4], crashes[0] - 2);
}
