#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "racebench/env.hpp"
#include "racebench/eval.hpp"
#include "racebench/mpcc.hpp"
#include "racebench/sac.hpp"
#include "racebench/track.hpp"

namespace racebench {

struct PathsConfig {
  std::filesystem::path tracks = ".";       // searched for relative track files
  std::filesystem::path checkpoints = ".";  // default checkpoint directory
  std::filesystem::path reports = ".";      // default report directory
};

struct GlobalConfig {
  VehicleParams vehicle;
  EnvConfig env;
  TireNoiseSpec noise;
  TrackParams track;
  MpccConfig mpcc;
  SacConfig sac;
  int n_runs = 21;
  FrictionSampler friction = FrictionSampler::nominal;
  std::optional<double> timeout_s;
  int threads = 1;
  PathsConfig paths;
  std::uint64_t seed = 0;
};

// `section.key=value`. Unknown keys and malformed values are usage errors.
void apply_setting(GlobalConfig& config, const std::string& assignment);
// One `key = value` per line; `[section]` headers prefix the keys below them,
// `#` starts a comment.
void apply_config_file(GlobalConfig& config, const std::filesystem::path& path);
std::vector<std::string> config_keys();

// Exit codes: 0 success, 1 usage error, 2 runtime error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace racebench
