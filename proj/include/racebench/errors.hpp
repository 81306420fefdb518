#pragma once

#include <stdexcept>
#include <string>

namespace racebench {

// Invalid or self-intersecting geometry, open polylines, bad generator params.
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files. The message carries the offending row when known.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Query point too far from a path to be projected; callers treat it as off-track.
class ProjectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. stepping a finished episode or mismatched dimensions.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class SimulationFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RacelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace racebench
