#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace racebench {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point2 a, Point2 b) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
// Rotates by +90 degrees: the left-hand normal of a direction.
inline Point2 left_normal(Point2 t) { return {-t.y, t.x}; }

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

// Path-relative pose. p is progress along the path, n the signed lateral
// offset (positive to the left of travel), psi_rel the heading relative to
// the path tangent.
struct FrenetPose {
  double p = 0.0;
  double n = 0.0;
  double psi_rel = 0.0;
};

struct CartesianPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

// Polyline with a continuous tangent frame.
//
// Positions are linear between vertices. Each vertex carries a tangent
// averaged over the four segments of its 5-vertex window, and the frame
// tangent inside a segment is the normalized linear blend of the two vertex
// tangents. The frame is therefore continuous along the path, which makes
// projection well defined and exactly invertible.
class Polyline {
 public:
  Polyline() = default;
  Polyline(std::vector<Point2> points, bool closed);

  const std::vector<Point2>& points() const { return points_; }
  const std::vector<double>& cum_arclength() const { return cum_; }
  const std::vector<Point2>& vertex_tangents() const { return tangents_; }
  double length() const { return length_; }
  bool closed() const { return closed_; }
  std::size_t size() const { return points_.size(); }
  std::size_t segment_count() const { return closed_ ? points_.size() : points_.size() - 1; }
  double max_segment_length() const { return max_segment_; }
  double min_segment_length() const { return min_segment_; }

  // Closed paths: wraps into [0, L). Open paths: clamps into [0, L].
  double wrap(double s) const;

  struct Frame {
    Point2 origin;
    Point2 tangent;  // unit
    std::size_t segment = 0;
    double t = 0.0;  // fraction along the segment
  };
  Frame frame_at(double s) const;

  // Projects q onto the path frame. With a hint only segments within
  // +-hint_window of the hint are searched first; the global search is the
  // fallback when nothing lies in the window.
  FrenetPose project(Point2 q, double heading, std::optional<double> hint,
                     double max_distance, double hint_window = 5.0) const;

  CartesianPose to_cartesian(const FrenetPose& pose) const;

  // Signed curvature from central differences of the vertex tangent angle,
  // linearly interpolated. Periodic for closed paths.
  double curvature_at(double s) const;

  // Linear interpolation of per-vertex values at arclength s.
  double interpolate(const std::vector<double>& values, double s) const;

 private:
  struct Candidate {
    double dist = 0.0;
    double s = 0.0;
    double n = 0.0;
    Point2 tangent;
  };
  void scan_segment(std::size_t i, Point2 q, std::optional<Candidate>& best) const;
  std::size_t segment_index(double s) const;

  std::vector<Point2> points_;
  std::vector<double> cum_;
  std::vector<Point2> tangents_;
  std::vector<double> curvature_;
  double length_ = 0.0;
  double max_segment_ = 0.0;
  double min_segment_ = 0.0;
  bool closed_ = true;
};

// Throws GeometryError when any two non-adjacent segments intersect.
void check_simple(const std::vector<Point2>& points, bool closed);

// Closed race track: centerline plus per-vertex lateral extents.
class TrackGeometry {
 public:
  static constexpr double kMinWidth = 1.0;

  TrackGeometry() = default;
  // Validates widths, vertex count and simplicity. A trailing vertex that
  // duplicates the first one is dropped.
  TrackGeometry(std::vector<Point2> points, std::vector<double> width_left,
                std::vector<double> width_right, std::string name = {});

  const Polyline& centerline() const { return line_; }
  const std::vector<Point2>& points() const { return line_.points(); }
  const std::vector<double>& width_left() const { return width_left_; }
  const std::vector<double>& width_right() const { return width_right_; }
  const std::vector<double>& cum_arclength() const { return line_.cum_arclength(); }
  double total_length() const { return line_.length(); }
  bool closed() const { return true; }
  std::size_t size() const { return line_.size(); }
  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  double width_left_at(double p) const { return line_.interpolate(width_left_, p); }
  double width_right_at(double p) const { return line_.interpolate(width_right_, p); }
  double max_half_width() const { return max_half_width_; }

 private:
  Polyline line_;
  std::vector<double> width_left_;
  std::vector<double> width_right_;
  double max_half_width_ = 0.0;
  std::string name_;
};

// A spatial path to follow (raceline or centerline), open or closed.
class ReferenceTrajectory {
 public:
  ReferenceTrajectory() = default;
  ReferenceTrajectory(std::vector<Point2> points, bool closed);

  static ReferenceTrajectory from_centerline(const TrackGeometry& track);

  const Polyline& path() const { return line_; }
  const std::vector<Point2>& points() const { return line_.points(); }
  const std::vector<double>& cum_arclength() const { return line_.cum_arclength(); }
  double total_length() const { return line_.length(); }
  bool closed() const { return line_.closed(); }
  bool empty() const { return line_.size() == 0; }

 private:
  Polyline line_;
};

TrackGeometry resample_by_arclength(const TrackGeometry& track, double spacing);
ReferenceTrajectory resample_by_arclength(const ReferenceTrajectory& traj, double spacing);

FrenetPose project_to_frenet(const TrackGeometry& track, double x, double y, double heading,
                             std::optional<double> hint_p = std::nullopt);
CartesianPose frenet_to_cartesian(const TrackGeometry& track, const FrenetPose& pose);
double curvature_at(const TrackGeometry& track, double p);

// Signed shortest-wrap progress difference, in (-L/2, L/2].
double track_advancement(double p_prev, double p_next, double length);

enum class TrackKind { circle, square, f_shape, training_loop };

std::optional<TrackKind> parse_track_kind(std::string_view name);
std::string_view to_string(TrackKind kind);

struct TrackParams {
  double radius = 10.0;         // circle
  double side = 20.0;           // square
  double corner_radius = 3.0;   // square
  std::optional<double> width;  // per-kind default when absent
  double spacing = 0.1;
};

TrackGeometry generate_track(TrackKind kind, const TrackParams& params = {});

// Track CSV: x_m,y_m,w_tr_left_m,w_tr_right_m
TrackGeometry load_track(const std::filesystem::path& path);
void save_track(const TrackGeometry& track, const std::filesystem::path& path);

// Trajectory CSV: s_m,x_m,y_m
ReferenceTrajectory load_trajectory(const std::filesystem::path& path);
void save_trajectory(const ReferenceTrajectory& traj, const std::filesystem::path& path);

}  // namespace racebench
