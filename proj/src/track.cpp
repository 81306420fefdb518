#include "racebench/track.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "racebench/errors.hpp"

namespace racebench {

namespace {

constexpr double kPi = std::numbers::pi;

Point2 normalized(Point2 v) {
  const double len = norm(v);
  return {v.x / len, v.y / len};
}

double orient(Point2 a, Point2 b, Point2 c) { return cross(b - a, c - a); }

bool on_segment(Point2 a, Point2 b, Point2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Point2 a, Point2 b, Point2 c, Point2 d) {
  const double o1 = orient(a, b, c);
  const double o2 = orient(a, b, d);
  const double o3 = orient(c, d, a);
  const double o4 = orient(c, d, b);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) {
    return true;
  }
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

// ---------------------------------------------------------------------------
// Polyline

Polyline::Polyline(std::vector<Point2> points, bool closed) : points_(std::move(points)), closed_(closed) {
  if (closed_ && points_.size() > 1 && norm(points_.back() - points_.front()) < 1e-9) {
    points_.pop_back();
  }
  const std::size_t n = points_.size();
  if (n < (closed_ ? 3u : 2u)) {
    throw GeometryError("polyline needs at least " + std::to_string(closed_ ? 3 : 2) + " vertices");
  }
  for (const auto& p : points_) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw GeometryError("non-finite vertex");
  }

  const std::size_t segs = segment_count();
  std::vector<Point2> dirs(segs);
  cum_.assign(n, 0.0);
  max_segment_ = 0.0;
  min_segment_ = std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (std::size_t i = 0; i < segs; ++i) {
    const Point2 d = points_[(i + 1) % n] - points_[i];
    const double len = norm(d);
    if (len <= 1e-12) {
      throw GeometryError("duplicate consecutive vertices at index " + std::to_string(i));
    }
    dirs[i] = {d.x / len, d.y / len};
    max_segment_ = std::max(max_segment_, len);
    min_segment_ = std::min(min_segment_, len);
    if (i + 1 < n) cum_[i + 1] = acc + len;
    acc += len;
  }
  length_ = acc;

  tangents_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Point2 sum{};
    for (long j = static_cast<long>(i) - 2; j <= static_cast<long>(i) + 1; ++j) {
      if (closed_) {
        const long m = static_cast<long>(segs);
        sum = sum + dirs[static_cast<std::size_t>(((j % m) + m) % m)];
      } else if (j >= 0 && j < static_cast<long>(segs)) {
        sum = sum + dirs[static_cast<std::size_t>(j)];
      }
    }
    if (norm(sum) < 1e-9) {
      // Window spans a full reversal; fall back to the outgoing segment.
      sum = dirs[std::min(i, segs - 1)];
    }
    tangents_[i] = normalized(sum);
  }

  curvature_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t prev = 0;
    std::size_t next = 0;
    double ds = 0.0;
    if (closed_) {
      prev = (i + n - 1) % n;
      next = (i + 1) % n;
      ds = cum_[next] - cum_[prev];
      if (next < i) ds += length_;
      if (prev > i) ds += length_;
    } else {
      prev = i == 0 ? 0 : i - 1;
      next = i + 1 == n ? i : i + 1;
      ds = cum_[next] - cum_[prev];
    }
    const double a0 = std::atan2(tangents_[prev].y, tangents_[prev].x);
    const double a1 = std::atan2(tangents_[next].y, tangents_[next].x);
    curvature_[i] = wrap_angle(a1 - a0) / ds;
  }
}

double Polyline::wrap(double s) const {
  if (closed_) {
    double r = s - length_ * std::floor(s / length_);
    if (r >= length_ || r < 0.0) r = 0.0;
    return r;
  }
  return std::clamp(s, 0.0, length_);
}

std::size_t Polyline::segment_index(double s) const {
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
  std::size_t i = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
  return std::min(i, segment_count() - 1);
}

Polyline::Frame Polyline::frame_at(double s) const {
  s = wrap(s);
  const std::size_t n = points_.size();
  const std::size_t i = segment_index(s);
  const std::size_t j = (i + 1) % n;
  const Point2 d = points_[j] - points_[i];
  const double len = norm(d);
  const double t = std::clamp((s - cum_[i]) / len, 0.0, 1.0);
  Frame f;
  f.origin = points_[i] + t * d;
  f.tangent = normalized((1.0 - t) * tangents_[i] + t * tangents_[j]);
  f.segment = i;
  f.t = t;
  return f;
}

double Polyline::interpolate(const std::vector<double>& values, double s) const {
  const Frame f = frame_at(s);
  const std::size_t j = (f.segment + 1) % points_.size();
  return (1.0 - f.t) * values[f.segment] + f.t * values[j];
}

double Polyline::curvature_at(double s) const { return interpolate(curvature_, s); }

void Polyline::scan_segment(std::size_t i, Point2 q, std::optional<Candidate>& best) const {
  const std::size_t n = points_.size();
  const std::size_t j = (i + 1) % n;
  const Point2 p0 = points_[i];
  const Point2 d = points_[j] - p0;
  const Point2 t0 = tangents_[i];
  const Point2 e = tangents_[j] - t0;
  const Point2 r = q - p0;
  const double len = norm(d);

  // Foot condition (q - C(t)) . T(t) = 0 with unnormalized blended tangent
  // is quadratic in t.
  const double a2 = -dot(d, e);
  const double a1 = dot(r, e) - dot(d, t0);
  const double a0 = dot(r, t0);
  auto f = [&](double t) { return a0 + t * (a1 + t * a2); };
  auto df = [&](double t) { return a1 + 2.0 * a2 * t; };

  double roots[2];
  int count = 0;
  const double scale = std::abs(a1) + std::abs(a0);
  if (std::abs(a2) <= 1e-14 * std::max(scale, 1e-300)) {
    if (a1 != 0.0) roots[count++] = -a0 / a1;
  } else {
    double disc = a1 * a1 - 4.0 * a2 * a0;
    if (disc < 0.0) {
      if (disc > -1e-14 * a1 * a1) {
        disc = 0.0;
      } else {
        return;
      }
    }
    const double sq = std::sqrt(disc);
    const double qq = -0.5 * (a1 + std::copysign(sq, a1));
    if (qq != 0.0) {
      roots[count++] = qq / a2;
      roots[count++] = a0 / qq;
    } else {
      roots[count++] = 0.0;
    }
  }

  constexpr double kTol = 1e-9;
  for (int k = 0; k < count; ++k) {
    double t = roots[k];
    if (!(t >= -kTol && t <= 1.0 + kTol)) continue;
    for (int it = 0; it < 2; ++it) {
      const double slope = df(t);
      if (slope == 0.0) break;
      t -= f(t) / slope;
    }
    t = std::clamp(t, 0.0, 1.0);
    const Point2 c = p0 + t * d;
    const Point2 tan = normalized(t0 + t * e);
    const Point2 w = q - c;
    const double dist = norm(w);
    double s = cum_[i] + t * len;
    if (closed_ && s >= length_) s -= length_;
    if (!best || dist < best->dist - 1e-12 || (std::abs(dist - best->dist) <= 1e-12 && s < best->s)) {
      best = Candidate{dist, s, dot(w, left_normal(tan)), tan};
    }
  }
}

FrenetPose Polyline::project(Point2 q, double heading, std::optional<double> hint, double max_distance,
                             double hint_window) const {
  const std::size_t n = points_.size();
  const std::size_t segs = segment_count();
  std::optional<Candidate> best;

  if (hint) {
    const double h = wrap(*hint);
    const std::size_t k = segment_index(h);
    // forward, including the segment that contains the hint
    for (std::size_t m = 0; m < segs; ++m) {
      std::size_t j = 0;
      if (closed_) {
        j = (k + m) % segs;
      } else {
        if (k + m >= segs) break;
        j = k + m;
      }
      double ahead = cum_[j] - h;
      if (closed_ && m > 0 && ahead < 0.0) ahead += length_;
      if (m > 0 && ahead > hint_window) break;
      scan_segment(j, q, best);
    }
    for (std::size_t m = 1; m < segs; ++m) {
      std::size_t j = 0;
      if (closed_) {
        j = (k + segs - m % segs) % segs;
      } else {
        if (m > k) break;
        j = k - m;
      }
      const std::size_t jn = (j + 1) % n;
      double seg_end = (jn == 0) ? length_ : cum_[jn];
      double behind = h - seg_end;
      if (closed_ && behind < 0.0) behind += length_;
      if (behind > hint_window) break;
      scan_segment(j, q, best);
    }
    if (best && best->dist > max_distance) best.reset();
  }

  if (!best) {
    std::size_t nearest = 0;
    double nearest_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 w = q - points_[i];
      const double d2 = dot(w, w);
      if (d2 < nearest_d2) {
        nearest_d2 = d2;
        nearest = i;
      }
    }
    if (nearest < segs) scan_segment(nearest, q, best);
    if (nearest > 0) scan_segment(nearest - 1, q, best);
    if (closed_ && nearest == 0) scan_segment(segs - 1, q, best);
    for (std::size_t i = 0; i < segs; ++i) {
      if (best) {
        const double seg_len = norm(points_[(i + 1) % n] - points_[i]);
        if (norm(q - points_[i]) - seg_len > best->dist + 1e-9) continue;
      }
      scan_segment(i, q, best);
    }
  }

  if (!best || best->dist > max_distance) {
    std::ostringstream msg;
    msg << "point (" << q.x << ", " << q.y << ") is outside the projection band of the path";
    throw ProjectionError(msg.str());
  }
  FrenetPose pose;
  pose.p = best->s;
  pose.n = best->n;
  pose.psi_rel = wrap_angle(heading - std::atan2(best->tangent.y, best->tangent.x));
  return pose;
}

CartesianPose Polyline::to_cartesian(const FrenetPose& pose) const {
  const Frame f = frame_at(pose.p);
  const Point2 pos = f.origin + pose.n * left_normal(f.tangent);
  return {pos.x, pos.y, wrap_angle(std::atan2(f.tangent.y, f.tangent.x) + pose.psi_rel)};
}

// ---------------------------------------------------------------------------
// Simplicity

void check_simple(const std::vector<Point2>& points, bool closed) {
  const std::size_t n = points.size();
  const std::size_t segs = closed ? n : n - 1;
  if (segs < 3) return;

  double max_len = 0.0;
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  for (std::size_t i = 0; i < segs; ++i) {
    max_len = std::max(max_len, norm(points[(i + 1) % n] - points[i]));
  }
  for (const auto& p : points) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
  }
  const double cell = std::max(max_len, 1e-6);

  auto key = [](long cx, long cy) { return (static_cast<long long>(cx) << 32) ^ (cy & 0xffffffffLL); };
  std::unordered_map<long long, std::vector<std::size_t>> grid;
  for (std::size_t i = 0; i < segs; ++i) {
    const Point2 a = points[i];
    const Point2 b = points[(i + 1) % n];
    const long x0 = static_cast<long>(std::floor((std::min(a.x, b.x) - min_x) / cell));
    const long x1 = static_cast<long>(std::floor((std::max(a.x, b.x) - min_x) / cell));
    const long y0 = static_cast<long>(std::floor((std::min(a.y, b.y) - min_y) / cell));
    const long y1 = static_cast<long>(std::floor((std::max(a.y, b.y) - min_y) / cell));
    for (long cx = x0; cx <= x1; ++cx) {
      for (long cy = y0; cy <= y1; ++cy) grid[key(cx, cy)].push_back(i);
    }
  }

  auto adjacent = [&](std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    if (j - i == 1) return true;
    return closed && i == 0 && j == segs - 1;
  };

  for (const auto& [k, bucket] : grid) {
    for (std::size_t u = 0; u < bucket.size(); ++u) {
      for (std::size_t v = u + 1; v < bucket.size(); ++v) {
        const std::size_t i = bucket[u];
        const std::size_t j = bucket[v];
        if (i == j || adjacent(i, j)) continue;
        if (segments_intersect(points[i], points[(i + 1) % n], points[j], points[(j + 1) % n])) {
          throw GeometryError("polyline self-intersects: segments " + std::to_string(std::min(i, j)) +
                              " and " + std::to_string(std::max(i, j)));
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// TrackGeometry / ReferenceTrajectory

TrackGeometry::TrackGeometry(std::vector<Point2> points, std::vector<double> width_left,
                             std::vector<double> width_right, std::string name)
    : name_(std::move(name)) {
  if (points.size() != width_left.size() || points.size() != width_right.size()) {
    throw GeometryError("track vertex and width counts differ");
  }
  if (points.size() > 1 && norm(points.back() - points.front()) < 1e-9) {
    points.pop_back();
    width_left.pop_back();
    width_right.pop_back();
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (double w : {width_left[i], width_right[i]}) {
      if (!std::isfinite(w) || w < kMinWidth - 1e-12) {
        std::ostringstream msg;
        msg << "track width " << w << " m at vertex " << i << " is below the " << kMinWidth << " m minimum";
        throw GeometryError(msg.str());
      }
    }
  }
  line_ = Polyline(std::move(points), true);
  check_simple(line_.points(), true);
  width_left_ = std::move(width_left);
  width_right_ = std::move(width_right);
  max_half_width_ = std::max(*std::max_element(width_left_.begin(), width_left_.end()),
                             *std::max_element(width_right_.begin(), width_right_.end()));
}

ReferenceTrajectory::ReferenceTrajectory(std::vector<Point2> points, bool closed)
    : line_(std::move(points), closed) {
  check_simple(line_.points(), closed);
}

ReferenceTrajectory ReferenceTrajectory::from_centerline(const TrackGeometry& track) {
  return ReferenceTrajectory(track.points(), true);
}

TrackGeometry resample_by_arclength(const TrackGeometry& track, double spacing) {
  if (!(spacing > 0.0 && spacing <= 0.25)) {
    throw UsageError("resample spacing must lie in (0, 0.25] m");
  }
  const Polyline& line = track.centerline();
  const double total = line.length();
  const auto count = static_cast<std::size_t>(std::max(3.0, std::ceil(total / spacing - 1e-9)));
  const double h = total / static_cast<double>(count);
  std::vector<Point2> pts(count);
  std::vector<double> wl(count);
  std::vector<double> wr(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double s = static_cast<double>(k) * h;
    pts[k] = line.frame_at(s).origin;
    wl[k] = line.interpolate(track.width_left(), s);
    wr[k] = line.interpolate(track.width_right(), s);
  }
  return TrackGeometry(std::move(pts), std::move(wl), std::move(wr), track.name());
}

ReferenceTrajectory resample_by_arclength(const ReferenceTrajectory& traj, double spacing) {
  if (!(spacing > 0.0 && spacing <= 0.25)) {
    throw UsageError("resample spacing must lie in (0, 0.25] m");
  }
  const Polyline& line = traj.path();
  const double total = line.length();
  const auto count = static_cast<std::size_t>(std::max(2.0, std::ceil(total / spacing - 1e-9)));
  const double h = total / static_cast<double>(count);
  std::vector<Point2> pts;
  const std::size_t last = line.closed() ? count : count + 1;
  pts.reserve(last);
  for (std::size_t k = 0; k < last; ++k) {
    const double s = std::min(static_cast<double>(k) * h, total);
    pts.push_back(line.frame_at(s).origin);
  }
  if (!line.closed()) pts.back() = line.points().back();
  return ReferenceTrajectory(std::move(pts), line.closed());
}

FrenetPose project_to_frenet(const TrackGeometry& track, double x, double y, double heading,
                             std::optional<double> hint_p) {
  return track.centerline().project({x, y}, heading, hint_p, 2.0 * track.max_half_width());
}

CartesianPose frenet_to_cartesian(const TrackGeometry& track, const FrenetPose& pose) {
  return track.centerline().to_cartesian(pose);
}

double curvature_at(const TrackGeometry& track, double p) { return track.centerline().curvature_at(p); }

double track_advancement(double p_prev, double p_next, double length) {
  double d = p_next - p_prev;
  d -= length * std::floor(d / length + 0.5);
  if (d <= -0.5 * length) d += length;
  return d;
}

// ---------------------------------------------------------------------------
// Generators

std::optional<TrackKind> parse_track_kind(std::string_view name) {
  if (name == "circle") return TrackKind::circle;
  if (name == "square") return TrackKind::square;
  if (name == "f" || name == "f_shape") return TrackKind::f_shape;
  if (name == "training_loop" || name == "loop") return TrackKind::training_loop;
  return std::nullopt;
}

std::string_view to_string(TrackKind kind) {
  switch (kind) {
    case TrackKind::circle: return "circle";
    case TrackKind::square: return "square";
    case TrackKind::f_shape: return "f_shape";
    case TrackKind::training_loop: return "training_loop";
  }
  return "unknown";
}

namespace {

// Piecewise straight/arc path builder sampled densely for later resampling.
class Turtle {
 public:
  explicit Turtle(double step) : step_(step) { pts_.push_back(pos_); }

  void straight(double len) {
    if (len < 0.0) throw GeometryError("negative straight length in track layout");
    if (len == 0.0) return;
    const Point2 dir{std::cos(heading_), std::sin(heading_)};
    const auto count = static_cast<int>(std::max(1.0, std::ceil(len / step_)));
    const Point2 start = pos_;
    for (int k = 1; k <= count; ++k) pts_.push_back(start + (len * k / count) * dir);
    pos_ = start + len * dir;
  }

  // Positive angle turns left.
  void arc(double radius, double angle) {
    const double sign = angle >= 0.0 ? 1.0 : -1.0;
    const Point2 nl{-std::sin(heading_), std::cos(heading_)};
    const Point2 center = pos_ + (sign * radius) * nl;
    const double phi0 = std::atan2(pos_.y - center.y, pos_.x - center.x);
    const auto count = static_cast<int>(std::max(2.0, std::ceil(radius * std::abs(angle) / step_)));
    for (int k = 1; k <= count; ++k) {
      const double phi = phi0 + angle * k / count;
      pts_.push_back({center.x + radius * std::cos(phi), center.y + radius * std::sin(phi)});
    }
    pos_ = pts_.back();
    heading_ += angle;
  }

  Point2 position() const { return pos_; }
  double heading() const { return heading_; }
  std::vector<Point2> take() { return std::move(pts_); }

 private:
  double step_;
  Point2 pos_{};
  double heading_ = 0.0;
  std::vector<Point2> pts_;
};

struct Segment {
  enum Type { straight, arc, free_x, free_y } type;
  double a = 0.0;  // length or radius
  double b = 0.0;  // arc angle
};

// Lays out segments, solving the two free straights (one along x, one along
// y) so that the loop closes.
std::vector<Point2> close_layout(const std::vector<Segment>& segs, double step) {
  auto run = [&](double fx, double fy, double sample_step) {
    Turtle t(sample_step);
    for (const auto& s : segs) {
      switch (s.type) {
        case Segment::straight: t.straight(s.a); break;
        case Segment::arc: t.arc(s.a, s.b); break;
        case Segment::free_x: t.straight(fx); break;
        case Segment::free_y: t.straight(fy); break;
      }
    }
    return t;
  };
  // Free straights must head along +-x / +-y; measure their effect by probing.
  const Turtle base = run(0.0, 0.0, 1.0);
  const Turtle px = run(1.0, 0.0, 1.0);
  const Turtle py = run(0.0, 1.0, 1.0);
  const Point2 e = base.position();
  const Point2 ux = px.position() - e;
  const Point2 uy = py.position() - e;
  // Solve e + fx*ux + fy*uy = 0.
  const double det = cross(ux, uy);
  if (std::abs(det) < 1e-9) throw GeometryError("track layout closure is degenerate");
  const double fx = cross(uy, e) / det;
  const double fy = cross(e, ux) / det;
  if (fx < 0.0 || fy < 0.0) throw GeometryError("track layout cannot close with positive straights");
  Turtle final_turtle = run(fx, fy, step);
  if (norm(final_turtle.position()) > 1e-6 ||
      std::abs(wrap_angle(final_turtle.heading())) > 1e-9) {
    throw GeometryError("track layout does not close");
  }
  return final_turtle.take();
}

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    std::ostringstream msg;
    msg << name << " must be positive, got " << v;
    throw GeometryError(msg.str());
  }
}

double half_width_checked(double width) {
  require_positive(width, "width");
  if (width / 2.0 < TrackGeometry::kMinWidth) {
    std::ostringstream msg;
    msg << "width must be at least " << 2.0 * TrackGeometry::kMinWidth << " m, got " << width;
    throw GeometryError(msg.str());
  }
  return width / 2.0;
}

TrackGeometry constant_width(std::vector<Point2> pts, double half, std::string name) {
  std::vector<double> w(pts.size(), half);
  return TrackGeometry(std::move(pts), w, w, std::move(name));
}

}  // namespace

TrackGeometry generate_track(TrackKind kind, const TrackParams& params) {
  require_positive(params.spacing, "spacing");
  constexpr double kDenseStep = 0.01;
  switch (kind) {
    case TrackKind::circle: {
      require_positive(params.radius, "radius");
      const double half = half_width_checked(params.width.value_or(4.0));
      if (half >= params.radius) throw GeometryError("width must be smaller than the circle diameter");
      const auto count = static_cast<std::size_t>(std::ceil(2.0 * kPi * params.radius / params.spacing));
      std::vector<Point2> pts(count);
      for (std::size_t k = 0; k < count; ++k) {
        const double phi = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(count);
        pts[k] = {params.radius * std::cos(phi), params.radius * std::sin(phi)};
      }
      return constant_width(std::move(pts), half, "circle");
    }
    case TrackKind::square: {
      require_positive(params.side, "side");
      require_positive(params.corner_radius, "corner_radius");
      const double half = half_width_checked(params.width.value_or(4.0));
      const double straight = params.side - 2.0 * params.corner_radius;
      if (straight < 0.0) throw GeometryError("corner_radius must not exceed half the side length");
      if (half >= params.corner_radius + straight / 2.0) {
        throw GeometryError("width too large for the square side");
      }
      Turtle t(kDenseStep);
      t.straight(straight / 2.0);
      for (int c = 0; c < 3; ++c) {
        t.arc(params.corner_radius, kPi / 2.0);
        t.straight(straight);
      }
      t.arc(params.corner_radius, kPi / 2.0);
      t.straight(straight / 2.0);
      auto pts = t.take();
      for (auto& p : pts) p.y -= params.side / 2.0;
      return resample_by_arclength(constant_width(std::move(pts), half, "square"), params.spacing);
    }
    case TrackKind::f_shape: {
      const double half = half_width_checked(params.width.value_or(3.0));
      constexpr double r = 2.5;   // 90 degree corners
      constexpr double rh = 1.8;  // hairpins at the arm tips
      constexpr double pi2 = kPi / 2.0;
      const std::vector<Segment> layout = {
          {Segment::free_x},        {Segment::arc, r, pi2},  {Segment::straight, 4.0},
          {Segment::arc, r, -pi2},  {Segment::straight, 8.0}, {Segment::arc, rh, kPi},
          {Segment::straight, 8.0}, {Segment::arc, r, -pi2}, {Segment::straight, 3.0},
          {Segment::arc, r, -pi2},  {Segment::straight, 14.0}, {Segment::arc, rh, kPi},
          {Segment::straight, 23.0}, {Segment::arc, r, pi2},  {Segment::free_y},
          {Segment::arc, r, pi2},
      };
      auto pts = close_layout(layout, kDenseStep);
      return resample_by_arclength(constant_width(std::move(pts), half, "f_shape"), params.spacing);
    }
    case TrackKind::training_loop: {
      constexpr double pi2 = kPi / 2.0;
      const std::vector<Segment> layout = {
          {Segment::free_x},          {Segment::arc, 12.0, pi2},   {Segment::straight, 45.0},
          {Segment::arc, 10.0, -0.7}, {Segment::arc, 10.0, 1.4},   {Segment::arc, 10.0, -0.7},
          {Segment::straight, 25.0},  {Segment::arc, 6.0, pi2},    {Segment::straight, 20.0},
          {Segment::arc, 3.0, -kPi},  {Segment::straight, 20.0},   {Segment::arc, 4.0, kPi},
          {Segment::straight, 50.0},  {Segment::arc, 8.0, pi2},    {Segment::free_y},
          {Segment::arc, 5.0, pi2},   {Segment::arc, 5.0, -pi2},   {Segment::straight, 15.0},
          {Segment::arc, 9.0, pi2},
      };
      auto pts = close_layout(layout, kDenseStep);
      TrackGeometry dense = [&] {
        if (params.width) return constant_width(std::move(pts), half_width_checked(*params.width), "training_loop");
        // Width varies smoothly between 3.5 m and 5 m along the lap.
        Polyline line(pts, true);
        std::vector<double> w(pts.size());
        const auto& cum = line.cum_arclength();
        for (std::size_t i = 0; i < pts.size() && i < cum.size(); ++i) {
          w[i] = 0.5 * (4.25 + 0.75 * std::cos(2.0 * kPi * 3.0 * cum[i] / line.length()));
        }
        w.resize(line.size());
        std::vector<Point2> kept(line.points());
        return TrackGeometry(std::move(kept), w, w, "training_loop");
      }();
      return resample_by_arclength(dense, params.spacing);
    }
  }
  throw GeometryError("unknown track kind");
}

// ---------------------------------------------------------------------------
// CSV I/O

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string_view rest(line);
  while (true) {
    const auto pos = rest.find(',');
    out.push_back(trim(rest.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    rest.remove_prefix(pos + 1);
  }
  return out;
}

double parse_number(const std::string& field, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError("row " + std::to_string(row) + ": invalid number '" + field + "' in column " + column);
  }
  return v;
}

// Reads a headed CSV and returns the requested columns in order.
std::vector<std::vector<double>> read_columns(const std::filesystem::path& path,
                                              const std::vector<std::string>& wanted) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw ParseError(path.string() + ": missing header");
  if (!header.empty() && header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
    header[0] = header[0].substr(3);
  }
  std::vector<std::size_t> index;
  for (const auto& name : wanted) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(path.string() + ": missing column " + name + " in header");
    index.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<std::vector<double>> cols(wanted.size());
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < wanted.size(); ++c) {
      cols[c].push_back(parse_number(fields[index[c]], row, wanted[c]));
    }
  }
  return cols;
}

double median_spacing(const std::vector<Point2>& pts) {
  std::vector<double> d;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) d.push_back(norm(pts[i + 1] - pts[i]));
  if (d.empty()) return 0.0;
  std::nth_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

// A closing gap far larger than the typical spacing means the file holds an
// open polyline.
bool looks_closed(const std::vector<Point2>& pts) {
  const double gap = norm(pts.back() - pts.front());
  return gap <= std::max(10.0 * median_spacing(pts), 0.5);
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

}  // namespace

TrackGeometry load_track(const std::filesystem::path& path) {
  const auto cols = read_columns(path, {"x_m", "y_m", "w_tr_left_m", "w_tr_right_m"});
  if (cols[0].empty()) throw ParseError(path.string() + ": empty track");
  std::vector<Point2> pts(cols[0].size());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {cols[0][i], cols[1][i]};
  if (pts.size() >= 3 && !looks_closed(pts)) {
    throw GeometryError(path.string() + ": open polyline (closing gap far exceeds the vertex spacing)");
  }
  TrackGeometry track(std::move(pts), cols[2], cols[3], path.stem().string());
  if (track.centerline().max_segment_length() > 0.25) track = resample_by_arclength(track, 0.1);
  return track;
}

void save_track(const TrackGeometry& track, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "x_m,y_m,w_tr_left_m,w_tr_right_m\n";
  const auto& pts = track.points();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out << pts[i].x << ',' << pts[i].y << ',' << track.width_left()[i] << ',' << track.width_right()[i] << '\n';
  }
}

ReferenceTrajectory load_trajectory(const std::filesystem::path& path) {
  const auto cols = read_columns(path, {"s_m", "x_m", "y_m"});
  if (cols[0].size() < 2) throw ParseError(path.string() + ": empty trajectory");
  for (std::size_t i = 1; i < cols[0].size(); ++i) {
    if (!(cols[0][i] > cols[0][i - 1])) {
      throw ParseError("row " + std::to_string(i + 2) + ": s_m must be strictly increasing");
    }
  }
  std::vector<Point2> pts(cols[0].size());
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {cols[1][i], cols[2][i]};
  const bool closed = pts.size() >= 3 && looks_closed(pts);
  return ReferenceTrajectory(std::move(pts), closed);
}

void save_trajectory(const ReferenceTrajectory& traj, const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "s_m,x_m,y_m\n";
  const auto& pts = traj.points();
  const auto& cum = traj.cum_arclength();
  for (std::size_t i = 0; i < pts.size(); ++i) out << cum[i] << ',' << pts[i].x << ',' << pts[i].y << '\n';
}

}  // namespace racebench
