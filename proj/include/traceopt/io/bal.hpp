#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "traceopt/errors.hpp"
#include "traceopt/lie.hpp"
#include "traceopt/problems.hpp"

namespace traceopt {

/// Camera record as distributed in BAL files: axis-angle rotation,
/// translation, focal length and two radial distortion coefficients. The
/// pose is the world-to-camera transform.
struct BalCamera {
  Vec3 rodrigues{Vec3::Zero()};
  Vec3 translation{Vec3::Zero()};
  double f = 0, k1 = 0, k2 = 0;

  PoseSE3 pose() const {
    return PoseSE3(se3_exp(Tangent6(Vec3::Zero(), rodrigues)).rotation, translation);
  }
  BalIntrinsics intrinsics() const { return BalIntrinsics{f, k1, k2}; }
};

struct BalProblem {
  std::vector<BalCamera> cameras;
  std::vector<Vec3> points;
  std::vector<Observation> observations;

  std::vector<PoseSE3> poses() const {
    std::vector<PoseSE3> out;
    out.reserve(cameras.size());
    for (const auto& c : cameras) out.push_back(c.pose());
    return out;
  }
  std::vector<CameraIntrinsics> intrinsics() const {
    std::vector<CameraIntrinsics> out;
    out.reserve(cameras.size());
    for (const auto& c : cameras) out.push_back(c.intrinsics());
    return out;
  }
};

namespace detail {

/// Whitespace-delimited token scanner that tracks line numbers for errors.
class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::size_t line() const { return line_; }

  bool next_token(std::string& token) {
    token.clear();
    int c;
    while ((c = in_.get()) != EOF) {
      if (c == '\n') ++line_;
      if (!std::isspace(c)) break;
    }
    if (c == EOF) return false;
    token.push_back(static_cast<char>(c));
    while ((c = in_.get()) != EOF && !std::isspace(static_cast<unsigned char>(c)))
      token.push_back(static_cast<char>(c));
    if (c == '\n') ++line_;
    return true;
  }

  double read_double(const char* what) {
    std::string t;
    if (!next_token(t)) throw ParseError(std::string("unexpected end of file reading ") + what, line_);
    double v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size())
      throw ParseError(std::string("malformed number '") + t + "' reading " + what, line_);
    return v;
  }

  std::int64_t read_int(const char* what) {
    std::string t;
    if (!next_token(t)) throw ParseError(std::string("unexpected end of file reading ") + what, line_);
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size())
      throw ParseError(std::string("malformed integer '") + t + "' reading " + what, line_);
    return v;
  }

 private:
  std::istream& in_;
  std::size_t line_ = 1;
};

}  // namespace detail

/// Parses the BAL text layout: a count header, one observation line per
/// measurement, then 9 scalars per camera and 3 per point. Memory stays
/// proportional to the observation count.
inline BalProblem parse_bal(std::istream& in) {
  detail::TokenReader r(in);
  const std::int64_t num_cameras = r.read_int("camera count");
  const std::int64_t num_points = r.read_int("point count");
  const std::int64_t num_observations = r.read_int("observation count");
  if (num_cameras < 1 || num_points < 1 || num_observations < 1)
    throw ParseError("non-positive counts in header", r.line());

  BalProblem p;
  p.observations.reserve(static_cast<std::size_t>(num_observations));
  for (std::int64_t i = 0; i < num_observations; ++i) {
    Observation o;
    const std::int64_t cam = r.read_int("camera index");
    const std::int64_t pt = r.read_int("point index");
    if (cam < 0 || cam >= num_cameras)
      throw ParseError("camera index out of range", r.line());
    if (pt < 0 || pt >= num_points) throw ParseError("point index out of range", r.line());
    o.camera_index = static_cast<std::int32_t>(cam);
    o.point_index = static_cast<std::int32_t>(pt);
    o.pixel.x() = r.read_double("pixel x");
    o.pixel.y() = r.read_double("pixel y");
    p.observations.push_back(o);
  }
  p.cameras.resize(static_cast<std::size_t>(num_cameras));
  for (auto& c : p.cameras) {
    for (int i = 0; i < 3; ++i) c.rodrigues[i] = r.read_double("camera rotation");
    for (int i = 0; i < 3; ++i) c.translation[i] = r.read_double("camera translation");
    c.f = r.read_double("focal length");
    c.k1 = r.read_double("k1");
    c.k2 = r.read_double("k2");
  }
  p.points.resize(static_cast<std::size_t>(num_points));
  for (auto& pt : p.points)
    for (int i = 0; i < 3; ++i) pt[i] = r.read_double("point coordinate");

  std::string extra;
  if (r.next_token(extra)) throw ParseError("trailing data after point list", r.line());
  return p;
}

/// Inverse of parse_bal, one scalar per line for the camera/point sections.
inline void serialize_bal(const BalProblem& p, std::ostream& out) {
  out.precision(17);
  out << p.cameras.size() << " " << p.points.size() << " " << p.observations.size() << "\n";
  for (const auto& o : p.observations)
    out << o.camera_index << " " << o.point_index << " " << o.pixel.x() << " " << o.pixel.y()
        << "\n";
  for (const auto& c : p.cameras) {
    for (int i = 0; i < 3; ++i) out << c.rodrigues[i] << "\n";
    for (int i = 0; i < 3; ++i) out << c.translation[i] << "\n";
    out << c.f << "\n" << c.k1 << "\n" << c.k2 << "\n";
  }
  for (const auto& pt : p.points)
    for (int i = 0; i < 3; ++i) out << pt[i] << "\n";
}

inline TracedProblem make_ba_problem(const BalProblem& p) {
  return make_ba_problem(p.poses(), p.points, p.intrinsics(), p.observations);
}

}  // namespace traceopt
