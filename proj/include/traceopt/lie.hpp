#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace traceopt {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Rotation angle below which exp/log switch to 2-term Taylor series.
inline constexpr double kSmallAngle = 1e-8;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Unit quaternion (x, y, z, w). Always normalized, with w >= 0 so that the
/// two antipodal encodings of a rotation collapse to one canonical form.
class QuatRotation {
 public:
  QuatRotation() : x_(0), y_(0), z_(0), w_(1) {}

  /// Normalizes and canonicalizes arbitrary (finite, nonzero) components.
  QuatRotation(double x, double y, double z, double w) : x_(x), y_(y), z_(z), w_(w) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(w)) {
      throw std::invalid_argument("QuatRotation: non-finite component");
    }
    const double n = std::sqrt(x_ * x_ + y_ * y_ + z_ * z_ + w_ * w_);
    if (n == 0.0) throw std::invalid_argument("QuatRotation: zero quaternion");
    double inv = 1.0 / n;
    if (w_ < 0.0) inv = -inv;
    x_ *= inv;
    y_ *= inv;
    z_ *= inv;
    w_ *= inv;
  }

  static QuatRotation identity() { return QuatRotation(); }

  /// Adopts components that are already unit-norm and canonical (w >= 0),
  /// e.g. read back from pose storage this library wrote. No renormalization,
  /// so round-trips are bitwise.
  static QuatRotation from_unit(double x, double y, double z, double w) {
    QuatRotation q;
    q.x_ = x;
    q.y_ = y;
    q.z_ = z;
    q.w_ = w;
    return q;
  }

  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  double w() const { return w_; }

  Vec3 vec() const { return Vec3(x_, y_, z_); }

  Mat3 matrix() const {
    return Eigen::Quaterniond(w_, x_, y_, z_).toRotationMatrix();
  }

  QuatRotation conjugate() const {
    QuatRotation q;
    q.x_ = -x_;
    q.y_ = -y_;
    q.z_ = -z_;
    q.w_ = w_;
    return q;
  }

  /// Hamilton product, renormalized and canonicalized.
  QuatRotation operator*(const QuatRotation& r) const {
    const Eigen::Quaterniond p =
        Eigen::Quaterniond(w_, x_, y_, z_) * Eigen::Quaterniond(r.w_, r.x_, r.y_, r.z_);
    return QuatRotation(p.x(), p.y(), p.z(), p.w());
  }

  Vec3 rotate(const Vec3& p) const {
    // q p q* expanded via the double-cross identity.
    const Vec3 u(x_, y_, z_);
    const Vec3 t = 2.0 * u.cross(p);
    return p + w_ * t + u.cross(t);
  }

  double norm() const { return std::sqrt(x_ * x_ + y_ * y_ + z_ * z_ + w_ * w_); }

 private:
  double x_, y_, z_, w_;
};

/// Tangent increment of SE(3): translational part first, then rotational.
struct Tangent6 {
  Vec3 rho{Vec3::Zero()};
  Vec3 omega{Vec3::Zero()};

  Tangent6() = default;
  Tangent6(const Vec3& rho_in, const Vec3& omega_in) : rho(rho_in), omega(omega_in) {}
  explicit Tangent6(const Vec6& v) : rho(v.head<3>()), omega(v.tail<3>()) {}

  Vec6 vec() const {
    Vec6 v;
    v << rho, omega;
    return v;
  }

  bool is_finite() const { return rho.allFinite() && omega.allFinite(); }
};

/// Rigid-body pose: rotation + translation, 7 scalars of storage.
struct PoseSE3 {
  QuatRotation rotation;
  Vec3 translation{Vec3::Zero()};

  PoseSE3() = default;
  PoseSE3(const QuatRotation& r, const Vec3& t) : rotation(r), translation(t) {}

  static PoseSE3 identity() { return PoseSE3(); }

  /// 4x4 homogeneous matrix, mainly for oracles and debugging.
  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }
};

namespace detail {

// (1 - cos t)/t^2 and (t - sin t)/t^3 with their small-angle limits.
inline double one_minus_cos_over_t2(double t) {
  if (t < kSmallAngle) return 0.5 - t * t / 24.0;
  return (1.0 - std::cos(t)) / (t * t);
}

inline double t_minus_sin_over_t3(double t) {
  if (t < kSmallAngle) return 1.0 / 6.0 - t * t / 120.0;
  return (t - std::sin(t)) / (t * t * t);
}

// V(omega) maps the translational tangent to the group translation in exp.
inline Mat3 exp_translation_factor(const Vec3& omega, double theta) {
  const Mat3 o = skew(omega);
  return Mat3::Identity() + one_minus_cos_over_t2(theta) * o +
         t_minus_sin_over_t3(theta) * (o * o);
}

inline Mat3 log_translation_factor_inv(const Vec3& omega, double theta) {
  const Mat3 o = skew(omega);
  double c;
  if (theta < kSmallAngle) {
    c = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double half = 0.5 * theta;
    c = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  return Mat3::Identity() - 0.5 * o + c * (o * o);
}

}  // namespace detail

/// Exponential map of SE(3). Small rotation angles take a Taylor branch.
inline PoseSE3 se3_exp(const Tangent6& tau) {
  if (!tau.is_finite()) throw std::invalid_argument("se3_exp: non-finite tangent");
  const double theta = tau.omega.norm();
  double sin_half_over_theta;
  if (theta < kSmallAngle) {
    sin_half_over_theta = 0.5 - theta * theta / 48.0;
  } else {
    sin_half_over_theta = std::sin(0.5 * theta) / theta;
  }
  const Vec3 xyz = sin_half_over_theta * tau.omega;
  const QuatRotation q(xyz.x(), xyz.y(), xyz.z(), std::cos(0.5 * theta));
  const Vec3 t = detail::exp_translation_factor(tau.omega, theta) * tau.rho;
  return PoseSE3(q, t);
}

/// Logarithm map, inverse of se3_exp for rotation angles below pi.
inline Tangent6 se3_log(const PoseSE3& pose) {
  const QuatRotation& q = pose.rotation;
  const double s = q.vec().norm();  // sin(theta/2), w >= 0 so theta in [0, pi]
  const double theta = 2.0 * std::atan2(s, q.w());
  double k;
  if (s < kSmallAngle) {
    k = 2.0 + theta * theta / 12.0;
  } else {
    k = theta / s;
  }
  const Vec3 omega = k * q.vec();
  const Vec3 rho = detail::log_translation_factor_inv(omega, theta) * pose.translation;
  return Tangent6(rho, omega);
}

inline PoseSE3 se3_compose(const PoseSE3& a, const PoseSE3& b) {
  return PoseSE3(a.rotation * b.rotation,
                 a.rotation.rotate(b.translation) + a.translation);
}

inline PoseSE3 se3_inverse(const PoseSE3& a) {
  const QuatRotation rinv = a.rotation.conjugate();
  return PoseSE3(rinv, -rinv.rotate(a.translation));
}

inline Vec3 se3_act(const PoseSE3& pose, const Vec3& point) {
  return pose.rotation.rotate(point) + pose.translation;
}

/// Left-multiplicative retraction: Exp(delta) composed onto the pose.
inline PoseSE3 se3_retract(const PoseSE3& pose, const Tangent6& delta) {
  return se3_compose(se3_exp(delta), pose);
}

/// Adjoint of the pose for [rho | omega] tangent ordering.
inline Mat6 se3_adjoint(const PoseSE3& pose) {
  const Mat3 r = pose.rotation.matrix();
  Mat6 adj = Mat6::Zero();
  adj.topLeftCorner<3, 3>() = r;
  adj.bottomRightCorner<3, 3>() = r;
  adj.topRightCorner<3, 3>() = skew(pose.translation) * r;
  return adj;
}

/// Jacobians of se3_act: d(Exp(d) pose . point)/dd at d = 0 is [I | -skew(y)]
/// with y the transformed point; d/dpoint is the rotation matrix.
struct ActJacobian {
  Eigen::Matrix<double, 3, 6> d_pose;
  Mat3 d_point;
};

inline ActJacobian se3_act_jacobian(const PoseSE3& pose, const Vec3& point) {
  ActJacobian j;
  const Vec3 y = se3_act(pose, point);
  j.d_pose.leftCols<3>() = Mat3::Identity();
  j.d_pose.rightCols<3>() = -skew(y);
  j.d_point = pose.rotation.matrix();
  return j;
}

inline Mat3 so3_left_jacobian_inv(const Vec3& omega) {
  return detail::log_translation_factor_inv(omega, omega.norm());
}

namespace detail {

// Off-diagonal coupling block of the SE(3) left Jacobian (Barfoot's Q).
inline Mat3 se3_left_jacobian_q(const Tangent6& xi) {
  const Vec3& rho = xi.rho;
  const Vec3& omega = xi.omega;
  const double theta = omega.norm();
  const Mat3 rx = skew(rho);
  const Mat3 ox = skew(omega);
  const Mat3 oxrx = ox * rx;
  const Mat3 rxox = rx * ox;
  const Mat3 oxrxox = oxrx * ox;

  double c1, c2, c3;
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    c1 = 1.0 / 6.0 - t2 / 120.0;
    c2 = 1.0 / 24.0 - t2 / 720.0;
    c3 = -1.0 / 120.0 + t2 / 5040.0;
  } else {
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    const double st = std::sin(theta);
    const double ct = std::cos(theta);
    c1 = (theta - st) / t3;
    c2 = (1.0 - 0.5 * t2 - ct) / (t2 * t2);
    c3 = (theta - st - t3 / 6.0) / (t3 * t2);
  }
  Mat3 q = 0.5 * rx;
  q += c1 * (oxrx + rxox + oxrxox);
  q -= c2 * (ox * oxrx + rxox * ox - 3.0 * oxrxox);
  q -= 0.5 * (c2 - 3.0 * c3) * (oxrxox * ox + ox * oxrxox);
  return q;
}

}  // namespace detail

/// Inverse of the SE(3) left Jacobian: Log(Exp(eps) Exp(xi)) ~ xi + Jl_inv(xi) eps.
inline Mat6 se3_left_jacobian_inv(const Tangent6& xi) {
  const Mat3 jinv = so3_left_jacobian_inv(xi.omega);
  const Mat3 q = detail::se3_left_jacobian_q(xi);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = jinv;
  out.bottomRightCorner<3, 3>() = jinv;
  out.topRightCorner<3, 3>() = -jinv * q * jinv;
  return out;
}

}  // namespace traceopt
