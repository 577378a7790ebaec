#include "rail/geometry.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail::geo {

Rotation::Rotation(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!std::isfinite(n) || n == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "quaternion must be finite and non-zero");
  }
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  bool flip = w < 0.0;
  if (w == 0.0) {
    flip = x < 0.0 || (x == 0.0 && (y < 0.0 || (y == 0.0 && z < 0.0)));
  }
  if (flip) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  // -0.0 would break componentwise equality with +0.0 under defaulted ==
  w_ = w + 0.0;
  x_ = x + 0.0;
  y_ = y + 0.0;
  z_ = z + 0.0;
}

Rotation Rotation::from_axis_angle(const Vec3& axis, double radians) {
  const double n = axis.norm();
  if (!std::isfinite(n) || n == 0.0) {
    throw Error(ErrorCode::InvalidArgument, "rotation axis must be non-zero");
  }
  const double s = std::sin(radians / 2.0) / n;
  return Rotation(std::cos(radians / 2.0), axis.x * s, axis.y * s, axis.z * s);
}

Rotation Rotation::from_matrix(std::span<const double, 9> m, double tol) {
  for (double v : m) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidTransform, "non-finite matrix entry");
  }
  // R^T R == I
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += m[k * 3 + i] * m[k * 3 + j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) {
        throw Error(ErrorCode::InvalidTransform, "rotation block is not orthonormal");
      }
    }
  }
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  if (std::abs(det - 1.0) > tol) {
    throw Error(ErrorCode::InvalidTransform, "rotation block has determinant != +1");
  }
  // Shepperd: pick the largest diagonal term for numerical stability.
  const double trace = m[0] + m[4] + m[8];
  if (trace > 0.0) {
    const double s = std::sqrt(trace + 1.0) * 2.0;
    return Rotation(0.25 * s, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s);
  }
  if (m[0] > m[4] && m[0] > m[8]) {
    const double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2.0;
    return Rotation((m[7] - m[5]) / s, 0.25 * s, (m[1] + m[3]) / s, (m[2] + m[6]) / s);
  }
  if (m[4] > m[8]) {
    const double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2.0;
    return Rotation((m[2] - m[6]) / s, (m[1] + m[3]) / s, 0.25 * s, (m[5] + m[7]) / s);
  }
  const double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2.0;
  return Rotation((m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, 0.25 * s);
}

Vec3 Rotation::rotate(const Vec3& v) const {
  // v' = v + 2w(u×v) + 2u×(u×v), u = vector part
  const Vec3 u{x_, y_, z_};
  const Vec3 uv = u.cross(v);
  const Vec3 uuv = u.cross(uv);
  return v + (2.0 * w_) * uv + 2.0 * uuv;
}

Rotation Rotation::operator*(const Rotation& o) const {
  return Rotation(w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
                  w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
                  w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
                  w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_);
}

std::array<double, 9> Rotation::matrix() const {
  const double ww = w_ * w_, xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
  const double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
  const double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
  return {ww + xx - yy - zz, 2 * (xy - wz),     2 * (xz + wy),
          2 * (xy + wz),     ww - xx + yy - zz, 2 * (yz - wx),
          2 * (xz - wy),     2 * (yz + wx),     ww - xx - yy + zz};
}

Pose6D Pose6D::from_matrix(std::span<const double, 16> m, double tol) {
  if (std::abs(m[12]) > tol || std::abs(m[13]) > tol || std::abs(m[14]) > tol ||
      std::abs(m[15] - 1.0) > tol) {
    throw Error(ErrorCode::InvalidTransform, "homogeneous bottom row must be (0,0,0,1)");
  }
  const std::array<double, 9> r{m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]};
  if (!std::isfinite(m[3]) || !std::isfinite(m[7]) || !std::isfinite(m[11])) {
    throw Error(ErrorCode::InvalidTransform, "non-finite translation");
  }
  return {{m[3], m[7], m[11]}, Rotation::from_matrix(r, tol)};
}

Pose6D compose(const Pose6D& a, const Pose6D& b) {
  return {a.t + a.q.rotate(b.t), a.q * b.q};
}

Pose6D invert(const Pose6D& a) {
  const Rotation inv = a.q.conjugate();
  return {-inv.rotate(a.t), inv};
}

Vec3 transform_point(const Pose6D& pose, const Vec3& p) { return pose.q.rotate(p) + pose.t; }

double max_abs_difference(const Pose6D& a, const Pose6D& b) {
  return std::max({std::abs(a.t.x - b.t.x), std::abs(a.t.y - b.t.y), std::abs(a.t.z - b.t.z),
                   std::abs(a.q.w() - b.q.w()), std::abs(a.q.x() - b.q.x()),
                   std::abs(a.q.y() - b.q.y()), std::abs(a.q.z() - b.q.z())});
}

bool approx_equal(const Pose6D& a, const Pose6D& b, double tol) {
  return max_abs_difference(a, b) <= tol;
}

GeometryPrimitive GeometryPrimitive::sphere(double radius) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw Error(ErrorCode::InvalidArgument, "sphere radius must be > 0");
  }
  return GeometryPrimitive(SphereShape{radius});
}

GeometryPrimitive GeometryPrimitive::box(const Vec3& h) {
  if (!(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) || !std::isfinite(h.x + h.y + h.z)) {
    throw Error(ErrorCode::InvalidArgument, "box half extents must be > 0");
  }
  return GeometryPrimitive(BoxShape{h});
}

namespace {

struct DistanceVisitor {
  const Pose6D& pose;
  const Vec3& p;

  double operator()(const PointShape&) const { return (p - pose.t).norm(); }
  double operator()(const SphereShape& s) const {
    return std::max(0.0, (p - pose.t).norm() - s.radius);
  }
  double operator()(const BoxShape& b) const {
    const Vec3 local = transform_point(invert(pose), p);
    const Vec3 closest{std::clamp(local.x, -b.half_extents.x, b.half_extents.x),
                       std::clamp(local.y, -b.half_extents.y, b.half_extents.y),
                       std::clamp(local.z, -b.half_extents.z, b.half_extents.z)};
    return (local - closest).norm();
  }
};

}  // namespace

double distance_to_primitive(const GeometryPrimitive& prim, const Pose6D& prim_pose, const Vec3& p) {
  return std::visit(DistanceVisitor{prim_pose, p}, prim.shape());
}

bool intersects_sphere(const GeometryPrimitive& prim, const Pose6D& prim_pose, const Vec3& center,
                       double radius) {
  if (std::holds_alternative<SphereShape>(prim.shape())) {
    // Compare centre distance against the summed radii directly rather than
    // subtracting first, so the boundary case stays exact.
    const double r = std::get<SphereShape>(prim.shape()).radius;
    return (center - prim_pose.t).norm() <= radius + r;
  }
  return distance_to_primitive(prim, prim_pose, center) <= radius;
}

void to_json(nlohmann::json& j, const Vec3& v) { j = nlohmann::json::array({v.x, v.y, v.z}); }

void from_json(const nlohmann::json& j, Vec3& v) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() ||
      !j[2].is_number()) {
    throw Error(ErrorCode::InvalidArgument, "expected [x,y,z] number triple");
  }
  v = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z)) {
    throw Error(ErrorCode::InvalidArgument, "non-finite vector component");
  }
}

void to_json(nlohmann::json& j, const Pose6D& p) {
  j = nlohmann::json{{"t", p.t}, {"q", {p.q.w(), p.q.x(), p.q.y(), p.q.z()}}};
}

void from_json(const nlohmann::json& j, Pose6D& p) {
  if (!j.is_object() || !j.contains("t") || !j.contains("q")) {
    throw Error(ErrorCode::InvalidArgument, "pose requires \"t\" and \"q\"");
  }
  const auto& q = j.at("q");
  if (!q.is_array() || q.size() != 4) {
    throw Error(ErrorCode::InvalidArgument, "pose \"q\" must be [w,x,y,z]");
  }
  for (const auto& c : q) {
    if (!c.is_number()) throw Error(ErrorCode::InvalidArgument, "pose \"q\" must be numeric");
  }
  p.t = j.at("t").get<Vec3>();
  p.q = Rotation(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
}

void to_json(nlohmann::json& j, const GeometryPrimitive& g) {
  std::visit(
      [&j](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PointShape>) {
          j = nlohmann::json{{"type", "point"}};
        } else if constexpr (std::is_same_v<T, SphereShape>) {
          j = nlohmann::json{{"type", "sphere"}, {"radius", s.radius}};
        } else {
          j = nlohmann::json{{"type", "box"}, {"half_extents", s.half_extents}};
        }
      },
      g.shape());
}

void from_json(const nlohmann::json& j, GeometryPrimitive& g) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw Error(ErrorCode::InvalidArgument, "geometry requires a \"type\"");
  }
  const auto type = j.at("type").get<std::string>();
  if (type == "point") {
    g = GeometryPrimitive::point();
  } else if (type == "sphere") {
    if (!j.contains("radius") || !j.at("radius").is_number()) {
      throw Error(ErrorCode::InvalidArgument, "sphere requires numeric \"radius\"");
    }
    g = GeometryPrimitive::sphere(j.at("radius").get<double>());
  } else if (type == "box") {
    if (!j.contains("half_extents")) {
      throw Error(ErrorCode::InvalidArgument, "box requires \"half_extents\"");
    }
    g = GeometryPrimitive::box(j.at("half_extents").get<Vec3>());
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown geometry type: " + type);
  }
}

}  // namespace rail::geo
