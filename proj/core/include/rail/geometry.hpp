#pragma once

// Rigid 6D transforms and the geometric primitives the model can test for
// spatial overlap. Everything here is a pure function over values.

#include <array>
#include <cmath>
#include <span>
#include <variant>

#include <nlohmann/json_fwd.hpp>

namespace rail::geo {

/// Tolerance used for every geometric equality assertion.
inline constexpr double kTolerance = 1e-9;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
};

/// Unit quaternion (w, x, y, z). Construction normalizes and folds the double
/// cover onto w >= 0 (ties at w == 0 resolved by the first non-zero of x, y, z
/// being positive), so equal rotations compare equal componentwise.
class Rotation {
 public:
  Rotation() = default;
  /// Throws rail::Error(InvalidArgument) for a zero or non-finite quaternion.
  Rotation(double w, double x, double y, double z);

  static Rotation identity() { return {}; }
  static Rotation from_axis_angle(const Vec3& axis, double radians);
  /// Row-major 3x3 rotation block. Throws InvalidTransform unless the matrix
  /// is orthonormal within `tol` with determinant +1.
  static Rotation from_matrix(std::span<const double, 9> m, double tol = 1e-6);

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  double norm() const { return std::sqrt(w_ * w_ + x_ * x_ + y_ * y_ + z_ * z_); }

  Vec3 rotate(const Vec3& v) const;
  Rotation conjugate() const { return Rotation(w_, -x_, -y_, -z_); }
  Rotation operator*(const Rotation& o) const;
  std::array<double, 9> matrix() const;

  friend bool operator==(const Rotation&, const Rotation&) = default;

 private:
  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

/// Rigid transform mapping child-frame coordinates into the parent frame:
/// p_parent = R * p_child + t.
struct Pose6D {
  Vec3 t;
  Rotation q;

  static Pose6D identity() { return {}; }
  static Pose6D translation(double x, double y, double z) { return {{x, y, z}, {}}; }
  static Pose6D rotation(const Rotation& r) { return {{}, r}; }
  /// Row-major 4x4 homogeneous matrix; bottom row must be (0,0,0,1).
  static Pose6D from_matrix(std::span<const double, 16> m, double tol = 1e-6);

  friend bool operator==(const Pose6D&, const Pose6D&) = default;
};

/// a∘b: apply b, then a.
Pose6D compose(const Pose6D& a, const Pose6D& b);
Pose6D invert(const Pose6D& a);
Vec3 transform_point(const Pose6D& pose, const Vec3& p);

/// Max componentwise difference over translation and quaternion.
double max_abs_difference(const Pose6D& a, const Pose6D& b);
bool approx_equal(const Pose6D& a, const Pose6D& b, double tol = kTolerance);

struct PointShape {
  friend bool operator==(const PointShape&, const PointShape&) = default;
};
struct SphereShape {
  double radius = 0.0;
  friend bool operator==(const SphereShape&, const SphereShape&) = default;
};
/// Axis-aligned in the owning object's frame.
struct BoxShape {
  Vec3 half_extents;
  friend bool operator==(const BoxShape&, const BoxShape&) = default;
};

class GeometryPrimitive {
 public:
  using Shape = std::variant<PointShape, SphereShape, BoxShape>;

  GeometryPrimitive() = default;
  static GeometryPrimitive point() { return GeometryPrimitive(PointShape{}); }
  /// Throws InvalidArgument unless radius > 0.
  static GeometryPrimitive sphere(double radius);
  /// Throws InvalidArgument unless every half extent > 0.
  static GeometryPrimitive box(const Vec3& half_extents);

  const Shape& shape() const { return shape_; }
  friend bool operator==(const GeometryPrimitive&, const GeometryPrimitive&) = default;

 private:
  explicit GeometryPrimitive(Shape s) : shape_(s) {}
  Shape shape_ = PointShape{};
};

/// Euclidean distance from `p` to the primitive placed at `prim_pose`
/// (0 when p lies inside or on it). All inputs share one reference frame.
double distance_to_primitive(const GeometryPrimitive& prim, const Pose6D& prim_pose, const Vec3& p);

/// True iff the placed primitive intersects the closed ball (center, radius).
bool intersects_sphere(const GeometryPrimitive& prim, const Pose6D& prim_pose, const Vec3& center,
                       double radius);

// JSON forms: pose {"t":[x,y,z],"q":[w,x,y,z]}; geometry {"type":"point"} |
// {"type":"sphere","radius":r} | {"type":"box","half_extents":[x,y,z]}.
void to_json(nlohmann::json& j, const Vec3& v);
void from_json(const nlohmann::json& j, Vec3& v);
void to_json(nlohmann::json& j, const Pose6D& p);
void from_json(const nlohmann::json& j, Pose6D& p);
void to_json(nlohmann::json& j, const GeometryPrimitive& g);
void from_json(const nlohmann::json& j, GeometryPrimitive& g);

}  // namespace rail::geo
