#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "json.hpp"

namespace aims {

constexpr int kNumJoints = 24;
constexpr int kNumShapeCoeffs = 10;
constexpr int kPoseDim = 3 * kNumJoints;  // 72

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Axis-angle rotations, one 3-vector per joint. Entry 0 (pelvis) is the
// global root orientation.
struct PoseParams {
  std::array<Eigen::Vector3d, kNumJoints> joint_rotations;

  PoseParams() {
    for (auto& r : joint_rotations) r.setZero();
  }
  Eigen::VectorXd to_vector() const;
  static PoseParams from_vector(const Eigen::VectorXd& v);
  bool is_finite() const;
  double squared_norm() const;
};

struct ShapeParams {
  Eigen::VectorXd beta;  // unitless, default size kNumShapeCoeffs

  ShapeParams() : beta(Eigen::VectorXd::Zero(kNumShapeCoeffs)) {}
  explicit ShapeParams(Eigen::VectorXd b) : beta(std::move(b)) {}
  bool is_finite() const { return beta.allFinite(); }
};

// 3D joint positions in meters, world coordinates, template joint order.
struct JointSet3D {
  std::array<Eigen::Vector3d, kNumJoints> positions;

  JointSet3D() {
    for (auto& p : positions) p.setZero();
  }
  bool is_finite() const;
  nlohmann::json to_json() const;  // 24x3 array, row = joint index
  static JointSet3D from_json(const nlohmann::json& j);
};

// 24-joint kinematic tree standing in for a statistical infant body model:
// rest offsets per joint (meters, relative to parent) plus a linear shape
// basis of per-bone deltas. parent_index encodes a single rooted tree with
// pelvis as root; joints are listed in topological order (parent before
// child).
struct SkeletonTemplate {
  std::array<std::string, kNumJoints> joint_names;
  std::array<int, kNumJoints> parent_index;                 // -1 at the root
  std::array<Eigen::Vector3d, kNumJoints> rest_offsets;     // meters
  std::vector<std::array<Eigen::Vector3d, kNumJoints>> shape_basis;

  int pelvis = 0;
  int nose = 0;

  void validate() const;
  int num_shape_coeffs() const { return static_cast<int>(shape_basis.size()); }

  // Hand-authored infant-proportioned template, ~0.65 m rest height, with a
  // fixed seeded shape basis (per-bone length deltas <= 5% per unit beta).
  static const SkeletonTemplate& infant();

  nlohmann::json to_json() const;
  static SkeletonTemplate from_json(const nlohmann::json& j);
  static SkeletonTemplate load(const std::string& path);
};

// Canonical joint indices of the built-in template.
namespace joints {
enum : int {
  kPelvis = 0, kSpine1, kSpine2, kChest, kNeck, kHead, kNose, kHeadTop,
  kLeftHip, kLeftKnee, kLeftAnkle, kLeftFoot,
  kRightHip, kRightKnee, kRightAnkle, kRightFoot,
  kLeftCollar, kLeftShoulder, kLeftElbow, kLeftWrist,
  kRightCollar, kRightShoulder, kRightElbow, kRightWrist,
};
}

// Rodrigues rotation from an axis-angle vector.
Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle);

// Rotation plus its partial derivatives w.r.t. the three axis-angle
// components (Gallego-Yezzi closed form, Taylor fallback near zero).
void rodrigues_with_partials(const Eigen::Vector3d& axis_angle,
                             Eigen::Matrix3d& rotation,
                             std::array<Eigen::Matrix3d, 3>& partials);

// Axis-angle (magnitude <= pi) from a rotation matrix.
Eigen::Vector3d axis_angle_from_matrix(const Eigen::Matrix3d& rotation);

// Per-joint axis-angle clipped to magnitude pi (projection onto the ball).
Eigen::Vector3d clip_axis_angle(const Eigen::Vector3d& axis_angle);

// Joint positions from pose/shape: each joint sits at its parent's position
// plus the ancestor-accumulated rotation applied to the shaped rest offset.
JointSet3D forward_kinematics(const SkeletonTemplate& tmpl,
                              const PoseParams& pose, const ShapeParams& shape,
                              const RigidTransform& root = RigidTransform{});

// Nose-pelvis normalization: pelvis moved to the origin, scaled so the nose
// sits at unit distance. Rejects inputs with nose-pelvis distance <= 1e-6 m.
JointSet3D normalize(const JointSet3D& joints, int nose_index = joints::kNose,
                     int pelvis_index = joints::kPelvis);

}  // namespace aims
