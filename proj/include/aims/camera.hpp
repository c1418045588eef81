#pragma once

#include <array>

#include <Eigen/Core>

#include "aims/rng.hpp"
#include "aims/skeleton.hpp"
#include "json.hpp"

namespace aims {

// Pinhole camera: intrinsics K (zero skew, positive focals) and world-to-
// camera extrinsics [R|T].
struct CameraParams {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d T = Eigen::Vector3d::Zero();

  Eigen::Vector3d to_camera(const Eigen::Vector3d& x_world) const {
    return R * x_world + T;
  }
  void validate() const;
  nlohmann::json to_json() const;
  static CameraParams from_json(const nlohmann::json& j);
};

struct KeypointSet2D {
  std::array<Eigen::Vector2d, kNumJoints> points;  // pixels
  std::array<bool, kNumJoints> visibility;

  KeypointSet2D() {
    for (auto& p : points) p.setZero();
    visibility.fill(true);
  }
  nlohmann::json to_json() const;
  static KeypointSet2D from_json(const nlohmann::json& j);
};

// Sampling ranges for randomized cameras that orbit and look at the pelvis.
// Pitch is elevation above the floor plane; roll spins about the optical axis.
struct CameraRanges {
  std::array<double, 2> yaw{-3.141592653589793, 3.141592653589793};
  std::array<double, 2> pitch{0.4, 1.15};
  std::array<double, 2> roll{-0.25, 0.25};
  std::array<double, 2> distance{1.3, 2.2};  // meters
  double focal_px = 500.0;
  double cx = 320.0;
  double cy = 240.0;

  void validate() const;
  nlohmann::json to_json() const;
  static CameraRanges from_json(const nlohmann::json& j);
};

// Perspective projection of all 24 joints with the homogeneous divide.
// Every joint must have camera-frame depth > 1e-6 m; a violation is rejected
// naming the joint. All joints are marked visible (occlusion not modeled).
KeypointSet2D project(const JointSet3D& joints, const CameraParams& cam);

// Single-point projection used by the fitter.
Eigen::Vector2d project_point(const Eigen::Vector3d& x_world,
                              const CameraParams& cam);

// d(pixel)/d(world point), a 2x3 Jacobian. Depth must be positive.
Eigen::Matrix<double, 2, 3> project_point_jacobian(const Eigen::Vector3d& x_world,
                                                   const CameraParams& cam);

// Uniformly sampled yaw/pitch/roll/distance within the configured ranges;
// the camera is positioned on that orbit and oriented to look at `look_at`.
CameraParams sample_camera(Rng& rng, const CameraRanges& ranges,
                           const Eigen::Vector3d& look_at = Eigen::Vector3d::Zero());

}  // namespace aims
