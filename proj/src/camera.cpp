#include "aims/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace aims {

namespace {

constexpr double kMinDepth = 1e-6;

nlohmann::json matrix3_to_json(const Eigen::Matrix3d& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

Eigen::Matrix3d matrix3_from_json(const nlohmann::json& j) {
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
  return m;
}

}  // namespace

void CameraParams::validate() const {
  const Eigen::Matrix3d should_be_identity = R * R.transpose();
  if ((should_be_identity - Eigen::Matrix3d::Identity()).norm() > 1e-9 ||
      std::abs(R.determinant() - 1.0) > 1e-9)
    throw std::invalid_argument("camera: R must be a proper rotation");
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0) || K(1, 0) != 0.0 || K(2, 0) != 0.0 ||
      K(2, 1) != 0.0 || K(0, 1) != 0.0)
    throw std::invalid_argument(
        "camera: K must be upper-triangular with positive focal entries");
}

nlohmann::json CameraParams::to_json() const {
  return {{"K", matrix3_to_json(K)},
          {"R", matrix3_to_json(R)},
          {"T", {T.x(), T.y(), T.z()}}};
}

CameraParams CameraParams::from_json(const nlohmann::json& j) {
  CameraParams c;
  c.K = matrix3_from_json(j.at("K"));
  c.R = matrix3_from_json(j.at("R"));
  c.T = Eigen::Vector3d(j.at("T").at(0).get<double>(), j.at("T").at(1).get<double>(),
                        j.at("T").at(2).get<double>());
  c.validate();
  return c;
}

nlohmann::json KeypointSet2D::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({p.x(), p.y()});
  nlohmann::json vis = nlohmann::json::array();
  for (bool v : visibility) vis.push_back(v ? 1 : 0);
  return {{"points", pts}, {"visibility", vis}};
}

KeypointSet2D KeypointSet2D::from_json(const nlohmann::json& j) {
  KeypointSet2D out;
  const auto& pts = j.at("points");
  if (pts.size() != kNumJoints)
    throw std::invalid_argument("keypoints2d: expected 24 points");
  for (int i = 0; i < kNumJoints; ++i)
    out.points[i] = Eigen::Vector2d(pts.at(i).at(0).get<double>(),
                                    pts.at(i).at(1).get<double>());
  if (j.contains("visibility"))
    for (int i = 0; i < kNumJoints; ++i)
      out.visibility[i] = j.at("visibility").at(i).get<int>() != 0;
  return out;
}

void CameraRanges::validate() const {
  auto check = [](const std::array<double, 2>& r, const char* name) {
    if (!(r[0] <= r[1]))
      throw std::invalid_argument(std::string("camera ranges: empty ") + name +
                                  " range");
  };
  check(yaw, "yaw");
  check(pitch, "pitch");
  check(roll, "roll");
  check(distance, "distance");
  if (!(distance[0] > 0.0))
    throw std::invalid_argument("camera ranges: distance must be > 0");
  if (std::abs(pitch[0]) >= 1.45 || std::abs(pitch[1]) >= 1.45)
    throw std::invalid_argument("camera ranges: |pitch| must stay below 1.45 rad");
  if (!(focal_px > 0.0))
    throw std::invalid_argument("camera ranges: focal must be > 0");
}

nlohmann::json CameraRanges::to_json() const {
  return {{"yaw", yaw},           {"pitch", pitch}, {"roll", roll},
          {"distance", distance}, {"focal_px", focal_px},
          {"cx", cx},             {"cy", cy}};
}

CameraRanges CameraRanges::from_json(const nlohmann::json& j) {
  CameraRanges r;
  auto range = [&j](const char* key, std::array<double, 2>& out) {
    if (j.contains(key)) {
      out[0] = j.at(key).at(0).get<double>();
      out[1] = j.at(key).at(1).get<double>();
    }
  };
  range("yaw", r.yaw);
  range("pitch", r.pitch);
  range("roll", r.roll);
  range("distance", r.distance);
  if (j.contains("focal_px")) r.focal_px = j.at("focal_px").get<double>();
  if (j.contains("cx")) r.cx = j.at("cx").get<double>();
  if (j.contains("cy")) r.cy = j.at("cy").get<double>();
  r.validate();
  return r;
}

Eigen::Vector2d project_point(const Eigen::Vector3d& x_world,
                              const CameraParams& cam) {
  const Eigen::Vector3d x_cam = cam.to_camera(x_world);
  if (!(x_cam.z() > kMinDepth))
    throw std::invalid_argument("project: non-positive depth " +
                                std::to_string(x_cam.z()));
  const Eigen::Vector3d p = cam.K * x_cam;
  return {p.x() / p.z(), p.y() / p.z()};
}

Eigen::Matrix<double, 2, 3> project_point_jacobian(const Eigen::Vector3d& x_world,
                                                   const CameraParams& cam) {
  const Eigen::Vector3d x_cam = cam.to_camera(x_world);
  if (!(x_cam.z() > kMinDepth))
    throw std::invalid_argument("project: non-positive depth " +
                                std::to_string(x_cam.z()));
  const double fx = cam.K(0, 0), fy = cam.K(1, 1);
  const double z = x_cam.z(), inv_z = 1.0 / z;
  Eigen::Matrix<double, 2, 3> d_pixel_d_cam;
  d_pixel_d_cam << fx * inv_z, 0.0, -fx * x_cam.x() * inv_z * inv_z,
      0.0, fy * inv_z, -fy * x_cam.y() * inv_z * inv_z;
  return d_pixel_d_cam * cam.R;
}

KeypointSet2D project(const JointSet3D& joints, const CameraParams& cam) {
  KeypointSet2D out;
  for (int i = 0; i < kNumJoints; ++i) {
    const Eigen::Vector3d x_cam = cam.to_camera(joints.positions[i]);
    if (!(x_cam.z() > kMinDepth)) {
      const auto& names = SkeletonTemplate::infant().joint_names;
      throw std::invalid_argument("project: joint " + std::to_string(i) + " (" +
                                  names[i] + ") has depth " +
                                  std::to_string(x_cam.z()) + " <= 1e-6 m");
    }
    const Eigen::Vector3d p = cam.K * x_cam;
    out.points[i] = Eigen::Vector2d(p.x() / p.z(), p.y() / p.z());
    out.visibility[i] = true;
  }
  return out;
}

CameraParams sample_camera(Rng& rng, const CameraRanges& ranges,
                           const Eigen::Vector3d& look_at) {
  ranges.validate();
  const double yaw = rng.uniform(ranges.yaw[0], ranges.yaw[1]);
  const double pitch = rng.uniform(ranges.pitch[0], ranges.pitch[1]);
  const double roll = rng.uniform(ranges.roll[0], ranges.roll[1]);
  const double dist = rng.uniform(ranges.distance[0], ranges.distance[1]);

  const Eigen::Vector3d dir(std::cos(pitch) * std::sin(yaw), std::sin(pitch),
                            std::cos(pitch) * std::cos(yaw));
  const Eigen::Vector3d position = look_at + dist * dir;
  const Eigen::Vector3d up(0.0, 1.0, 0.0);

  // Right-handed camera frame: x right, y down, z forward (toward look_at).
  Eigen::Vector3d z_c = (look_at - position).normalized();
  Eigen::Vector3d x_c = z_c.cross(up).normalized();
  Eigen::Vector3d y_c = z_c.cross(x_c);
  const Eigen::Vector3d x_r = std::cos(roll) * x_c + std::sin(roll) * y_c;
  const Eigen::Vector3d y_r = -std::sin(roll) * x_c + std::cos(roll) * y_c;

  CameraParams cam;
  cam.R.row(0) = x_r;
  cam.R.row(1) = y_r;
  cam.R.row(2) = z_c;
  cam.T = -cam.R * position;
  cam.K << ranges.focal_px, 0.0, ranges.cx, 0.0, ranges.focal_px, ranges.cy, 0.0,
      0.0, 1.0;
  cam.validate();
  return cam;
}

}  // namespace aims
