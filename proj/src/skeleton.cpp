#include "aims/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "aims/rng.hpp"

namespace aims {

Eigen::VectorXd PoseParams::to_vector() const {
  Eigen::VectorXd v(kPoseDim);
  for (int j = 0; j < kNumJoints; ++j) v.segment<3>(3 * j) = joint_rotations[j];
  return v;
}

PoseParams PoseParams::from_vector(const Eigen::VectorXd& v) {
  if (v.size() != kPoseDim)
    throw std::invalid_argument("pose: expected 72 values, got " +
                                std::to_string(v.size()));
  PoseParams p;
  for (int j = 0; j < kNumJoints; ++j) p.joint_rotations[j] = v.segment<3>(3 * j);
  return p;
}

bool PoseParams::is_finite() const {
  for (const auto& r : joint_rotations)
    if (!r.allFinite()) return false;
  return true;
}

double PoseParams::squared_norm() const {
  double s = 0.0;
  for (const auto& r : joint_rotations) s += r.squaredNorm();
  return s;
}

bool JointSet3D::is_finite() const {
  for (const auto& p : positions)
    if (!p.allFinite()) return false;
  return true;
}

nlohmann::json JointSet3D::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& p : positions) rows.push_back({p.x(), p.y(), p.z()});
  return rows;
}

JointSet3D JointSet3D::from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kNumJoints)
    throw std::invalid_argument("joints3d: expected a 24x3 array");
  JointSet3D out;
  for (int i = 0; i < kNumJoints; ++i) {
    const auto& row = j.at(i);
    out.positions[i] = Eigen::Vector3d(row.at(0).get<double>(),
                                       row.at(1).get<double>(),
                                       row.at(2).get<double>());
  }
  return out;
}

static Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle < 1e-12) {
    // Second-order Taylor, exact enough at this magnitude.
    return Eigen::Matrix3d::Identity() + skew(w) + 0.5 * skew(w) * skew(w);
  }
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

void rodrigues_with_partials(const Eigen::Vector3d& w, Eigen::Matrix3d& R,
                             std::array<Eigen::Matrix3d, 3>& dR) {
  R = rodrigues(w);
  const double n2 = w.squaredNorm();
  if (n2 < 1e-16) {
    for (int c = 0; c < 3; ++c) dR[c] = skew(Eigen::Vector3d::Unit(c));
    return;
  }
  // Gallego & Yezzi: dR/dw_c = ((w_c [w]x + [w x (I - R) e_c]x) / |w|^2) R.
  const Eigen::Matrix3d wx = skew(w);
  const Eigen::Matrix3d ImR = Eigen::Matrix3d::Identity() - R;
  for (int c = 0; c < 3; ++c) {
    const Eigen::Vector3d v = w.cross(ImR.col(c));
    dR[c] = ((w[c] * wx + skew(v)) / n2) * R;
  }
}

Eigen::Vector3d axis_angle_from_matrix(const Eigen::Matrix3d& rotation) {
  Eigen::AngleAxisd aa(rotation);
  double angle = aa.angle();
  Eigen::Vector3d axis = aa.axis();
  if (angle > std::numbers::pi) {  // canonical form
    angle = 2.0 * std::numbers::pi - angle;
    axis = -axis;
  }
  return angle * axis;
}

Eigen::Vector3d clip_axis_angle(const Eigen::Vector3d& w) {
  const double n = w.norm();
  if (n <= std::numbers::pi || n == 0.0) return w;
  return w * (std::numbers::pi / n);
}

void SkeletonTemplate::validate() const {
  int roots = 0;
  for (int i = 0; i < kNumJoints; ++i) {
    const int p = parent_index[i];
    if (p == -1) {
      ++roots;
      if (i != pelvis)
        throw std::invalid_argument("skeleton: root must be the pelvis joint");
    } else if (p < 0 || p >= kNumJoints) {
      throw std::invalid_argument("skeleton: parent index out of range at joint " +
                                  std::to_string(i));
    } else if (p >= i) {
      // Topological order doubles as the cycle check.
      throw std::invalid_argument("skeleton: joint " + std::to_string(i) +
                                  " must come after its parent");
    }
    if (!rest_offsets[i].allFinite())
      throw std::invalid_argument("skeleton: non-finite rest offset at joint " +
                                  std::to_string(i));
  }
  if (roots != 1)
    throw std::invalid_argument("skeleton: tree must have exactly one root");
  if (joint_names[pelvis] != "pelvis" || joint_names[nose] != "nose")
    throw std::invalid_argument("skeleton: pelvis/nose joints missing");

  // Rest nose-pelvis distance must be positive.
  Eigen::Vector3d nose_pos = Eigen::Vector3d::Zero();
  for (int i = nose; i != -1; i = parent_index[i]) nose_pos += rest_offsets[i];
  if (nose_pos.norm() <= 1e-6)
    throw std::invalid_argument("skeleton: rest nose-pelvis distance must be > 0");

  for (const auto& basis : shape_basis)
    for (const auto& d : basis)
      if (!d.allFinite())
        throw std::invalid_argument("skeleton: non-finite shape basis entry");
}

namespace {

SkeletonTemplate build_infant_template() {
  SkeletonTemplate t;
  using V = Eigen::Vector3d;
  struct Row {
    const char* name;
    int parent;
    V offset;
  };
  // Y up, facing +z. Infant proportions: large head, short limbs,
  // ~0.65 m total rest height.
  const Row rows[kNumJoints] = {
      {"pelvis", -1, {0.0, 0.0, 0.0}},
      {"spine1", 0, {0.0, 0.065, 0.005}},
      {"spine2", 1, {0.0, 0.065, 0.005}},
      {"chest", 2, {0.0, 0.06, 0.0}},
      {"neck", 3, {0.0, 0.05, 0.0}},
      {"head", 4, {0.0, 0.045, 0.01}},
      {"nose", 5, {0.0, 0.03, 0.05}},
      {"head_top", 5, {0.0, 0.09, 0.0}},
      {"left_hip", 0, {0.04, -0.025, 0.0}},
      {"left_knee", 8, {0.006, -0.115, 0.004}},
      {"left_ankle", 9, {0.004, -0.105, -0.01}},
      {"left_foot", 10, {0.0, -0.02, 0.05}},
      {"right_hip", 0, {-0.04, -0.025, 0.0}},
      {"right_knee", 12, {-0.006, -0.115, 0.004}},
      {"right_ankle", 13, {-0.004, -0.105, -0.01}},
      {"right_foot", 14, {0.0, -0.02, 0.05}},
      {"left_collar", 3, {0.03, 0.045, 0.0}},
      {"left_shoulder", 16, {0.045, 0.005, 0.0}},
      {"left_elbow", 17, {0.085, 0.0, 0.0}},
      {"left_wrist", 18, {0.075, 0.0, 0.0}},
      {"right_collar", 3, {-0.03, 0.045, 0.0}},
      {"right_shoulder", 20, {-0.045, 0.005, 0.0}},
      {"right_elbow", 21, {-0.085, 0.0, 0.0}},
      {"right_wrist", 22, {-0.075, 0.0, 0.0}},
  };
  for (int i = 0; i < kNumJoints; ++i) {
    t.joint_names[i] = rows[i].name;
    t.parent_index[i] = rows[i].parent;
    t.rest_offsets[i] = rows[i].offset;
  }
  t.pelvis = joints::kPelvis;
  t.nose = joints::kNose;

  // Seeded smooth per-bone length deltas: each basis scales every bone along
  // its own direction by a coefficient in [-5%, 5%], smoothed once along the
  // tree.
  Rng rng(0x5ca1ab1e0001ull);
  t.shape_basis.resize(kNumShapeCoeffs);
  for (int k = 0; k < kNumShapeCoeffs; ++k) {
    std::array<double, kNumJoints> raw{};
    for (int i = 0; i < kNumJoints; ++i) raw[i] = rng.uniform(-0.05, 0.05);
    for (int i = 0; i < kNumJoints; ++i) {
      const int p = t.parent_index[i];
      const double coef = p == -1 ? raw[i] : 0.5 * (raw[i] + raw[p]);
      t.shape_basis[k][i] = coef * t.rest_offsets[i];
    }
  }
  t.validate();
  return t;
}

}  // namespace

const SkeletonTemplate& SkeletonTemplate::infant() {
  static const SkeletonTemplate t = build_infant_template();
  return t;
}

nlohmann::json SkeletonTemplate::to_json() const {
  nlohmann::json j;
  j["joints"] = joint_names;
  j["parents"] = parent_index;
  nlohmann::json offsets = nlohmann::json::array();
  for (const auto& o : rest_offsets) offsets.push_back({o.x(), o.y(), o.z()});
  j["offsets"] = offsets;
  nlohmann::json basis = nlohmann::json::array();
  for (const auto& b : shape_basis) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& d : b) rows.push_back({d.x(), d.y(), d.z()});
    basis.push_back(rows);
  }
  j["shape_basis"] = basis;
  return j;
}

SkeletonTemplate SkeletonTemplate::from_json(const nlohmann::json& j) {
  SkeletonTemplate t;
  const auto names = j.at("joints").get<std::vector<std::string>>();
  const auto parents = j.at("parents").get<std::vector<int>>();
  const auto& offsets = j.at("offsets");
  if (names.size() != kNumJoints || parents.size() != kNumJoints ||
      offsets.size() != kNumJoints)
    throw std::invalid_argument("skeleton: template must have 24 joints");
  for (int i = 0; i < kNumJoints; ++i) {
    t.joint_names[i] = names[i];
    t.parent_index[i] = parents[i];
    const auto& row = offsets.at(i);
    t.rest_offsets[i] = Eigen::Vector3d(row.at(0).get<double>(),
                                        row.at(1).get<double>(),
                                        row.at(2).get<double>());
  }
  for (int i = 0; i < kNumJoints; ++i) {
    if (t.joint_names[i] == "pelvis") t.pelvis = i;
    if (t.joint_names[i] == "nose") t.nose = i;
  }
  for (const auto& b : j.at("shape_basis")) {
    if (b.size() != kNumJoints)
      throw std::invalid_argument("skeleton: shape basis entry must cover 24 joints");
    std::array<Eigen::Vector3d, kNumJoints> basis;
    for (int i = 0; i < kNumJoints; ++i)
      basis[i] = Eigen::Vector3d(b.at(i).at(0).get<double>(),
                                 b.at(i).at(1).get<double>(),
                                 b.at(i).at(2).get<double>());
    t.shape_basis.push_back(basis);
  }
  t.validate();
  return t;
}

SkeletonTemplate SkeletonTemplate::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("skeleton: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

JointSet3D forward_kinematics(const SkeletonTemplate& tmpl, const PoseParams& pose,
                              const ShapeParams& shape, const RigidTransform& root) {
  if (!pose.is_finite()) throw std::invalid_argument("fk: non-finite pose");
  if (!shape.is_finite()) throw std::invalid_argument("fk: non-finite shape");
  if (shape.beta.size() != tmpl.num_shape_coeffs())
    throw std::invalid_argument("fk: shape has " + std::to_string(shape.beta.size()) +
                                " coefficients, template expects " +
                                std::to_string(tmpl.num_shape_coeffs()));
  if (!root.rotation.allFinite() || !root.translation.allFinite())
    throw std::invalid_argument("fk: non-finite root transform");

  JointSet3D out;
  std::array<Eigen::Matrix3d, kNumJoints> global_rot;
  for (int i = 0; i < kNumJoints; ++i) {
    Eigen::Vector3d offset = tmpl.rest_offsets[i];
    for (int k = 0; k < tmpl.num_shape_coeffs(); ++k)
      offset += shape.beta[k] * tmpl.shape_basis[k][i];

    const Eigen::Matrix3d local = rodrigues(pose.joint_rotations[i]);
    const int p = tmpl.parent_index[i];
    if (p == -1) {
      out.positions[i] = root.translation;
      global_rot[i] = root.rotation * local;
    } else {
      out.positions[i] = out.positions[p] + global_rot[p] * offset;
      global_rot[i] = global_rot[p] * local;
    }
  }
  return out;
}

JointSet3D normalize(const JointSet3D& joints, int nose_index, int pelvis_index) {
  const Eigen::Vector3d pelvis = joints.positions[pelvis_index];
  const double dist = (joints.positions[nose_index] - pelvis).norm();
  if (!(dist > 1e-6))
    throw std::invalid_argument(
        "normalize: degenerate nose-pelvis distance " + std::to_string(dist) +
        " m (must be > 1e-6)");
  JointSet3D out;
  for (int i = 0; i < kNumJoints; ++i)
    out.positions[i] = (joints.positions[i] - pelvis) / dist;
  return out;
}

}  // namespace aims
