#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Geometry>

#include "aims/rng.hpp"
#include "aims/skeleton.hpp"
#include "oracles.hpp"

using namespace aims;

namespace {

PoseParams random_pose(Rng& rng, double scale) {
  PoseParams p;
  for (auto& r : p.joint_rotations)
    r = Eigen::Vector3d(rng.gaussian(0, scale), rng.gaussian(0, scale),
                        rng.gaussian(0, scale));
  return p;
}

ShapeParams random_shape(Rng& rng) {
  Eigen::VectorXd b(kNumShapeCoeffs);
  for (int i = 0; i < b.size(); ++i) b[i] = rng.uniform(-2.0, 2.0);
  return ShapeParams(b);
}

JointSet3D random_joints(Rng& rng) {
  const SkeletonTemplate& tmpl = SkeletonTemplate::infant();
  PoseParams pose = random_pose(rng, 0.4);
  ShapeParams shape = random_shape(rng);
  return forward_kinematics(tmpl, pose, shape);
}

}  // namespace

TEST_CASE("infant template is a valid tree with sane proportions") {
  const SkeletonTemplate& t = SkeletonTemplate::infant();
  CHECK_NOTHROW(t.validate());
  CHECK(t.joint_names[t.pelvis] == "pelvis");
  CHECK(t.joint_names[t.nose] == "nose");
  CHECK(t.num_shape_coeffs() == kNumShapeCoeffs);

  // Rest height head_top to foot around 0.65 m.
  JointSet3D rest = forward_kinematics(t, PoseParams{}, ShapeParams{});
  double y_min = 1e9, y_max = -1e9;
  for (const auto& p : rest.positions) {
    y_min = std::min(y_min, p.y());
    y_max = std::max(y_max, p.y());
  }
  CHECK(y_max - y_min > 0.60);
  CHECK(y_max - y_min < 0.72);

  // Shape basis deltas stay within 5% of each bone per unit beta.
  for (const auto& basis : t.shape_basis)
    for (int j = 0; j < kNumJoints; ++j)
      CHECK(basis[j].norm() <= 0.05 * t.rest_offsets[j].norm() + 1e-12);
}

TEST_CASE("rest pose equals cumulative rest offsets") {
  const SkeletonTemplate& t = SkeletonTemplate::infant();
  JointSet3D joints = forward_kinematics(t, PoseParams{}, ShapeParams{});
  for (int j = 0; j < kNumJoints; ++j) {
    Eigen::Vector3d expect = Eigen::Vector3d::Zero();
    for (int a = j; a != -1; a = t.parent_index[a])
      if (t.parent_index[a] != -1) expect += t.rest_offsets[a];
    CHECK((joints.positions[j] - expect).norm() < 1e-12);
  }
}

TEST_CASE("zero pose is exactly linear in beta") {
  const SkeletonTemplate& t = SkeletonTemplate::infant();
  JointSet3D base = forward_kinematics(t, PoseParams{}, ShapeParams{});

  // Unit beta along coefficient 1 shifts bones by exactly shape_basis[1].
  Eigen::VectorXd b = Eigen::VectorXd::Zero(kNumShapeCoeffs);
  b[1] = 1.0;
  JointSet3D shifted = forward_kinematics(t, PoseParams{}, ShapeParams(b));
  for (int j = 0; j < kNumJoints; ++j) {
    Eigen::Vector3d delta_sum = Eigen::Vector3d::Zero();
    for (int a = j; a != -1; a = t.parent_index[a])
      if (t.parent_index[a] != -1) delta_sum += t.shape_basis[1][a];
    CHECK((shifted.positions[j] - base.positions[j] - delta_sum).norm() < 1e-12);
  }

  // Superposition over random betas.
  Rng rng(11);
  ShapeParams s1 = random_shape(rng), s2 = random_shape(rng);
  JointSet3D j1 = forward_kinematics(t, PoseParams{}, s1);
  JointSet3D j2 = forward_kinematics(t, PoseParams{}, s2);
  JointSet3D jsum =
      forward_kinematics(t, PoseParams{}, ShapeParams(s1.beta + s2.beta));
  for (int j = 0; j < kNumJoints; ++j) {
    Eigen::Vector3d lhs = jsum.positions[j] - base.positions[j];
    Eigen::Vector3d rhs = (j1.positions[j] - base.positions[j]) +
                          (j2.positions[j] - base.positions[j]);
    CHECK((lhs - rhs).norm() < 1e-12);
  }
}

TEST_CASE("forward kinematics matches the chain-multiplication oracle") {
  const SkeletonTemplate& t = SkeletonTemplate::infant();
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    PoseParams pose = random_pose(rng, 0.8);
    ShapeParams shape = random_shape(rng);
    RigidTransform root;
    root.rotation = oracles::rotation_from_axis_angle(Eigen::Vector3d(
        rng.gaussian(0, 1), rng.gaussian(0, 1), rng.gaussian(0, 1)));
    root.translation =
        Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));

    JointSet3D ours = forward_kinematics(t, pose, shape, root);
    JointSet3D ref = oracles::fk_chain_oracle(t, pose, shape, root);
    for (int j = 0; j < kNumJoints; ++j)
      CHECK((ours.positions[j] - ref.positions[j]).norm() < 1e-9);
  }
}

TEST_CASE("forward kinematics is deterministic and rejects bad input") {
  const SkeletonTemplate& t = SkeletonTemplate::infant();
  Rng rng(7);
  PoseParams pose = random_pose(rng, 0.5);
  ShapeParams shape = random_shape(rng);
  JointSet3D a = forward_kinematics(t, pose, shape);
  JointSet3D b = forward_kinematics(t, pose, shape);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK(a.positions[j] == b.positions[j]);

  PoseParams bad = pose;
  bad.joint_rotations[3][1] = std::nan("");
  CHECK_THROWS_AS(forward_kinematics(t, bad, shape), std::invalid_argument);
  ShapeParams bad_shape = shape;
  bad_shape.beta[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(forward_kinematics(t, pose, bad_shape), std::invalid_argument);
}

TEST_CASE("rodrigues partials match finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::Vector3d w(rng.gaussian(0, 1), rng.gaussian(0, 1), rng.gaussian(0, 1));
    if (trial == 0) w.setZero();
    Eigen::Matrix3d R;
    std::array<Eigen::Matrix3d, 3> dR;
    rodrigues_with_partials(w, R, dR);
    CHECK((R - oracles::rotation_from_axis_angle(w)).norm() < 1e-9);
    const double h = 1e-6;
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d wp = w, wm = w;
      wp[c] += h;
      wm[c] -= h;
      Eigen::Matrix3d num = (rodrigues(wp) - rodrigues(wm)) / (2 * h);
      CHECK((dR[c] - num).norm() < 1e-6);
    }
  }
}

TEST_CASE("normalize: nose at unit distance, pelvis at origin") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    JointSet3D joints = random_joints(rng);
    JointSet3D n = normalize(joints);
    CHECK(n.positions[joints::kPelvis].norm() < 1e-12);
    CHECK(std::abs((n.positions[joints::kNose] - n.positions[joints::kPelvis]).norm() -
                   1.0) < 1e-9);
  }
}

TEST_CASE("normalize is idempotent") {
  Rng rng(6);
  JointSet3D joints = random_joints(rng);
  JointSet3D once = normalize(joints);
  JointSet3D twice = normalize(once);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((once.positions[j] - twice.positions[j]).norm() < 1e-9);
}

TEST_CASE("normalize is invariant under similarity transforms") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    JointSet3D joints = random_joints(rng);
    JointSet3D base = normalize(joints);

    // Uniform scale + translation leaves the output identical.
    const double s = trial == 0 ? 3.7 : rng.uniform(0.2, 5.0);
    Eigen::Vector3d t(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    JointSet3D moved;
    for (int j = 0; j < kNumJoints; ++j)
      moved.positions[j] = s * joints.positions[j] + t;
    JointSet3D n = normalize(moved);
    for (int j = 0; j < kNumJoints; ++j)
      CHECK((n.positions[j] - base.positions[j]).norm() < 1e-9);

    // Adding a rotation preserves all pairwise distances.
    Eigen::Matrix3d R = oracles::rotation_from_axis_angle(Eigen::Vector3d(
        rng.gaussian(0, 1), rng.gaussian(0, 1), rng.gaussian(0, 1)));
    for (int j = 0; j < kNumJoints; ++j)
      moved.positions[j] = s * (R * joints.positions[j]) + t;
    JointSet3D nr = normalize(moved);
    for (int a = 0; a < kNumJoints; ++a)
      for (int b = a + 1; b < kNumJoints; ++b) {
        const double da = (nr.positions[a] - nr.positions[b]).norm();
        const double db = (base.positions[a] - base.positions[b]).norm();
        CHECK(std::abs(da - db) < 1e-9);
      }
  }
}

TEST_CASE("normalize rejects degenerate nose-pelvis distance") {
  JointSet3D collapsed;  // all zeros
  CHECK_THROWS_WITH_AS(normalize(collapsed), doctest::Contains("nose-pelvis"),
                       std::invalid_argument);
}

TEST_CASE("template json round trip and validation") {
  const SkeletonTemplate& t = SkeletonTemplate::infant();
  SkeletonTemplate back = SkeletonTemplate::from_json(t.to_json());
  for (int j = 0; j < kNumJoints; ++j) {
    CHECK(back.joint_names[j] == t.joint_names[j]);
    CHECK(back.parent_index[j] == t.parent_index[j]);
    CHECK((back.rest_offsets[j] - t.rest_offsets[j]).norm() == 0.0);
  }
  CHECK(back.num_shape_coeffs() == t.num_shape_coeffs());

  nlohmann::json bad = t.to_json();
  bad["parents"][5] = 21;  // breaks topological order
  CHECK_THROWS_AS(SkeletonTemplate::from_json(bad), std::invalid_argument);

  nlohmann::json two_roots = t.to_json();
  two_roots["parents"][3] = -1;
  CHECK_THROWS_AS(SkeletonTemplate::from_json(two_roots), std::invalid_argument);
}

TEST_CASE("clip and canonical axis-angle helpers") {
  Eigen::Vector3d big(4.0, 0.0, 0.0);
  CHECK(std::abs(clip_axis_angle(big).norm() - std::numbers::pi) < 1e-12);
  Eigen::Vector3d small(0.3, -0.2, 0.1);
  CHECK(clip_axis_angle(small) == small);

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Vector3d w(rng.gaussian(0, 1.5), rng.gaussian(0, 1.5), rng.gaussian(0, 1.5));
    Eigen::Matrix3d R = rodrigues(w);
    Eigen::Vector3d back = axis_angle_from_matrix(R);
    CHECK(back.norm() <= std::numbers::pi + 1e-9);
    CHECK((rodrigues(back) - R).norm() < 1e-9);
  }
}
