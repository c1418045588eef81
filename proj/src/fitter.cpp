#include "aims/fitter.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace aims {

namespace {

constexpr double kDepthBarrier = 1e6;
constexpr double kMinDepth = 1e-6;

struct PackedParams {
  // [theta (72), beta (ns), translation (3)]
  Eigen::VectorXd v;

  PoseParams theta() const { return PoseParams::from_vector(v.head(kPoseDim)); }
  ShapeParams beta(int ns) const { return ShapeParams(v.segment(kPoseDim, ns)); }
  Eigen::Vector3d translation() const { return v.tail<3>(); }

  static PackedParams pack(const PoseParams& theta, const ShapeParams& beta,
                           const Eigen::Vector3d& t) {
    PackedParams p;
    p.v.resize(kPoseDim + beta.beta.size() + 3);
    p.v.head(kPoseDim) = theta.to_vector();
    p.v.segment(kPoseDim, beta.beta.size()) = beta.beta;
    p.v.tail<3>() = t;
    return p;
  }
};

// Forward pass with position derivatives w.r.t. every parameter. Rotations
// depend only on theta; the root translation moves all joints rigidly, so its
// Jacobian block is identity and handled implicitly.
struct FkDerivatives {
  std::array<Eigen::Vector3d, kNumJoints> position;
  std::array<Eigen::Matrix3d, kNumJoints> global_rot;
  // d position[j] / d theta : 3 x 72, d position[j] / d beta : 3 x ns
  std::array<Eigen::Matrix<double, 3, Eigen::Dynamic>, kNumJoints> dpos_dtheta;
  std::array<Eigen::Matrix<double, 3, Eigen::Dynamic>, kNumJoints> dpos_dbeta;
  // d global_rot[j] / d theta component (3x3 each, indexed [joint][param])
  std::vector<Eigen::Matrix3d> drot;  // kNumJoints * kPoseDim

  Eigen::Matrix3d& drot_at(int joint, int param) {
    return drot[joint * kPoseDim + param];
  }
};

void fk_with_derivatives(const SkeletonTemplate& tmpl, const PackedParams& params,
                         FkDerivatives& out) {
  const int ns = tmpl.num_shape_coeffs();
  const Eigen::VectorXd beta = params.v.segment(kPoseDim, ns);
  const Eigen::Vector3d t = params.translation();

  out.drot.assign(kNumJoints * kPoseDim, Eigen::Matrix3d::Zero());
  for (int j = 0; j < kNumJoints; ++j) {
    out.dpos_dtheta[j].setZero(3, kPoseDim);
    out.dpos_dbeta[j].setZero(3, ns);
  }

  for (int j = 0; j < kNumJoints; ++j) {
    Eigen::Matrix3d local;
    std::array<Eigen::Matrix3d, 3> dlocal;
    rodrigues_with_partials(params.v.segment<3>(3 * j), local, dlocal);

    const int p = tmpl.parent_index[j];
    if (p == -1) {
      out.position[j] = t;
      out.global_rot[j] = local;
      for (int c = 0; c < 3; ++c) out.drot_at(j, 3 * j + c) = dlocal[c];
      continue;
    }

    Eigen::Vector3d offset = tmpl.rest_offsets[j];
    for (int k = 0; k < ns; ++k) offset += beta[k] * tmpl.shape_basis[k][j];

    out.position[j] = out.position[p] + out.global_rot[p] * offset;
    out.global_rot[j] = out.global_rot[p] * local;

    out.dpos_dtheta[j] = out.dpos_dtheta[p];
    out.dpos_dbeta[j] = out.dpos_dbeta[p];
    for (int k = 0; k < ns; ++k)
      out.dpos_dbeta[j].col(k) += out.global_rot[p] * tmpl.shape_basis[k][j];

    // Ancestors (including the parent's own rotation) influence both the
    // position and the accumulated rotation.
    for (int a = p; a != -1; a = tmpl.parent_index[a]) {
      for (int c = 0; c < 3; ++c) {
        const int param = 3 * a + c;
        const Eigen::Matrix3d& dRp = out.drot_at(p, param);
        out.dpos_dtheta[j].col(param) += dRp * offset;
        out.drot_at(j, param) = dRp * local;
      }
    }
    for (int c = 0; c < 3; ++c)
      out.drot_at(j, 3 * j + c) = out.global_rot[p] * dlocal[c];
  }
}

struct Evaluation {
  double loss = 0.0;
  double reproj = 0.0;  // either the pixel term or the barrier constant
  double pose_prior = 0.0;
  double shape_prior = 0.0;
  bool barrier = false;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd jacobian;  // residual Jacobian (reproj + prior rows)
  Eigen::VectorXd residual;
};

// Loss-only evaluation, cheap enough for line search probes.
double evaluate_loss(const SkeletonTemplate& tmpl, const PackedParams& params,
                     const KeypointSet2D& observed, const CameraParams& cam,
                     const FitConfig& config, bool* barrier_hit = nullptr,
                     double* reproj_out = nullptr) {
  const int ns = tmpl.num_shape_coeffs();
  const JointSet3D joints = forward_kinematics(
      tmpl, params.theta(), params.beta(ns),
      RigidTransform{Eigen::Matrix3d::Identity(), params.translation()});

  bool barrier = false;
  double reproj = 0.0;
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Vector3d x_cam = cam.to_camera(joints.positions[j]);
    if (!(x_cam.z() > kMinDepth)) {
      barrier = true;
      break;
    }
    const Eigen::Vector3d p = cam.K * x_cam;
    const Eigen::Vector2d px(p.x() / p.z(), p.y() / p.z());
    reproj += (px - observed.points[j]).squaredNorm();
  }
  if (barrier) reproj = kDepthBarrier;
  if (barrier_hit) *barrier_hit = barrier;
  if (reproj_out) *reproj_out = reproj;

  const double pose_prior = params.v.head(kPoseDim).squaredNorm();
  const double shape_prior = params.v.segment(kPoseDim, ns).squaredNorm();
  return reproj + config.lambda_theta * pose_prior +
         config.lambda_beta * shape_prior;
}

// Full evaluation with gradient and residual Jacobian.
void evaluate(const SkeletonTemplate& tmpl, const PackedParams& params,
              const KeypointSet2D& observed, const CameraParams& cam,
              const FitConfig& config, bool want_jacobian, Evaluation& out) {
  const int ns = tmpl.num_shape_coeffs();
  const int np = kPoseDim + ns + 3;

  static thread_local FkDerivatives fk;
  fk_with_derivatives(tmpl, params, fk);

  out.barrier = false;
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(cam.to_camera(fk.position[j]).z() > kMinDepth)) {
      out.barrier = true;
      break;
    }
  }

  const int n_residuals = 2 * kNumJoints + kPoseDim + ns;
  out.gradient.setZero(np);
  if (want_jacobian) {
    out.jacobian.setZero(n_residuals, np);
    out.residual.setZero(n_residuals);
  }

  out.reproj = 0.0;
  if (out.barrier) {
    // Flat penalty region: only the priors produce gradient.
    out.reproj = kDepthBarrier;
  } else {
    for (int j = 0; j < kNumJoints; ++j) {
      const Eigen::Vector3d x_cam = cam.to_camera(fk.position[j]);
      const Eigen::Vector3d p = cam.K * x_cam;
      const Eigen::Vector2d px(p.x() / p.z(), p.y() / p.z());
      const Eigen::Vector2d r = px - observed.points[j];
      out.reproj += r.squaredNorm();

      const double fx = cam.K(0, 0), fy = cam.K(1, 1);
      const double inv_z = 1.0 / x_cam.z();
      Eigen::Matrix<double, 2, 3> dpx_dcam;
      dpx_dcam << fx * inv_z, 0.0, -fx * x_cam.x() * inv_z * inv_z,
          0.0, fy * inv_z, -fy * x_cam.y() * inv_z * inv_z;
      const Eigen::Matrix<double, 2, 3> dpx_dworld = dpx_dcam * cam.R;

      Eigen::Matrix<double, 2, Eigen::Dynamic> row(2, np);
      row.leftCols(kPoseDim) = dpx_dworld * fk.dpos_dtheta[j];
      row.middleCols(kPoseDim, ns) = dpx_dworld * fk.dpos_dbeta[j];
      row.rightCols(3) = dpx_dworld;  // translation moves joints rigidly

      out.gradient += 2.0 * row.transpose() * r;
      if (want_jacobian) {
        out.jacobian.middleRows(2 * j, 2) = row;
        out.residual.segment<2>(2 * j) = r;
      }
    }
  }

  out.pose_prior = params.v.head(kPoseDim).squaredNorm();
  out.shape_prior = params.v.segment(kPoseDim, ns).squaredNorm();
  out.loss = out.reproj + config.lambda_theta * out.pose_prior +
             config.lambda_beta * out.shape_prior;

  out.gradient.head(kPoseDim) += 2.0 * config.lambda_theta * params.v.head(kPoseDim);
  out.gradient.segment(kPoseDim, ns) +=
      2.0 * config.lambda_beta * params.v.segment(kPoseDim, ns);

  if (want_jacobian) {
    const double sqrt_lt = std::sqrt(config.lambda_theta);
    const double sqrt_lb = std::sqrt(config.lambda_beta);
    for (int k = 0; k < kPoseDim; ++k) {
      out.jacobian(2 * kNumJoints + k, k) = sqrt_lt;
      out.residual(2 * kNumJoints + k) = sqrt_lt * params.v[k];
    }
    for (int k = 0; k < ns; ++k) {
      out.jacobian(2 * kNumJoints + kPoseDim + k, kPoseDim + k) = sqrt_lb;
      out.residual(2 * kNumJoints + kPoseDim + k) = sqrt_lb * params.v[kPoseDim + k];
    }
  }
}

// Translation estimate from the observed bounding box: pinhole similar
// triangles on the rest-skeleton extent, aimed along the ray through the 2D
// centroid.
Eigen::Vector3d estimate_translation(const KeypointSet2D& observed,
                                     const CameraParams& cam,
                                     const SkeletonTemplate& tmpl) {
  const JointSet3D rest = forward_kinematics(tmpl, PoseParams{}, ShapeParams{});
  Eigen::Vector3d lo3 = rest.positions[0], hi3 = rest.positions[0];
  for (const auto& p : rest.positions) {
    lo3 = lo3.cwiseMin(p);
    hi3 = hi3.cwiseMax(p);
  }
  const double extent3d = (hi3 - lo3).norm();

  Eigen::Vector2d lo2 = observed.points[0], hi2 = observed.points[0];
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : observed.points) {
    lo2 = lo2.cwiseMin(p);
    hi2 = hi2.cwiseMax(p);
    centroid += p;
  }
  centroid /= kNumJoints;
  const double extent2d = std::max((hi2 - lo2).norm(), 1.0);

  const double f = 0.5 * (cam.K(0, 0) + cam.K(1, 1));
  const double depth = std::clamp(f * extent3d / extent2d, 0.2, 20.0);
  const Eigen::Vector3d ray =
      cam.K.inverse() * Eigen::Vector3d(centroid.x(), centroid.y(), 1.0);
  const Eigen::Vector3d pelvis_cam = depth * ray / ray.z();
  return cam.R.transpose() * (pelvis_cam - cam.T);
}

struct StartResult {
  PackedParams params;
  Evaluation eval;
  int iterations = 0;
  bool converged = false;
};

StartResult optimize_from(const SkeletonTemplate& tmpl, PackedParams params,
                          const KeypointSet2D& observed, const CameraParams& cam,
                          const FitConfig& config) {
  StartResult res;
  Evaluation cur;
  evaluate(tmpl, params, observed, cam, config, config.use_gauss_newton, cur);

  double damping = config.initial_damping;
  const int np = static_cast<int>(params.v.size());

  for (int iter = 0; iter < config.max_iters; ++iter) {
    res.iterations = iter + 1;

    Eigen::VectorXd direction;
    if (config.use_gauss_newton && !cur.barrier) {
      Eigen::MatrixXd jtj = Eigen::MatrixXd::Zero(np, np);
      jtj.selfadjointView<Eigen::Lower>().rankUpdate(cur.jacobian.transpose());
      jtj = jtj.selfadjointView<Eigen::Lower>();
      jtj.diagonal().array() += damping;
      direction = Eigen::LDLT<Eigen::MatrixXd>(jtj).solve(
          -cur.jacobian.transpose() * cur.residual);
    } else {
      direction = -cur.gradient;
    }
    double slope = cur.gradient.dot(direction);
    if (!(slope < 0.0)) {
      direction = -cur.gradient;
      slope = cur.gradient.dot(direction);
      if (!(slope < 0.0)) break;  // gradient vanished
    }

    // Armijo backtracking; only accepted steps mutate the state, so the loss
    // sequence is non-increasing.
    double step = 1.0;
    bool accepted = false;
    PackedParams trial;
    for (int bt = 0; bt < config.max_backtracks; ++bt) {
      trial.v = params.v + step * direction;
      const double trial_loss =
          evaluate_loss(tmpl, trial, observed, cam, config);
      if (trial_loss <= cur.loss + config.armijo_c * step * slope) {
        accepted = true;
        break;
      }
      step *= config.backtrack_factor;
    }
    if (!accepted) {
      damping *= 10.0;
      if (damping > 1e10) break;
      continue;
    }

    const double prev_loss = cur.loss;
    params = trial;
    evaluate(tmpl, params, observed, cam, config, config.use_gauss_newton, cur);
    damping = std::max(damping * 0.3, 1e-9);

    const double rel_change =
        std::abs(prev_loss - cur.loss) / std::max(prev_loss, 1e-12);
    if (rel_change < config.convergence_tol) {
      res.converged = true;
      break;
    }
  }

  res.params = params;
  res.eval = cur;
  return res;
}

}  // namespace

void FitConfig::validate() const {
  if (lambda_theta < 0 || lambda_beta < 0)
    throw std::invalid_argument("fit config: prior weights must be >= 0");
  if (max_iters < 1) throw std::invalid_argument("fit config: max_iters must be >= 1");
  if (!(convergence_tol > 0))
    throw std::invalid_argument("fit config: convergence_tol must be > 0");
  if (multi_start_count < 1)
    throw std::invalid_argument("fit config: multi_start_count must be >= 1");
  if (!(backtrack_factor > 0 && backtrack_factor < 1) || armijo_c <= 0 ||
      max_backtracks < 1 || initial_damping < 0)
    throw std::invalid_argument("fit config: invalid step rule parameters");
}

nlohmann::json FitConfig::to_json() const {
  return {{"lambda_theta", lambda_theta},
          {"lambda_beta", lambda_beta},
          {"max_iters", max_iters},
          {"convergence_tol", convergence_tol},
          {"multi_start_count", multi_start_count},
          {"initial_damping", initial_damping},
          {"backtrack_factor", backtrack_factor},
          {"armijo_c", armijo_c},
          {"max_backtracks", max_backtracks},
          {"use_gauss_newton", use_gauss_newton}};
}

FitConfig FitConfig::from_json(const nlohmann::json& j) {
  FitConfig c;
  if (j.contains("lambda_theta")) c.lambda_theta = j.at("lambda_theta").get<double>();
  if (j.contains("lambda_beta")) c.lambda_beta = j.at("lambda_beta").get<double>();
  if (j.contains("max_iters")) c.max_iters = j.at("max_iters").get<int>();
  if (j.contains("convergence_tol"))
    c.convergence_tol = j.at("convergence_tol").get<double>();
  if (j.contains("multi_start_count"))
    c.multi_start_count = j.at("multi_start_count").get<int>();
  if (j.contains("initial_damping"))
    c.initial_damping = j.at("initial_damping").get<double>();
  if (j.contains("backtrack_factor"))
    c.backtrack_factor = j.at("backtrack_factor").get<double>();
  if (j.contains("armijo_c")) c.armijo_c = j.at("armijo_c").get<double>();
  if (j.contains("max_backtracks")) c.max_backtracks = j.at("max_backtracks").get<int>();
  if (j.contains("use_gauss_newton"))
    c.use_gauss_newton = j.at("use_gauss_newton").get<bool>();
  c.validate();
  return c;
}

nlohmann::json FitResult::to_json() const {
  const Eigen::VectorXd th = theta.to_vector();
  return {{"theta", std::vector<double>(th.data(), th.data() + th.size())},
          {"beta", std::vector<double>(beta.beta.data(),
                                       beta.beta.data() + beta.beta.size())},
          {"root_translation",
           {root_translation.x(), root_translation.y(), root_translation.z()}},
          {"joints_normalized", joints_normalized.to_json()},
          {"final_loss", final_loss},
          {"reprojection_term", reprojection_term},
          {"pose_prior_term", pose_prior_term},
          {"shape_prior_term", shape_prior_term},
          {"iterations", iterations},
          {"converged", converged},
          {"barrier_failure", barrier_failure},
          {"best_start", best_start}};
}

int fit_param_count(const SkeletonTemplate& tmpl) {
  return kPoseDim + tmpl.num_shape_coeffs() + 3;
}

double reprojection_loss(const PoseParams& theta, const ShapeParams& beta,
                         const KeypointSet2D& observed, const CameraParams& cam,
                         const SkeletonTemplate& tmpl,
                         const Eigen::Vector3d& root_translation, bool* barrier_hit) {
  for (int j = 0; j < kNumJoints; ++j)
    if (!observed.visibility[j])
      throw std::invalid_argument("fit: observed keypoint " + std::to_string(j) +
                                  " is not visible");
  FitConfig zero;
  zero.lambda_theta = 0.0;
  zero.lambda_beta = 0.0;
  double reproj = 0.0;
  bool barrier = false;
  evaluate_loss(tmpl, PackedParams::pack(theta, beta, root_translation), observed,
                cam, zero, &barrier, &reproj);
  if (barrier_hit) *barrier_hit = barrier;
  return reproj;
}

double total_loss(const PoseParams& theta, const ShapeParams& beta,
                  const KeypointSet2D& observed, const CameraParams& cam,
                  const SkeletonTemplate& tmpl, const FitConfig& config,
                  const Eigen::Vector3d& root_translation, bool* barrier_hit) {
  return evaluate_loss(tmpl, PackedParams::pack(theta, beta, root_translation),
                       observed, cam, config, barrier_hit);
}

Eigen::VectorXd total_loss_gradient(const PoseParams& theta, const ShapeParams& beta,
                                    const KeypointSet2D& observed,
                                    const CameraParams& cam,
                                    const SkeletonTemplate& tmpl,
                                    const FitConfig& config,
                                    const Eigen::Vector3d& root_translation) {
  Evaluation eval;
  evaluate(tmpl, PackedParams::pack(theta, beta, root_translation), observed, cam,
           config, false, eval);
  return eval.gradient;
}

FitResult fit(const KeypointSet2D& observed, const CameraParams& cam,
              const SkeletonTemplate& tmpl, const FitConfig& config,
              const std::optional<FitInit>& init, Rng& rng) {
  config.validate();
  cam.validate();
  for (int j = 0; j < kNumJoints; ++j)
    if (!observed.points[j].allFinite())
      throw std::invalid_argument("fit: non-finite observation at joint " +
                                  std::to_string(j));

  const int ns = tmpl.num_shape_coeffs();
  const Eigen::Vector3d t_estimate = estimate_translation(observed, cam, tmpl);

  std::vector<PackedParams> starts;
  if (init) {
    if (!init->theta.is_finite() || !init->beta.is_finite())
      throw std::invalid_argument("fit: non-finite init");
    starts.push_back(PackedParams::pack(
        init->theta, init->beta, init->root_translation.value_or(t_estimate)));
  } else {
    for (int s = 0; s < config.multi_start_count; ++s) {
      PoseParams theta;
      if (s > 0) {
        // Random global orientation plus small limb perturbations; covers the
        // depth-flip minima that a single upright start would miss.
        Eigen::Vector3d axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
        if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitY();
        theta.joint_rotations[0] =
            axis.normalized() * rng.uniform(0.0, std::numbers::pi);
      }
      for (int j = 1; j < kNumJoints; ++j)
        theta.joint_rotations[j] = Eigen::Vector3d(
            rng.gaussian(0, 0.05), rng.gaussian(0, 0.05), rng.gaussian(0, 0.05));
      Eigen::Vector3d t = t_estimate;
      if (s > 0)
        t += Eigen::Vector3d(rng.gaussian(0, 0.05), rng.gaussian(0, 0.05),
                             rng.gaussian(0, 0.1));
      starts.push_back(PackedParams::pack(theta, ShapeParams{}, t));
    }
  }

  FitResult best;
  double best_loss = std::numeric_limits<double>::infinity();
  bool all_barrier = true;
  for (size_t s = 0; s < starts.size(); ++s) {
    StartResult r = optimize_from(tmpl, starts[s], observed, cam, config);
    all_barrier = all_barrier && r.eval.barrier;
    if (r.eval.loss < best_loss) {
      best_loss = r.eval.loss;
      best.theta = r.params.theta();
      best.beta = r.params.beta(ns);
      best.root_translation = r.params.translation();
      best.final_loss = r.eval.loss;
      best.reprojection_term = r.eval.reproj;
      best.pose_prior_term = r.eval.pose_prior;
      best.shape_prior_term = r.eval.shape_prior;
      best.iterations = r.iterations;
      best.converged = r.converged;
      best.best_start = static_cast<int>(s);
    }
  }

  best.barrier_failure = all_barrier;
  if (!best.barrier_failure) {
    const JointSet3D joints = forward_kinematics(
        tmpl, best.theta, best.beta,
        RigidTransform{Eigen::Matrix3d::Identity(), best.root_translation});
    best.joints_normalized = normalize(joints, tmpl.nose, tmpl.pelvis);
  }
  return best;
}

}  // namespace aims
