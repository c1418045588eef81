#pragma once

#include <optional>

#include <Eigen/Core>

#include "aims/camera.hpp"
#include "aims/rng.hpp"
#include "aims/skeleton.hpp"
#include "json.hpp"

namespace aims {

struct FitConfig {
  double lambda_theta = 1e-3;  // pose prior weight
  double lambda_beta = 1e-2;   // shape prior weight
  int max_iters = 100;
  double convergence_tol = 1e-8;  // relative loss change
  int multi_start_count = 5;

  // Step rule: backtracking (Armijo) line search along a damped Gauss-Newton
  // direction, falling back to steepest descent when that is not a descent
  // direction.
  double initial_damping = 1e-3;
  double backtrack_factor = 0.5;
  double armijo_c = 1e-4;
  int max_backtracks = 30;
  bool use_gauss_newton = true;

  void validate() const;
  nlohmann::json to_json() const;
  static FitConfig from_json(const nlohmann::json& j);
};

struct FitInit {
  PoseParams theta;
  ShapeParams beta;
  std::optional<Eigen::Vector3d> root_translation;  // estimated when absent
};

struct FitResult {
  PoseParams theta;
  ShapeParams beta;
  Eigen::Vector3d root_translation = Eigen::Vector3d::Zero();
  JointSet3D joints_normalized;
  double final_loss = 0.0;
  double reprojection_term = 0.0;  // px^2
  double pose_prior_term = 0.0;    // ||theta||^2
  double shape_prior_term = 0.0;   // ||beta||^2
  int iterations = 0;
  bool converged = false;
  bool barrier_failure = false;  // every start ended stuck behind the barrier
  int best_start = 0;

  nlohmann::json to_json() const;
};

// Number of optimized parameters: 72 pose + N_s shape + 3 root translation.
int fit_param_count(const SkeletonTemplate& tmpl);

// Squared-pixel reprojection error summed over all joints. When any joint
// falls behind the camera the term is replaced by a fixed finite barrier
// (1e6) and *barrier_hit is set.
double reprojection_loss(const PoseParams& theta, const ShapeParams& beta,
                         const KeypointSet2D& observed, const CameraParams& cam,
                         const SkeletonTemplate& tmpl,
                         const Eigen::Vector3d& root_translation =
                             Eigen::Vector3d::Zero(),
                         bool* barrier_hit = nullptr);

// reprojection + lambda_theta ||theta||^2 + lambda_beta ||beta||^2.
double total_loss(const PoseParams& theta, const ShapeParams& beta,
                  const KeypointSet2D& observed, const CameraParams& cam,
                  const SkeletonTemplate& tmpl, const FitConfig& config,
                  const Eigen::Vector3d& root_translation = Eigen::Vector3d::Zero(),
                  bool* barrier_hit = nullptr);

// Analytic gradient of total_loss w.r.t. the packed parameter vector
// [theta (72), beta (N_s), root_translation (3)].
Eigen::VectorXd total_loss_gradient(const PoseParams& theta, const ShapeParams& beta,
                                    const KeypointSet2D& observed,
                                    const CameraParams& cam,
                                    const SkeletonTemplate& tmpl,
                                    const FitConfig& config,
                                    const Eigen::Vector3d& root_translation =
                                        Eigen::Vector3d::Zero());

// Pose recovery from observed 2D keypoints. Starts from `init` when given,
// otherwise from multi_start_count seeded perturbations of the rest pose with
// a bounding-box translation estimate; returns the lowest-loss result (ties
// broken by start index). Never throws on optimization failure: a run where
// every start stays behind the depth barrier comes back flagged.
FitResult fit(const KeypointSet2D& observed, const CameraParams& cam,
              const SkeletonTemplate& tmpl, const FitConfig& config,
              const std::optional<FitInit>& init, Rng& rng);

}  // namespace aims
