#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "aims/camera.hpp"
#include "aims/rng.hpp"
#include "aims/skeleton.hpp"
#include "aims/taxonomy.hpp"
#include "json.hpp"

namespace aims {

// Feature vector: 24 keypoints centered on the 2D pelvis and scaled by the
// 2D nose-pelvis distance (48 values) plus 12 limb-pair angles in radians.
constexpr int kFeatureDim = 60;

// (a, b, c): angle measured at b between segments b->a and b->c.
constexpr std::array<std::array<int, 3>, 12> kAngleTriples = {{
    {joints::kLeftShoulder, joints::kLeftElbow, joints::kLeftWrist},
    {joints::kRightShoulder, joints::kRightElbow, joints::kRightWrist},
    {joints::kLeftCollar, joints::kLeftShoulder, joints::kLeftElbow},
    {joints::kRightCollar, joints::kRightShoulder, joints::kRightElbow},
    {joints::kLeftHip, joints::kLeftKnee, joints::kLeftAnkle},
    {joints::kRightHip, joints::kRightKnee, joints::kRightAnkle},
    {joints::kSpine1, joints::kLeftHip, joints::kLeftKnee},
    {joints::kSpine1, joints::kRightHip, joints::kRightKnee},
    {joints::kLeftKnee, joints::kLeftAnkle, joints::kLeftFoot},
    {joints::kRightKnee, joints::kRightAnkle, joints::kRightFoot},
    {joints::kChest, joints::kNeck, joints::kHead},
    {joints::kPelvis, joints::kSpine2, joints::kChest},
}};

enum class Domain { kSource, kTarget };

const char* domain_name(Domain d);
Domain domain_from_name(const std::string& name);

// One generated sample. Labels are held behind a capability gate: reading
// fine()/coarse() on a hidden sample throws, which is how the unlabeled
// target split refuses label access while evaluation views can unhide.
class LabeledSample {
 public:
  std::string id;
  Domain domain = Domain::kSource;
  PoseParams theta;
  ShapeParams beta;
  JointSet3D joints3d;
  KeypointSet2D keypoints2d;
  CameraParams camera;
  Eigen::VectorXd features;

  void set_labels(int fine, int coarse) {
    fine_ = fine;
    coarse_ = coarse;
  }
  void hide_labels() { hidden_ = true; }
  void unhide_labels() { hidden_ = false; }
  bool labels_hidden() const { return hidden_; }
  int fine() const;
  int coarse() const;

  nlohmann::json to_json() const;
  static LabeledSample from_json(const nlohmann::json& j);

 private:
  int fine_ = -1;
  int coarse_ = -1;
  bool hidden_ = false;
};

class Dataset {
 public:
  std::vector<LabeledSample> samples;

  bool labels_visible() const { return labels_visible_; }
  void hide_labels();
  Dataset evaluation_view() const;

  int size() const { return static_cast<int>(samples.size()); }
  int feature_dim() const { return samples.empty() ? kFeatureDim
                                                   : static_cast<int>(samples[0].features.size()); }
  Eigen::MatrixXd features_matrix() const;  // n x d

  // JSON-lines plus a sidecar manifest (config, seed, counts, content hash).
  void save(const std::string& jsonl_path, const nlohmann::json& config,
            std::uint64_t seed) const;
  static Dataset load(const std::string& jsonl_path);
  static std::string manifest_path(const std::string& jsonl_path);

 private:
  bool labels_visible_ = true;
};

// Per-fine-label pose prototype: mean pose, per-component jitter scale, and
// the uniform root-yaw randomization range.
struct PosePrototype {
  std::string fine_label;
  PoseParams mean_pose;
  double jitter_sigma = 0.10;    // radians
  double root_yaw_range = 0.60;  // radians, +/- about the vertical
};

struct PosePrototypeBank {
  std::vector<PosePrototype> entries;  // fine-label order

  const PosePrototype& for_fine(int fine) const;
  void validate(const Taxonomy& taxonomy) const;
  static const PosePrototypeBank& infant();

  nlohmann::json to_json() const;
  static PosePrototypeBank from_json(const nlohmann::json& j);
  static PosePrototypeBank load(const std::string& path);
};

// Synthetic-vs-real stand-in: pixel noise on 2D keypoints, bone-length
// rescaling (with geometry re-run), and a fixed random orthogonal mixing of
// the feature space by a configured angle.
struct ShiftConfig {
  double keypoint_noise_px = 8.0;
  double feature_rotation_angle = 0.5;  // radians, in [0, pi]
  std::array<double, 2> bone_length_scale_range{0.9, 1.1};
  std::optional<CameraRanges> camera_range_override;

  static ShiftConfig none();
  bool is_identity() const;
  void validate() const;
  nlohmann::json to_json() const;
  static ShiftConfig from_json(const nlohmann::json& j);
};

struct DatasetConfig {
  int source_count = 4000;
  int target_count = 750;
  int test_count = 198;
  CameraRanges camera;
  ShiftConfig shift;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

// Prototype pose plus clipped Gaussian jitter and a uniform root-yaw spin;
// beta drawn standard normal truncated to [-2, 2].
std::pair<PoseParams, ShapeParams> sample_pose(Rng& rng, int fine,
                                               const PosePrototypeBank& bank);

// 60-dim feature vector from 2D keypoints; invariant to translation and to
// uniform scaling about the pelvis.
Eigen::VectorXd extract_features(const KeypointSet2D& keypoints);

// Rotation by `angle` in d/2 fixed random orthogonal planes (seeded basis,
// constant across datasets). d must be even.
Eigen::MatrixXd feature_mixing_matrix(int dim, double angle);

LabeledSample apply_domain_shift(const LabeledSample& sample, const ShiftConfig& shift,
                                 Rng& rng,
                                 const SkeletonTemplate& tmpl = SkeletonTemplate::infant());

struct GeneratedData {
  Dataset source;        // labeled
  Dataset target_train;  // labels hidden (capability flag)
  Dataset target_test;   // labeled, evaluation only
};

// Balanced per fine label; each sample derives from an independent
// per-sample seed, so generation is reproducible sample by sample.
GeneratedData generate_dataset(const DatasetConfig& config, const Taxonomy& taxonomy,
                               const SkeletonTemplate& tmpl,
                               const PosePrototypeBank& bank, std::uint64_t seed);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace aims
