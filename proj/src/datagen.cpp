#include "aims/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace aims {

const char* domain_name(Domain d) {
  return d == Domain::kSource ? "source" : "target";
}

Domain domain_from_name(const std::string& name) {
  if (name == "source") return Domain::kSource;
  if (name == "target") return Domain::kTarget;
  throw std::invalid_argument("dataset: unknown domain '" + name + "'");
}

int LabeledSample::fine() const {
  if (hidden_)
    throw std::runtime_error("dataset: fine label of '" + id +
                             "' is hidden (unlabeled target split)");
  return fine_;
}

int LabeledSample::coarse() const {
  if (hidden_)
    throw std::runtime_error("dataset: coarse label of '" + id +
                             "' is hidden (unlabeled target split)");
  return coarse_;
}

nlohmann::json LabeledSample::to_json() const {
  nlohmann::json j;
  j["id"] = id;
  j["domain"] = domain_name(domain);
  j["fine"] = fine_;
  j["coarse"] = coarse_;
  const Eigen::VectorXd th = theta.to_vector();
  j["theta"] = std::vector<double>(th.data(), th.data() + th.size());
  j["beta"] = std::vector<double>(beta.beta.data(), beta.beta.data() + beta.beta.size());
  j["joints3d"] = joints3d.to_json();
  j["keypoints2d"] = keypoints2d.to_json();
  j["camera"] = camera.to_json();
  j["features"] = std::vector<double>(features.data(), features.data() + features.size());
  return j;
}

LabeledSample LabeledSample::from_json(const nlohmann::json& j) {
  LabeledSample s;
  s.id = j.at("id").get<std::string>();
  s.domain = domain_from_name(j.at("domain").get<std::string>());
  s.fine_ = j.at("fine").get<int>();
  s.coarse_ = j.at("coarse").get<int>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  s.theta = PoseParams::from_vector(
      Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size()));
  const auto beta = j.at("beta").get<std::vector<double>>();
  s.beta = ShapeParams(Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size()));
  s.joints3d = JointSet3D::from_json(j.at("joints3d"));
  s.keypoints2d = KeypointSet2D::from_json(j.at("keypoints2d"));
  s.camera = CameraParams::from_json(j.at("camera"));
  const auto feats = j.at("features").get<std::vector<double>>();
  s.features = Eigen::Map<const Eigen::VectorXd>(feats.data(), feats.size());
  return s;
}

void Dataset::hide_labels() {
  labels_visible_ = false;
  for (auto& s : samples) s.hide_labels();
}

Dataset Dataset::evaluation_view() const {
  Dataset view = *this;
  view.labels_visible_ = true;
  for (auto& s : view.samples) s.unhide_labels();
  return view;
}

Eigen::MatrixXd Dataset::features_matrix() const {
  Eigen::MatrixXd m(size(), feature_dim());
  for (int i = 0; i < size(); ++i) m.row(i) = samples[i].features.transpose();
  return m;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

std::string Dataset::manifest_path(const std::string& jsonl_path) {
  const std::string suffix = ".jsonl";
  if (jsonl_path.size() > suffix.size() &&
      jsonl_path.substr(jsonl_path.size() - suffix.size()) == suffix)
    return jsonl_path.substr(0, jsonl_path.size() - suffix.size()) +
           ".manifest.json";
  return jsonl_path + ".manifest.json";
}

void Dataset::save(const std::string& jsonl_path, const nlohmann::json& config,
                   std::uint64_t seed) const {
  std::ostringstream body;
  for (const auto& s : samples) body << s.to_json().dump() << "\n";
  const std::string bytes = body.str();

  std::ofstream out(jsonl_path);
  if (!out) throw std::runtime_error("dataset: cannot write " + jsonl_path);
  out << bytes;

  std::vector<int> per_fine(Taxonomy::kNumFine, 0);
  for (const auto& s : samples) {
    const int fine = s.to_json().at("fine").get<int>();
    if (fine >= 0 && fine < Taxonomy::kNumFine) ++per_fine[fine];
  }
  nlohmann::json manifest;
  manifest["config"] = config;
  manifest["seed"] = seed;
  manifest["counts"] = {{"total", size()}, {"per_fine", per_fine}};
  manifest["content_hash"] = fnv1a_hex(bytes);
  manifest["label_capability"] = labels_visible_ ? "visible" : "hidden";
  std::ofstream mout(manifest_path(jsonl_path));
  if (!mout)
    throw std::runtime_error("dataset: cannot write " + manifest_path(jsonl_path));
  mout << manifest.dump(2) << "\n";
}

Dataset Dataset::load(const std::string& jsonl_path) {
  std::ifstream in(jsonl_path);
  if (!in) throw std::runtime_error("dataset: cannot open " + jsonl_path);
  Dataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ds.samples.push_back(LabeledSample::from_json(nlohmann::json::parse(line)));
  }
  std::ifstream min(manifest_path(jsonl_path));
  if (min) {
    nlohmann::json manifest;
    min >> manifest;
    if (manifest.value("label_capability", "visible") == std::string("hidden"))
      ds.hide_labels();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Prototype bank
// ---------------------------------------------------------------------------

namespace {

Eigen::Matrix3d rot_x(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
}
Eigen::Matrix3d rot_y(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix();
}
Eigen::Matrix3d rot_z(double a) {
  return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

PosePrototypeBank build_infant_bank() {
  namespace jt = joints;
  PosePrototypeBank bank;

  auto make = [&](const char* name, double sigma, double yaw_range,
                  const Eigen::Matrix3d& root) {
    PosePrototype p;
    p.fine_label = name;
    p.jitter_sigma = sigma;
    p.root_yaw_range = yaw_range;
    p.mean_pose.joint_rotations[jt::kPelvis] = axis_angle_from_matrix(root);
    return p;
  };
  auto set = [](PosePrototype& p, int joint, const Eigen::Matrix3d& r) {
    p.mean_pose.joint_rotations[joint] = axis_angle_from_matrix(r);
  };

  const double half_pi = std::numbers::pi / 2.0;

  // Prone: belly down (root pitched +90 about x), face toward the floor.
  {
    PosePrototype p = make("ProneLying", 0.10, 0.6, rot_x(half_pi));
    set(p, jt::kLeftShoulder, rot_z(-1.2));
    set(p, jt::kRightShoulder, rot_z(1.2));
    set(p, jt::kLeftElbow, rot_y(-0.2));
    set(p, jt::kRightElbow, rot_y(0.2));
    set(p, jt::kLeftHip, rot_x(-0.15));
    set(p, jt::kRightHip, rot_x(-0.15));
    set(p, jt::kLeftKnee, rot_x(0.2));
    set(p, jt::kRightKnee, rot_x(0.2));
    bank.entries.push_back(p);
  }
  {
    // Chest raised on forearms, elbows bent under the shoulders, head up.
    PosePrototype p = make("ForearmSupport", 0.10, 0.6, rot_x(half_pi));
    set(p, jt::kSpine1, rot_x(-0.30));
    set(p, jt::kSpine2, rot_x(-0.30));
    set(p, jt::kNeck, rot_x(-0.50));
    set(p, jt::kLeftShoulder, rot_z(-0.9) * rot_y(-0.4));
    set(p, jt::kRightShoulder, rot_z(0.9) * rot_y(0.4));
    set(p, jt::kLeftElbow, rot_y(-1.3));
    set(p, jt::kRightElbow, rot_y(1.3));
    set(p, jt::kLeftHip, rot_x(-0.1));
    set(p, jt::kRightHip, rot_x(-0.1));
    bank.entries.push_back(p);
  }
  {
    // Hands-and-knees locomotion with opposite arm/leg advanced.
    PosePrototype p = make("ReciprocalCrawling", 0.10, 0.6, rot_x(half_pi));
    set(p, jt::kLeftHip, rot_x(-1.2));
    set(p, jt::kRightHip, rot_x(-0.6));
    set(p, jt::kLeftKnee, rot_x(1.3));
    set(p, jt::kRightKnee, rot_x(0.9));
    set(p, jt::kLeftShoulder, rot_y(-0.8) * rot_z(-0.4));
    set(p, jt::kRightShoulder, rot_y(0.3) * rot_z(0.7));
    set(p, jt::kLeftElbow, rot_y(-0.3));
    set(p, jt::kRightElbow, rot_y(0.6));
    set(p, jt::kNeck, rot_x(-0.6));
    bank.entries.push_back(p);
  }
  {
    // Static hands-and-knees: thighs vertical, arms straight props.
    PosePrototype p = make("FourPointKneeing", 0.10, 0.6, rot_x(half_pi));
    set(p, jt::kLeftHip, rot_x(-half_pi));
    set(p, jt::kRightHip, rot_x(-half_pi));
    set(p, jt::kLeftKnee, rot_x(half_pi));
    set(p, jt::kRightKnee, rot_x(half_pi));
    set(p, jt::kLeftShoulder, rot_y(-1.35));
    set(p, jt::kRightShoulder, rot_y(1.35));
    set(p, jt::kLeftElbow, rot_y(-0.1));
    set(p, jt::kRightElbow, rot_y(0.1));
    set(p, jt::kSpine2, rot_x(-0.15));
    set(p, jt::kNeck, rot_x(-0.7));
    bank.entries.push_back(p);
  }

  // Supine: back down (root pitched -90), face up.
  {
    PosePrototype p = make("SupineLying", 0.10, 0.6, rot_x(-half_pi));
    set(p, jt::kLeftShoulder, rot_z(-1.1));
    set(p, jt::kRightShoulder, rot_z(1.1));
    set(p, jt::kLeftElbow, rot_y(-0.5));
    set(p, jt::kRightElbow, rot_y(0.5));
    set(p, jt::kLeftHip, rot_x(-0.4));
    set(p, jt::kRightHip, rot_x(-0.4));
    set(p, jt::kLeftKnee, rot_x(0.5));
    set(p, jt::kRightKnee, rot_x(0.5));
    bank.entries.push_back(p);
  }
  {
    // Legs lifted toward the chest, arms reaching for knees/feet.
    PosePrototype p = make("HandsToKneeFeet", 0.10, 0.6, rot_x(-half_pi));
    set(p, jt::kLeftHip, rot_x(-1.7));
    set(p, jt::kRightHip, rot_x(-1.7));
    set(p, jt::kLeftKnee, rot_x(0.5));
    set(p, jt::kRightKnee, rot_x(0.5));
    set(p, jt::kLeftShoulder, rot_y(-1.1) * rot_z(-0.3));
    set(p, jt::kRightShoulder, rot_y(1.1) * rot_z(0.3));
    set(p, jt::kLeftElbow, rot_y(-0.3));
    set(p, jt::kRightElbow, rot_y(0.3));
    set(p, jt::kNeck, rot_x(0.3));
    bank.entries.push_back(p);
  }
  {
    // Mid-roll: spun about the long axis onto the side, trunk twisted,
    // top leg crossing over.
    PosePrototype p = make("Rolling", 0.10, 0.6, rot_x(-half_pi) * rot_y(1.2));
    set(p, jt::kSpine2, rot_y(0.45));
    set(p, jt::kLeftHip, rot_x(-1.0));
    set(p, jt::kRightHip, rot_x(-0.2));
    set(p, jt::kLeftKnee, rot_x(0.9));
    set(p, jt::kRightKnee, rot_x(0.3));
    set(p, jt::kLeftShoulder, rot_y(-0.9));
    set(p, jt::kRightShoulder, rot_z(0.9));
    set(p, jt::kNeck, rot_y(0.3));
    bank.entries.push_back(p);
  }

  // Sitting: trunk near vertical, legs forward on the floor.
  {
    PosePrototype p = make("SittingWithSupport", 0.10, 0.6, rot_x(-0.45));
    set(p, jt::kLeftHip, rot_x(-1.45));
    set(p, jt::kRightHip, rot_x(-1.45));
    set(p, jt::kLeftKnee, rot_x(0.45));
    set(p, jt::kRightKnee, rot_x(0.45));
    set(p, jt::kLeftShoulder, rot_z(-1.0));
    set(p, jt::kRightShoulder, rot_z(1.0));
    set(p, jt::kLeftElbow, rot_y(-0.3));
    set(p, jt::kRightElbow, rot_y(0.3));
    bank.entries.push_back(p);
  }
  {
    // Leaning forward onto propping arms, deep hip flexion.
    PosePrototype p = make("SittingWithArmSupport", 0.10, 0.6, rot_x(0.40));
    set(p, jt::kLeftHip, rot_x(-1.8));
    set(p, jt::kRightHip, rot_x(-1.8));
    set(p, jt::kLeftKnee, rot_x(1.1));
    set(p, jt::kRightKnee, rot_x(1.1));
    set(p, jt::kLeftShoulder, rot_z(-0.55) * rot_y(-0.5));
    set(p, jt::kRightShoulder, rot_z(0.55) * rot_y(0.5));
    set(p, jt::kLeftElbow, rot_y(-0.05));
    set(p, jt::kRightElbow, rot_y(0.05));
    set(p, jt::kNeck, rot_x(-0.2));
    bank.entries.push_back(p);
  }
  {
    // Independent sitting, arms free of the floor.
    PosePrototype p = make("SittingWithoutSupport", 0.10, 0.6, rot_x(-0.35));
    set(p, jt::kLeftHip, rot_x(-1.5));
    set(p, jt::kRightHip, rot_x(-1.5));
    set(p, jt::kLeftKnee, rot_x(0.35));
    set(p, jt::kRightKnee, rot_x(0.35));
    set(p, jt::kLeftShoulder, rot_z(-0.35));
    set(p, jt::kRightShoulder, rot_z(0.35));
    set(p, jt::kLeftElbow, rot_y(-0.25));
    set(p, jt::kRightElbow, rot_y(0.25));
    bank.entries.push_back(p);
  }

  // Standing.
  {
    // Bear stance: hands and feet down, hips high, knees straight.
    PosePrototype p = make("FourPointStanding", 0.10, 0.6, rot_x(1.05));
    set(p, jt::kLeftHip, rot_x(-1.9));
    set(p, jt::kRightHip, rot_x(-1.9));
    set(p, jt::kLeftKnee, rot_x(0.15));
    set(p, jt::kRightKnee, rot_x(0.15));
    set(p, jt::kLeftShoulder, rot_y(-1.3) * rot_z(-0.2));
    set(p, jt::kRightShoulder, rot_y(1.3) * rot_z(0.2));
    set(p, jt::kLeftElbow, rot_y(-0.1));
    set(p, jt::kRightElbow, rot_y(0.1));
    set(p, jt::kNeck, rot_x(-0.8));
    bank.entries.push_back(p);
  }
  {
    PosePrototype p = make("Standing", 0.10, 0.6, Eigen::Matrix3d::Identity());
    set(p, jt::kLeftHip, rot_x(-0.08));
    set(p, jt::kRightHip, rot_x(-0.08));
    set(p, jt::kLeftKnee, rot_x(0.12));
    set(p, jt::kRightKnee, rot_x(0.12));
    set(p, jt::kLeftShoulder, rot_z(-1.25));
    set(p, jt::kRightShoulder, rot_z(1.25));
    set(p, jt::kLeftElbow, rot_y(-0.15));
    set(p, jt::kRightElbow, rot_y(0.15));
    bank.entries.push_back(p);
  }

  bank.validate(Taxonomy::aims());
  return bank;
}

}  // namespace

const PosePrototype& PosePrototypeBank::for_fine(int fine) const {
  if (fine < 0 || fine >= static_cast<int>(entries.size()))
    throw std::invalid_argument("bank: unknown fine label index " +
                                std::to_string(fine));
  return entries[fine];
}

void PosePrototypeBank::validate(const Taxonomy& taxonomy) const {
  if (entries.size() != static_cast<size_t>(Taxonomy::kNumFine))
    throw std::invalid_argument("bank: expected 12 prototypes, got " +
                                std::to_string(entries.size()));
  for (int f = 0; f < Taxonomy::kNumFine; ++f) {
    if (entries[f].fine_label != taxonomy.fine_labels()[f])
      throw std::invalid_argument("bank: entry " + std::to_string(f) +
                                  " must be '" + taxonomy.fine_labels()[f] + "'");
    if (entries[f].jitter_sigma < 0 || entries[f].root_yaw_range < 0)
      throw std::invalid_argument("bank: negative jitter/yaw range");
    if (!entries[f].mean_pose.is_finite())
      throw std::invalid_argument("bank: non-finite prototype pose");
  }
  for (int a = 0; a < Taxonomy::kNumFine; ++a) {
    for (int b = a + 1; b < Taxonomy::kNumFine; ++b) {
      const auto& pa = entries[a].mean_pose;
      const auto& pb = entries[b].mean_pose;
      if (taxonomy.same_coarse(a, b)) {
        // Same coarse parent: limb configurations must differ.
        double limb_diff = 0.0;
        for (int j = 1; j < kNumJoints; ++j)
          limb_diff += (pa.joint_rotations[j] - pb.joint_rotations[j]).squaredNorm();
        if (std::sqrt(limb_diff) < 0.2)
          throw std::invalid_argument("bank: prototypes " + entries[a].fine_label +
                                      " and " + entries[b].fine_label +
                                      " share a coarse parent but have nearly "
                                      "identical limbs");
      } else {
        // Different coarse parents: root orientations must differ.
        const Eigen::Matrix3d rel = rodrigues(pa.joint_rotations[0]).transpose() *
                                    rodrigues(pb.joint_rotations[0]);
        if (axis_angle_from_matrix(rel).norm() < 0.2)
          throw std::invalid_argument("bank: prototypes " + entries[a].fine_label +
                                      " and " + entries[b].fine_label +
                                      " differ in coarse parent but share a root "
                                      "orientation");
      }
    }
  }
}

const PosePrototypeBank& PosePrototypeBank::infant() {
  static const PosePrototypeBank bank = build_infant_bank();
  return bank;
}

nlohmann::json PosePrototypeBank::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries) {
    const Eigen::VectorXd v = e.mean_pose.to_vector();
    out.push_back({{"fine", e.fine_label},
                   {"mean_pose", std::vector<double>(v.data(), v.data() + v.size())},
                   {"jitter_sigma", e.jitter_sigma},
                   {"root_yaw_range", e.root_yaw_range}});
  }
  return out;
}

PosePrototypeBank PosePrototypeBank::from_json(const nlohmann::json& j) {
  PosePrototypeBank bank;
  for (const auto& e : j) {
    PosePrototype p;
    p.fine_label = e.at("fine").get<std::string>();
    const auto v = e.at("mean_pose").get<std::vector<double>>();
    p.mean_pose = PoseParams::from_vector(
        Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()));
    p.jitter_sigma = e.at("jitter_sigma").get<double>();
    p.root_yaw_range = e.at("root_yaw_range").get<double>();
    bank.entries.push_back(p);
  }
  bank.validate(Taxonomy::aims());
  return bank;
}

PosePrototypeBank PosePrototypeBank::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("bank: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Shift config
// ---------------------------------------------------------------------------

ShiftConfig ShiftConfig::none() {
  ShiftConfig s;
  s.keypoint_noise_px = 0.0;
  s.feature_rotation_angle = 0.0;
  s.bone_length_scale_range = {1.0, 1.0};
  s.camera_range_override.reset();
  return s;
}

bool ShiftConfig::is_identity() const {
  return keypoint_noise_px == 0.0 && feature_rotation_angle == 0.0 &&
         bone_length_scale_range[0] == 1.0 && bone_length_scale_range[1] == 1.0 &&
         !camera_range_override.has_value();
}

void ShiftConfig::validate() const {
  if (keypoint_noise_px < 0.0)
    throw std::invalid_argument("shift: keypoint noise must be >= 0");
  if (feature_rotation_angle < 0.0 || feature_rotation_angle > std::numbers::pi)
    throw std::invalid_argument("shift: feature rotation angle must be in [0, pi]");
  if (!(bone_length_scale_range[0] > 0.0) ||
      bone_length_scale_range[0] > bone_length_scale_range[1])
    throw std::invalid_argument("shift: invalid bone length scale range");
  if (camera_range_override) camera_range_override->validate();
}

nlohmann::json ShiftConfig::to_json() const {
  nlohmann::json j;
  j["keypoint_noise_px"] = keypoint_noise_px;
  j["feature_rotation_angle"] = feature_rotation_angle;
  j["bone_length_scale_range"] = bone_length_scale_range;
  j["camera_range_override"] =
      camera_range_override ? camera_range_override->to_json() : nlohmann::json();
  return j;
}

ShiftConfig ShiftConfig::from_json(const nlohmann::json& j) {
  ShiftConfig s;
  if (j.contains("keypoint_noise_px"))
    s.keypoint_noise_px = j.at("keypoint_noise_px").get<double>();
  if (j.contains("feature_rotation_angle"))
    s.feature_rotation_angle = j.at("feature_rotation_angle").get<double>();
  if (j.contains("bone_length_scale_range")) {
    s.bone_length_scale_range[0] = j.at("bone_length_scale_range").at(0).get<double>();
    s.bone_length_scale_range[1] = j.at("bone_length_scale_range").at(1).get<double>();
  }
  if (j.contains("camera_range_override") && !j.at("camera_range_override").is_null())
    s.camera_range_override = CameraRanges::from_json(j.at("camera_range_override"));
  s.validate();
  return s;
}

void DatasetConfig::validate() const {
  if (source_count < 1 || target_count < 1 || test_count < 1)
    throw std::invalid_argument("dataset config: counts must be >= 1");
  camera.validate();
  shift.validate();
}

nlohmann::json DatasetConfig::to_json() const {
  return {{"source_count", source_count},
          {"target_count", target_count},
          {"test_count", test_count},
          {"camera", camera.to_json()},
          {"shift", shift.to_json()}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  if (j.contains("source_count")) c.source_count = j.at("source_count").get<int>();
  if (j.contains("target_count")) c.target_count = j.at("target_count").get<int>();
  if (j.contains("test_count")) c.test_count = j.at("test_count").get<int>();
  if (j.contains("camera")) c.camera = CameraRanges::from_json(j.at("camera"));
  if (j.contains("shift")) c.shift = ShiftConfig::from_json(j.at("shift"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Sampling and features
// ---------------------------------------------------------------------------

std::pair<PoseParams, ShapeParams> sample_pose(Rng& rng, int fine,
                                               const PosePrototypeBank& bank) {
  const PosePrototype& proto = bank.for_fine(fine);

  PoseParams theta = proto.mean_pose;
  for (int j = 0; j < kNumJoints; ++j) {
    const Eigen::Vector3d jitter(rng.gaussian(), rng.gaussian(), rng.gaussian());
    theta.joint_rotations[j] =
        clip_axis_angle(theta.joint_rotations[j] + proto.jitter_sigma * jitter);
  }

  // Spin about the world vertical, composed onto the jittered root.
  const double yaw = rng.uniform(-proto.root_yaw_range, proto.root_yaw_range);
  const Eigen::Matrix3d root =
      Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix() *
      rodrigues(theta.joint_rotations[0]);
  theta.joint_rotations[0] = axis_angle_from_matrix(root);

  Eigen::VectorXd beta(kNumShapeCoeffs);
  for (int k = 0; k < kNumShapeCoeffs; ++k)
    beta[k] = std::clamp(rng.gaussian(), -2.0, 2.0);
  return {theta, ShapeParams(std::move(beta))};
}

Eigen::VectorXd extract_features(const KeypointSet2D& keypoints) {
  for (int i = 0; i < kNumJoints; ++i) {
    if (!keypoints.visibility[i])
      throw std::invalid_argument("features: keypoint " + std::to_string(i) +
                                  " is not visible");
    if (!keypoints.points[i].allFinite())
      throw std::invalid_argument("features: non-finite keypoint " +
                                  std::to_string(i));
  }
  const Eigen::Vector2d pelvis = keypoints.points[joints::kPelvis];
  const double scale = (keypoints.points[joints::kNose] - pelvis).norm();
  if (!(scale > 1e-6))
    throw std::invalid_argument(
        "features: degenerate 2D nose-pelvis distance " + std::to_string(scale));

  Eigen::VectorXd f(kFeatureDim);
  for (int i = 0; i < kNumJoints; ++i)
    f.segment<2>(2 * i) = (keypoints.points[i] - pelvis) / scale;

  for (size_t t = 0; t < kAngleTriples.size(); ++t) {
    const auto& triple = kAngleTriples[t];
    const Eigen::Vector2d u = keypoints.points[triple[0]] - keypoints.points[triple[1]];
    const Eigen::Vector2d v = keypoints.points[triple[2]] - keypoints.points[triple[1]];
    const double nu = u.norm(), nv = v.norm();
    double angle = 0.0;
    if (nu > 1e-12 && nv > 1e-12)
      angle = std::acos(std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0));
    f[2 * kNumJoints + static_cast<int>(t)] = angle;
  }
  return f;
}

Eigen::MatrixXd feature_mixing_matrix(int dim, double angle) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("feature mixing: dimension must be even");
  // Fixed seeded orthonormal basis, identical for every dataset.
  static std::map<int, Eigen::MatrixXd> basis_cache;
  auto it = basis_cache.find(dim);
  if (it == basis_cache.end()) {
    Rng rng(0xf3a7u ^ static_cast<std::uint64_t>(dim));
    Eigen::MatrixXd g(dim, dim);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c) g(r, c) = rng.gaussian();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int c = 0; c < dim; ++c)
      if (r(c, c) < 0) q.col(c) = -q.col(c);
    if (q.determinant() < 0) q.col(dim - 1) = -q.col(dim - 1);
    it = basis_cache.emplace(dim, std::move(q)).first;
  }
  const Eigen::MatrixXd& b = it->second;

  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(dim, dim);
  const double c = std::cos(angle), s = std::sin(angle);
  for (int p = 0; p < dim / 2; ++p) {
    block(2 * p, 2 * p) = c;
    block(2 * p, 2 * p + 1) = -s;
    block(2 * p + 1, 2 * p) = s;
    block(2 * p + 1, 2 * p + 1) = c;
  }
  return b * block * b.transpose();
}

LabeledSample apply_domain_shift(const LabeledSample& sample, const ShiftConfig& shift,
                                 Rng& rng, const SkeletonTemplate& tmpl) {
  shift.validate();
  LabeledSample out = sample;

  // Fixed draw order keeps the stream layout independent of magnitudes.
  const double scale =
      rng.uniform(shift.bone_length_scale_range[0], shift.bone_length_scale_range[1]);
  std::array<Eigen::Vector2d, kNumJoints> noise;
  for (auto& n : noise) n = Eigen::Vector2d(rng.gaussian(), rng.gaussian());

  if (shift.bone_length_scale_range[0] != 1.0 ||
      shift.bone_length_scale_range[1] != 1.0) {
    SkeletonTemplate scaled = tmpl;
    for (int j = 0; j < kNumJoints; ++j) {
      scaled.rest_offsets[j] *= scale;
      for (int k = 0; k < scaled.num_shape_coeffs(); ++k)
        scaled.shape_basis[k][j] *= scale;
    }
    out.joints3d = forward_kinematics(scaled, out.theta, out.beta);
    out.keypoints2d = project(out.joints3d, out.camera);
  }

  if (shift.keypoint_noise_px > 0.0)
    for (int j = 0; j < kNumJoints; ++j)
      out.keypoints2d.points[j] += shift.keypoint_noise_px * noise[j];

  out.features = extract_features(out.keypoints2d);
  if (shift.feature_rotation_angle > 0.0)
    out.features = feature_mixing_matrix(static_cast<int>(out.features.size()),
                                         shift.feature_rotation_angle) *
                   out.features;
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace {

enum class Stream : std::uint64_t { kSource = 1, kTargetTrain = 2, kTargetTest = 3 };

LabeledSample generate_sample(const DatasetConfig& config, const Taxonomy& taxonomy,
                              const SkeletonTemplate& tmpl,
                              const PosePrototypeBank& bank, Domain domain,
                              Stream stream, int index, std::uint64_t dataset_seed) {
  Rng rng(derive_seed(dataset_seed, (static_cast<std::uint64_t>(stream) << 40) +
                                        static_cast<std::uint64_t>(index)));
  const int fine = index % Taxonomy::kNumFine;

  const CameraRanges& ranges =
      (domain == Domain::kTarget && config.shift.camera_range_override)
          ? *config.shift.camera_range_override
          : config.camera;

  auto [theta, beta] = sample_pose(rng, fine, bank);
  const JointSet3D joints = forward_kinematics(tmpl, theta, beta);

  constexpr int kMaxRetries = 20;
  std::string last_error;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    const CameraParams camera =
        sample_camera(rng, ranges, joints.positions[joints::kPelvis]);
    try {
      LabeledSample s;
      s.domain = domain;
      s.theta = theta;
      s.beta = beta;
      s.joints3d = joints;
      s.camera = camera;
      s.keypoints2d = project(joints, camera);
      s.features = extract_features(s.keypoints2d);
      s.set_labels(fine, taxonomy.coarse_of(fine));
      if (domain == Domain::kTarget) s = apply_domain_shift(s, config.shift, rng, tmpl);
      char id[32];
      const char* prefix = stream == Stream::kSource        ? "src"
                           : stream == Stream::kTargetTrain ? "tgt"
                                                            : "tst";
      std::snprintf(id, sizeof(id), "%s-%06d", prefix, index);
      s.id = id;
      return s;
    } catch (const std::invalid_argument& e) {
      last_error = e.what();
    }
  }
  throw std::runtime_error("datagen: sample " + std::to_string(index) +
                           " failed after " + std::to_string(kMaxRetries) +
                           " camera retries: " + last_error);
}

Dataset generate_split(const DatasetConfig& config, const Taxonomy& taxonomy,
                       const SkeletonTemplate& tmpl, const PosePrototypeBank& bank,
                       Domain domain, Stream stream, int count, std::uint64_t seed) {
  Dataset ds;
  ds.samples.reserve(count);
  for (int i = 0; i < count; ++i)
    ds.samples.push_back(
        generate_sample(config, taxonomy, tmpl, bank, domain, stream, i, seed));
  return ds;
}

}  // namespace

GeneratedData generate_dataset(const DatasetConfig& config, const Taxonomy& taxonomy,
                               const SkeletonTemplate& tmpl,
                               const PosePrototypeBank& bank, std::uint64_t seed) {
  config.validate();
  bank.validate(taxonomy);
  GeneratedData out;
  out.source = generate_split(config, taxonomy, tmpl, bank, Domain::kSource,
                              Stream::kSource, config.source_count, seed);
  out.target_train = generate_split(config, taxonomy, tmpl, bank, Domain::kTarget,
                                    Stream::kTargetTrain, config.target_count, seed);
  out.target_train.hide_labels();
  out.target_test = generate_split(config, taxonomy, tmpl, bank, Domain::kTarget,
                                   Stream::kTargetTest, config.test_count, seed);
  return out;
}

}  // namespace aims
