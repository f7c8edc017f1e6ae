#include "canonpose/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "canonpose/rng.hpp"

namespace canonpose {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& source, std::size_t line, const std::string& field, const std::string& what) {
  throw ParseError(source + ":" + std::to_string(line) + ": field '" + field + "': " + what);
}

double finite_number(const json& v, const std::string& source, std::size_t line, const std::string& field) {
  if (!v.is_number()) fail(source, line, field, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(source, line, field, "non-finite value");
  return x;
}

template <int Cols>
Eigen::Matrix<double, Eigen::Dynamic, Cols> parse_rows(const json& arr, const std::string& source, std::size_t line,
                                                       const std::string& field) {
  if (!arr.is_array()) fail(source, line, field, "expected an array");
  Eigen::Matrix<double, Eigen::Dynamic, Cols> out(Eigen::Index(arr.size()), Cols);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& row = arr[i];
    if (!row.is_array() || row.size() != Cols) {
      fail(source, line, field + "[" + std::to_string(i) + "]", "expected " + std::to_string(Cols) + " numbers");
    }
    for (int c = 0; c < Cols; ++c) {
      out(Eigen::Index(i), c) = finite_number(row[std::size_t(c)], source, line, field);
    }
  }
  return out;
}

const json& required(const json& obj, const char* key, const std::string& source, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(source, line, key, "missing");
  return *it;
}

std::string required_string(const json& obj, const char* key, const std::string& source, std::size_t line) {
  const json& v = required(obj, key, source, line);
  if (!v.is_string()) fail(source, line, key, "expected a string");
  return v.get<std::string>();
}

template <typename Derived>
ordered_json rows_to_json(const Eigen::MatrixBase<Derived>& m) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    arr.push_back(std::move(row));
  }
  return arr;
}

Rotation3d axis_rotation(int axis, double angle) {
  return Eigen::AngleAxisd(angle, Eigen::Vector3d::Unit(axis)).toRotationMatrix();
}

constexpr double kDeg = std::numbers::pi / 180.0;

// Bone from parent to joint in the rest pose (y up, +x towards the subject's
// left, +z forward), millimetres for a 1700 mm skeleton.
const std::array<Eigen::Vector3d, kSkeletonJoints> kRestBones = {
    Eigen::Vector3d(0, 0, 0),        // hip (root)
    Eigen::Vector3d(-130, 0, 0),     // right hip
    Eigen::Vector3d(0, -450, 0),     // right knee
    Eigen::Vector3d(0, -450, 0),     // right ankle
    Eigen::Vector3d(130, 0, 0),      // left hip
    Eigen::Vector3d(0, -450, 0),     // left knee
    Eigen::Vector3d(0, -450, 0),     // left ankle
    Eigen::Vector3d(0, 240, 0),      // spine
    Eigen::Vector3d(0, 250, 0),      // thorax
    Eigen::Vector3d(0, 120, 30),     // neck
    Eigen::Vector3d(0, 190, 0),      // head
    Eigen::Vector3d(170, -20, 0),    // left shoulder
    Eigen::Vector3d(0, -280, 0),     // left elbow
    Eigen::Vector3d(0, -250, 0),     // left wrist
    Eigen::Vector3d(-170, -20, 0),   // right shoulder
    Eigen::Vector3d(0, -280, 0),     // right elbow
    Eigen::Vector3d(0, -250, 0),     // right wrist
};

struct AngleRange {
  double lo, hi;  // degrees
};
struct JointLimits {
  AngleRange flex{0, 0};   // about x
  AngleRange twist{0, 0};  // about y
  AngleRange side{0, 0};   // about z
};

// Local rotation at joint k acts on the bones to its children.
const std::array<JointLimits, kSkeletonJoints> kLimits = {
    JointLimits{{-10, 10}, {0, 0}, {-10, 10}},      // root lean (heading is drawn separately)
    JointLimits{{-100, 30}, {-20, 20}, {-40, 10}},  // right hip
    JointLimits{{0, 130}, {0, 0}, {0, 0}},          // right knee
    JointLimits{},                                  // right ankle
    JointLimits{{-100, 30}, {-20, 20}, {-10, 40}},  // left hip
    JointLimits{{0, 130}, {0, 0}, {0, 0}},          // left knee
    JointLimits{},                                  // left ankle
    JointLimits{{-15, 45}, {-35, 35}, {-20, 20}},   // spine
    JointLimits{{-10, 20}, {-15, 15}, {-10, 10}},   // thorax
    JointLimits{{-30, 40}, {-50, 50}, {-20, 20}},   // neck
    JointLimits{},                                  // head
    JointLimits{{-170, 60}, {-60, 60}, {-20, 170}}, // left shoulder
    JointLimits{{-150, 0}, {0, 0}, {0, 0}},         // left elbow
    JointLimits{},                                  // left wrist
    JointLimits{{-170, 60}, {-60, 60}, {-170, 20}}, // right shoulder
    JointLimits{{-150, 0}, {0, 0}, {0, 0}},         // right elbow
    JointLimits{},                                  // right wrist
};

double draw(std::mt19937_64& rng, AngleRange r, double scale) {
  if (r.lo == r.hi) return r.lo * scale * kDeg;
  return std::uniform_real_distribution<double>(r.lo * scale, r.hi * scale)(rng) * kDeg;
}

std::vector<Rotation3d> draw_rig(std::mt19937_64& rng, const SynthConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double base = 2.0 * std::numbers::pi * unit(rng);
  std::vector<Rotation3d> rig;
  for (int k = 0; k < cfg.num_cameras; ++k) {
    const double azimuth = base + 2.0 * std::numbers::pi * k / cfg.num_cameras +
                           (2.0 * unit(rng) - 1.0) * cfg.azimuth_jitter_deg * kDeg;
    const double elevation = (2.0 * unit(rng) - 1.0) * cfg.max_elevation_deg * kDeg;
    const double roll = (2.0 * unit(rng) - 1.0) * cfg.max_roll_deg * kDeg;
    rig.push_back(axis_rotation(2, roll) * axis_rotation(0, elevation) * axis_rotation(1, azimuth));
  }
  return rig;
}

double rest_height() {
  std::array<Eigen::Vector3d, kSkeletonJoints> pos;
  for (int k = 0; k < kSkeletonJoints; ++k) {
    pos[k] = kJointParents[k] < 0 ? Eigen::Vector3d(Eigen::Vector3d::Zero())
                                   : Eigen::Vector3d(pos[kJointParents[k]] + kRestBones[k]);
  }
  double lo = pos[0].y(), hi = pos[0].y();
  for (const auto& p : pos) {
    lo = std::min(lo, p.y());
    hi = std::max(hi, p.y());
  }
  return hi - lo;
}

}  // namespace

// ---------------------------------------------------------------------------
// JSON Lines

Dataset parse_dataset(std::istream& in, const std::string& source) {
  Dataset ds;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(source, line_no, "<line>", e.what());
    }
    if (!obj.is_object()) fail(source, line_no, "<line>", "expected a JSON object");

    MultiViewSample sample;
    sample.sample_id = required_string(obj, "sample_id", source, line_no);
    sample.rig_id = required_string(obj, "rig_id", source, line_no);
    const json& views = required(obj, "views", source, line_no);
    if (!views.is_array() || views.empty()) fail(source, line_no, "views", "expected a non-empty array");

    std::set<std::string> seen;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const json& vobj = views[v];
      const std::string prefix = "views[" + std::to_string(v) + "].";
      if (!vobj.is_object()) fail(source, line_no, prefix, "expected an object");
      CameraView view;
      view.camera_id = required_string(vobj, "camera_id", source, line_no);
      if (!seen.insert(view.camera_id).second) {
        throw DuplicateCameraInSample(source + ":" + std::to_string(line_no) + ": camera '" + view.camera_id +
                                      "' appears twice in sample '" + sample.sample_id + "'");
      }
      view.pose.joints = parse_rows<2>(required(vobj, "keypoints", source, line_no), source, line_no,
                                       prefix + "keypoints");
      const json& conf = required(vobj, "confidences", source, line_no);
      if (!conf.is_array() || conf.size() != std::size_t(view.pose.joints.rows())) {
        fail(source, line_no, prefix + "confidences", "expected one value per keypoint");
      }
      view.pose.confidences.resize(Eigen::Index(conf.size()));
      for (std::size_t i = 0; i < conf.size(); ++i) {
        double c = finite_number(conf[i], source, line_no, prefix + "confidences");
        if (c < 0.0 || c > 1.0) {
          c = std::clamp(c, 0.0, 1.0);
          ++ds.clamped_confidences;
        }
        view.pose.confidences(Eigen::Index(i)) = c;
      }
      const int j = int(view.pose.joints.rows());
      if (j < 2) fail(source, line_no, prefix + "keypoints", "need at least 2 joints");
      if (ds.joints == 0) ds.joints = j;
      if (j != ds.joints) {
        throw InconsistentJointCount(source + ":" + std::to_string(line_no) + ": " + std::to_string(j) +
                                     " joints, expected " + std::to_string(ds.joints));
      }
      sample.views.push_back(std::move(view));
    }
    if (auto it = obj.find("gt3d"); it != obj.end() && !it->is_null()) {
      Pose3d gt = parse_rows<3>(*it, source, line_no, "gt3d");
      if (gt.rows() != ds.joints) {
        throw InconsistentJointCount(source + ":" + std::to_string(line_no) + ": gt3d has " +
                                     std::to_string(gt.rows()) + " joints, expected " + std::to_string(ds.joints));
      }
      sample.gt3d = std::move(gt);
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  return parse_dataset(in, path);
}

std::string to_json_line(const MultiViewSample& sample) {
  ordered_json obj;
  obj["sample_id"] = sample.sample_id;
  obj["rig_id"] = sample.rig_id;
  obj["views"] = ordered_json::array();
  for (const auto& v : sample.views) {
    ordered_json vj;
    vj["camera_id"] = v.camera_id;
    vj["keypoints"] = rows_to_json(v.pose.joints);
    vj["confidences"] = ordered_json::array();
    for (Eigen::Index i = 0; i < v.pose.confidences.size(); ++i) vj["confidences"].push_back(v.pose.confidences(i));
    obj["views"].push_back(std::move(vj));
  }
  if (sample.gt3d) obj["gt3d"] = rows_to_json(*sample.gt3d);
  return obj.dump();
}

void write_dataset(std::ostream& out, const std::vector<MultiViewSample>& samples) {
  for (const auto& s : samples) out << to_json_line(s) << '\n';
}

void save_dataset(const std::string& path, const std::vector<MultiViewSample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_dataset(out, samples);
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Synthetic generator

Pose3d sample_pose(std::mt19937_64& rng, const SynthConfig& cfg) {
  static const double height_scale_unit = 1.0 / rest_height();
  const double bone_scale = cfg.skeleton_height_mm * height_scale_unit;

  std::array<Rotation3d, kSkeletonJoints> global;
  Pose3d pose(kSkeletonJoints, 3);
  const double heading = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  for (int k = 0; k < kSkeletonJoints; ++k) {
    const JointLimits& lim = kLimits[std::size_t(k)];
    const double flex = draw(rng, lim.flex, cfg.angle_scale);
    const double twist = draw(rng, lim.twist, cfg.angle_scale);
    const double side = draw(rng, lim.side, cfg.angle_scale);
    const Rotation3d local = axis_rotation(1, twist) * axis_rotation(2, side) * axis_rotation(0, flex);
    const int parent = kJointParents[std::size_t(k)];
    if (parent < 0) {
      global[0] = axis_rotation(1, heading) * local;
      pose.row(0).setZero();
    } else {
      pose.row(k) = pose.row(parent) + (global[std::size_t(parent)] * (bone_scale * kRestBones[std::size_t(k)])).transpose();
      global[std::size_t(k)] = global[std::size_t(parent)] * local;
    }
  }
  return pose;
}

Points2d pixels_to_normalized(const Points2d& pixels, const SynthConfig& cfg) {
  return (pixels.array() - cfg.pixel_center) / cfg.pixel_scale;
}

SyntheticSet generate_synthetic(const SynthConfig& cfg) {
  if (cfg.num_cameras < 2) throw std::invalid_argument("generate_synthetic: need at least 2 cameras");
  if (cfg.noise_std < 0.0) throw std::invalid_argument("generate_synthetic: noise_std must be >= 0");
  if (cfg.joint_count != kSkeletonJoints) {
    throw std::invalid_argument("generate_synthetic: only the 17-joint skeleton is available");
  }
  if (cfg.num_rigs < 1) throw std::invalid_argument("generate_synthetic: need at least one rig");

  std::mt19937_64 rng(derive_seed(cfg.seed, "synth"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::vector<Rotation3d>> rigs;
  if (cfg.camera_mode == CameraMode::static_rig) {
    for (int r = 0; r < cfg.num_rigs; ++r) rigs.push_back(draw_rig(rng, cfg));
  }

  SyntheticSet out;
  out.dataset.joints = cfg.num_samples > 0 ? kSkeletonJoints : 0;
  const int width = std::max<int>(6, int(std::to_string(cfg.num_samples).size()));
  for (std::size_t n = 0; n < cfg.num_samples; ++n) {
    std::string number = std::to_string(n);
    number.insert(0, std::size_t(std::max(0, width - int(number.size()))), '0');

    SampleTruth truth;
    truth.sample_id = cfg.id_prefix + number;
    truth.pose_mm = sample_pose(rng, cfg);
    std::vector<Rotation3d> cams;
    if (cfg.camera_mode == CameraMode::static_rig) {
      const std::size_t r = n % rigs.size();
      truth.rig_id = "rig" + std::to_string(r);
      cams = rigs[r];
    } else {
      truth.rig_id = "rig-" + truth.sample_id;
      cams = draw_rig(rng, cfg);
    }

    MultiViewSample sample;
    sample.sample_id = truth.sample_id;
    sample.rig_id = truth.rig_id;
    sample.gt3d = truth.pose_mm;
    for (int k = 0; k < cfg.num_cameras; ++k) {
      const std::string cam_id = "cam" + std::to_string(k);
      truth.views.push_back({cam_id, cams[std::size_t(k)]});

      Pose2Dd exact;
      exact.joints = project_weak_perspective(cams[std::size_t(k)], truth.pose_mm);
      exact.confidences = Eigen::VectorXd::Ones(kSkeletonJoints);
      const Points2d clean = normalize_pose2d(exact).joints;

      CameraView view;
      view.camera_id = cam_id;
      view.pose.joints.resize(kSkeletonJoints, 2);
      view.pose.confidences.resize(kSkeletonJoints);
      for (int i = 0; i < kSkeletonJoints; ++i) {
        const bool occluded = cfg.occlusion_prob > 0.0 && unit(rng) < cfg.occlusion_prob;
        const double sigma = occluded ? cfg.occlusion_std : cfg.noise_std;
        const Eigen::RowVector2d noise(sigma * normal(rng), sigma * normal(rng));
        double conf = 0.0;
        if (occluded) {
          conf = cfg.occlusion_confidence * unit(rng);
        } else {
          conf = std::clamp(1.0 - noise.norm() / (3.0 * cfg.noise_std + cfg.confidence_delta), 0.0, 1.0);
        }
        view.pose.joints.row(i) = (clean.row(i) + noise).array() * cfg.pixel_scale + cfg.pixel_center;
        view.pose.confidences(i) = conf;
      }
      sample.views.push_back(std::move(view));
    }
    out.dataset.samples.push_back(std::move(sample));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

void save_ground_truth(const std::string& path, const std::vector<SampleTruth>& truth) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& t : truth) {
    ordered_json obj;
    obj["sample_id"] = t.sample_id;
    obj["rig_id"] = t.rig_id;
    obj["gt3d"] = rows_to_json(t.pose_mm);
    obj["views"] = ordered_json::array();
    for (const auto& v : t.views) {
      obj["views"].push_back({{"camera_id", v.camera_id}, {"rotation", rows_to_json(v.rotation)}});
    }
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<SampleTruth> load_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth: " + path);
  std::vector<SampleTruth> out;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(path, line_no, "<line>", e.what());
    }
    SampleTruth t;
    t.sample_id = required_string(obj, "sample_id", path, line_no);
    t.rig_id = required_string(obj, "rig_id", path, line_no);
    t.pose_mm = parse_rows<3>(required(obj, "gt3d", path, line_no), path, line_no, "gt3d");
    const json& views = required(obj, "views", path, line_no);
    if (!views.is_array()) fail(path, line_no, "views", "expected an array");
    for (const json& v : views) {
      ViewTruth vt;
      vt.camera_id = required_string(v, "camera_id", path, line_no);
      const auto r = parse_rows<3>(required(v, "rotation", path, line_no), path, line_no, "rotation");
      if (r.rows() != 3) fail(path, line_no, "rotation", "expected a 3x3 matrix");
      vt.rotation = r;
      t.views.push_back(std::move(vt));
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch, bool rig_aware) {
  if (batch_size == 0) throw std::invalid_argument("epoch_batches: batch size must be positive");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, "batches", epoch));
  std::shuffle(order.begin(), order.end(), rng);

  if (rig_aware) {
    std::vector<std::string> rig_order;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t idx : order) {
      auto& m = members[dataset.samples[idx].rig_id];
      if (m.empty()) rig_order.push_back(dataset.samples[idx].rig_id);
      m.push_back(idx);
    }
    order.clear();
    for (const auto& rig : rig_order) order.insert(order.end(), members[rig].begin(), members[rig].end());
  }

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(stop));
  }
  return batches;
}

}  // namespace canonpose
