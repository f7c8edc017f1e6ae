#pragma once

// Multi-view 2D detections: JSON-Lines IO, the synthetic multi-view
// generator and epoch batching.
//
// Dataset line schema (one object per line, UTF-8):
//   {"sample_id": str, "rig_id": str,
//    "views": [{"camera_id": str, "keypoints": [[x, y], ...], "confidences": [c, ...]}, ...],
//    "gt3d": [[x, y, z], ...]}            // optional, millimetres
//
// Joint order is the 17-joint layout of kJointNames for synthetic data; files
// may use any fixed order with any joint count j >= 2, identical on every line.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "canonpose/geometry.hpp"

namespace canonpose {

struct CameraView {
  std::string camera_id;
  Pose2Dd pose;  // raw (pixel) coordinates and confidences
};

struct MultiViewSample {
  std::string sample_id;
  std::string rig_id;
  std::vector<CameraView> views;
  std::optional<Pose3d> gt3d;  // millimetres
};

struct Dataset {
  std::vector<MultiViewSample> samples;
  int joints = 0;  // 0 for an empty dataset
  std::size_t clamped_confidences = 0;

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

Dataset parse_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset load_dataset(const std::string& path);
std::string to_json_line(const MultiViewSample& sample);
void write_dataset(std::ostream& out, const std::vector<MultiViewSample>& samples);
void save_dataset(const std::string& path, const std::vector<MultiViewSample>& samples);

// ---------------------------------------------------------------------------
// Synthetic data

inline constexpr int kSkeletonJoints = 17;
inline constexpr std::array<const char*, kSkeletonJoints> kJointNames = {
    "hip",      "right_hip",  "right_knee",    "right_ankle", "left_hip",       "left_knee",
    "left_ankle", "spine",    "thorax",        "neck",        "head",           "left_shoulder",
    "left_elbow", "left_wrist", "right_shoulder", "right_elbow", "right_wrist"};
inline constexpr std::array<int, kSkeletonJoints> kJointParents = {-1, 0, 1, 2, 0, 4, 5, 0, 7,
                                                                   8,  9, 8, 11, 12, 8, 14, 15};
inline constexpr int kRightHip = 1;
inline constexpr int kLeftHip = 4;

enum class CameraMode { static_rig, moving };

struct SynthConfig {
  std::size_t num_samples = 1000;
  int num_cameras = 4;
  int joint_count = kSkeletonJoints;  // only the 17-joint tree is generated
  CameraMode camera_mode = CameraMode::static_rig;
  int num_rigs = 1;                   // static mode: samples are spread round-robin over rigs

  double skeleton_height_mm = 1700.0;
  double angle_scale = 0.4;           // multiplies every joint-angle range; 1 is the full table
  double max_elevation_deg = 30.0;
  double azimuth_jitter_deg = 20.0;   // around evenly spaced camera azimuths
  double max_roll_deg = 5.0;

  double noise_std = 0.01;            // per-coordinate, in normalised 2D units
  double occlusion_prob = 0.1;        // per joint
  double occlusion_std = 0.1;         // displacement of occluded joints, normalised units
  double occlusion_confidence = 0.2;  // occluded joints get confidence ~ U(0, this)
  double confidence_delta = 1e-3;     // delta of c = clamp(1 - |e| / (3 sigma + delta), 0, 1)

  double pixel_scale = 500.0;         // pixel = pixel_center + pixel_scale * normalised
  double pixel_center = 500.0;

  std::uint64_t seed = 0;
  std::string id_prefix = "s";
};

struct ViewTruth {
  std::string camera_id;
  Rotation3d rotation;  // world -> camera
};

struct SampleTruth {
  std::string sample_id;
  std::string rig_id;
  Pose3d pose_mm;  // world frame, root at the origin
  std::vector<ViewTruth> views;

  /// Ground truth in the frame of view k.
  Pose3d camera_pose_mm(std::size_t k) const { return pose_mm * views.at(k).rotation.transpose(); }
};

struct SyntheticSet {
  Dataset dataset;
  std::vector<SampleTruth> truth;
};

/// Random articulated 17-joint pose, root-centred, in millimetres.
Pose3d sample_pose(std::mt19937_64& rng, const SynthConfig& cfg);

SyntheticSet generate_synthetic(const SynthConfig& cfg);

/// Maps a pixel observation back to the normalised frame of the generator
/// (inverse of the affine pixel mapping, no re-normalisation).
Points2d pixels_to_normalized(const Points2d& pixels, const SynthConfig& cfg);

// Ground-truth file: one JSON object per line,
//   {"sample_id", "rig_id", "gt3d": [[x,y,z],...],
//    "views": [{"camera_id", "rotation": [[r00,r01,r02],[r10,...],[r20,...]]}]}
void save_ground_truth(const std::string& path, const std::vector<SampleTruth>& truth);
std::vector<SampleTruth> load_ground_truth(const std::string& path);

// ---------------------------------------------------------------------------
// Batching

/// Shuffled index batches for one epoch; the order depends only on
/// (seed, epoch). With rig_aware set, samples of one rig are kept contiguous
/// (rig order is shuffled too) so batches hold as many same-rig pairs as
/// possible; a rig left with a single sample in a batch contributes no
/// camera-consistency terms.
std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& dataset, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch, bool rig_aware);

/// Iterates the batches of successive epochs.
class BatchSampler {
 public:
  BatchSampler(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, bool rig_aware)
      : dataset_(dataset), batch_size_(batch_size), seed_(seed), rig_aware_(rig_aware) {}

  std::vector<std::vector<std::size_t>> epoch(std::size_t e) const {
    return epoch_batches(dataset_, batch_size_, seed_, e, rig_aware_);
  }

 private:
  const Dataset& dataset_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool rig_aware_;
};

}  // namespace canonpose
