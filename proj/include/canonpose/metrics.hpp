#pragma once

// 3D pose metrics. Errors are in the units of the ground truth (mm).

#include <iosfwd>
#include <string>
#include <vector>

#include "canonpose/geometry.hpp"

namespace canonpose {

/// Euclidean error of every joint.
Eigen::VectorXd joint_errors(const Pose3d& pred, const Pose3d& gt);

/// Mean per-joint error; with scale_adjust the prediction is first scaled by
/// optimal_scale(pred, gt). Both poses must be root-centred.
double mpjpe(const Pose3d& pred, const Pose3d& gt, bool scale_adjust);

/// MPJPE after similarity alignment of pred onto gt.
double pmpjpe(const Pose3d& pred, const Pose3d& gt, bool with_scale = true);

/// Percentage of joints over the set with error <= threshold_mm.
double pck(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts, double threshold_mm = 150.0);

/// Largest joint error after similarity alignment.
double aligned_max_error(const Pose3d& pred, const Pose3d& gt);

/// 1 when every aligned joint error is strictly below theta_mm.
int correct_pose(const Pose3d& pred, const Pose3d& gt, double theta_mm);

inline constexpr double kCpsMaxThreshold = 300.0;

struct CpsResult {
  double cps = 0.0;          // mm
  std::vector<double> curve; // CP(theta) at theta = 0, 1, ..., 300 mm
};

/// CPS from per-pose aligned max errors: (1/n) sum max(0, 300 - min(e, 300)),
/// the exact area under the CP step function on [0, 300].
CpsResult cps_from_max_errors(const std::vector<double>& max_errors);
CpsResult cps(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts);

/// For each selected joint: sqrt of the mean per-coordinate variance of its
/// position over the set.
std::vector<double> canonical_dispersion(const std::vector<Pose3d>& poses, const std::vector<int>& joints);

enum class PckAlignment {
  scale,       // prediction scaled by optimal_scale, as for MPJPE
  similarity,  // similarity-aligned, as for PMPJPE
};
std::string to_string(PckAlignment a);
PckAlignment parse_pck_alignment(const std::string& s);

struct EvalReport {
  double mpjpe = 0.0;   // scale-adjusted, mm
  double pmpjpe = 0.0;  // mm
  double pck150 = 0.0;  // percent
  double cps = 0.0;     // mm
  std::vector<double> cp_curve;
  std::size_t n_poses = 0;
  double pck_threshold = 150.0;
  PckAlignment pck_alignment = PckAlignment::scale;
  bool pmpjpe_scale = true;
  std::string mpjpe_frame = "camera";  // "camera", or "rotation_aligned" without camera rotations
  bool depth_flipped = false;

  void write_json(std::ostream& out) const;
  void save_json(const std::string& path) const;
  /// theta_mm,cp with one row per curve sample.
  void write_curve_csv(std::ostream& out) const;
  void save_curve_csv(const std::string& path) const;
};

/// Metrics over matched root-centred prediction / ground-truth lists.
EvalReport compute_report(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts,
                          PckAlignment pck_alignment = PckAlignment::scale, double pck_threshold = 150.0,
                          bool pmpjpe_scale = true);

}  // namespace canonpose
