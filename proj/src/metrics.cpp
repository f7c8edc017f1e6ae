#include "canonpose/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

namespace canonpose {
namespace {

void require_matched(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts, const char* op) {
  if (preds.size() != gts.size()) throw std::invalid_argument(std::string(op) + ": prediction/ground-truth count differs");
  if (preds.empty()) throw EmptyEvalSet(std::string(op) + ": no poses");
}

}  // namespace

Eigen::VectorXd joint_errors(const Pose3d& pred, const Pose3d& gt) {
  if (pred.rows() != gt.rows()) throw std::invalid_argument("joint_errors: joint count mismatch");
  return (pred - gt).rowwise().norm();
}

double mpjpe(const Pose3d& pred, const Pose3d& gt, bool scale_adjust) {
  if (!scale_adjust) return joint_errors(pred, gt).mean();
  return joint_errors(optimal_scale(pred, gt) * pred, gt).mean();
}

double pmpjpe(const Pose3d& pred, const Pose3d& gt, bool with_scale) {
  return joint_errors(similarity_align(pred, gt, with_scale).aligned, gt).mean();
}

double pck(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts, double threshold_mm) {
  require_matched(preds, gts, "pck");
  std::size_t hits = 0, total = 0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const Eigen::VectorXd e = joint_errors(preds[k], gts[k]);
    hits += std::size_t((e.array() <= threshold_mm).count());
    total += std::size_t(e.size());
  }
  return 100.0 * double(hits) / double(total);
}

double aligned_max_error(const Pose3d& pred, const Pose3d& gt) {
  return joint_errors(similarity_align(pred, gt).aligned, gt).maxCoeff();
}

int correct_pose(const Pose3d& pred, const Pose3d& gt, double theta_mm) {
  return aligned_max_error(pred, gt) < theta_mm ? 1 : 0;
}

CpsResult cps_from_max_errors(const std::vector<double>& max_errors) {
  if (max_errors.empty()) throw EmptyEvalSet("cps: no poses");
  const double n = double(max_errors.size());
  CpsResult out;
  for (double e : max_errors) out.cps += std::max(0.0, kCpsMaxThreshold - std::min(e, kCpsMaxThreshold));
  out.cps /= n;
  std::vector<double> sorted = max_errors;
  std::sort(sorted.begin(), sorted.end());
  out.curve.reserve(std::size_t(kCpsMaxThreshold) + 1);
  for (int theta = 0; theta <= int(kCpsMaxThreshold); ++theta) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), double(theta)) - sorted.begin();
    out.curve.push_back(double(below) / n);
  }
  return out;
}

CpsResult cps(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts) {
  require_matched(preds, gts, "cps");
  std::vector<double> errors;
  errors.reserve(preds.size());
  for (std::size_t k = 0; k < preds.size(); ++k) errors.push_back(aligned_max_error(preds[k], gts[k]));
  return cps_from_max_errors(errors);
}

std::vector<double> canonical_dispersion(const std::vector<Pose3d>& poses, const std::vector<int>& joints) {
  if (poses.empty()) throw EmptyEvalSet("canonical_dispersion: no poses");
  std::vector<double> out;
  for (int j : joints) {
    Eigen::MatrixXd points(Eigen::Index(poses.size()), 3);
    for (std::size_t k = 0; k < poses.size(); ++k) points.row(Eigen::Index(k)) = poses[k].row(j);
    const Eigen::MatrixXd centred = points.rowwise() - points.colwise().mean();
    const double var_sum = centred.squaredNorm() / double(poses.size());
    out.push_back(std::sqrt(var_sum / 3.0));
  }
  return out;
}

std::string to_string(PckAlignment a) { return a == PckAlignment::scale ? "scale" : "similarity"; }

PckAlignment parse_pck_alignment(const std::string& s) {
  if (s == "scale") return PckAlignment::scale;
  if (s == "similarity") return PckAlignment::similarity;
  throw ConfigError("unknown pck alignment '" + s + "'");
}

EvalReport compute_report(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts,
                          PckAlignment pck_alignment, double pck_threshold, bool pmpjpe_scale) {
  require_matched(preds, gts, "evaluation");
  EvalReport r;
  r.n_poses = preds.size();
  r.pck_threshold = pck_threshold;
  r.pck_alignment = pck_alignment;
  r.pmpjpe_scale = pmpjpe_scale;
  std::vector<Pose3d> pck_preds;
  pck_preds.reserve(preds.size());
  for (std::size_t k = 0; k < preds.size(); ++k) {
    r.mpjpe += mpjpe(preds[k], gts[k], true);
    r.pmpjpe += pmpjpe(preds[k], gts[k], pmpjpe_scale);
    pck_preds.push_back(pck_alignment == PckAlignment::scale ? Pose3d(optimal_scale(preds[k], gts[k]) * preds[k])
                                                             : similarity_align(preds[k], gts[k]).aligned);
  }
  r.mpjpe /= double(preds.size());
  r.pmpjpe /= double(preds.size());
  r.pck150 = pck(pck_preds, gts, pck_threshold);
  CpsResult c = cps(preds, gts);
  r.cps = c.cps;
  r.cp_curve = std::move(c.curve);
  return r;
}

void EvalReport::write_json(std::ostream& out) const {
  nlohmann::ordered_json j;
  j["n_poses"] = n_poses;
  j["mpjpe_mm"] = mpjpe;
  j["mpjpe_frame"] = mpjpe_frame;
  j["pmpjpe_mm"] = pmpjpe;
  j["pmpjpe_scale"] = pmpjpe_scale;
  j["pck150"] = pck150;
  j["pck_threshold_mm"] = pck_threshold;
  j["pck_alignment"] = to_string(pck_alignment);
  j["cps_mm"] = cps;
  j["cp_at_180"] = cp_curve.size() > 180 ? cp_curve[180] : 0.0;
  j["depth_flipped"] = depth_flipped;
  j["cp_curve"] = cp_curve;
  out << j.dump(2) << '\n';
}

void EvalReport::save_json(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_json(out);
  if (!out) throw IoError("failed writing " + path);
}

void EvalReport::write_curve_csv(std::ostream& out) const {
  out << "theta_mm,cp\n";
  char buf[64];
  for (std::size_t k = 0; k < cp_curve.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", k, cp_curve[k]);
    out << buf;
  }
}

void EvalReport::save_curve_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_curve_csv(out);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace canonpose
