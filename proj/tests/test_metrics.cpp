#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "canonpose/evaluation.hpp"
#include "canonpose/metrics.hpp"
#include "support.hpp"

namespace canonpose {
namespace {

using testing::random_pose;
using testing::random_rotation;

Pose3d centred_pose(std::mt19937_64& rng, double scale = 500.0) {
  return center_on_root(random_pose(rng, 17, scale));
}

TEST(Mpjpe, Examples) {
  std::mt19937_64 rng(1);
  const Pose3d gt = centred_pose(rng);
  EXPECT_EQ(mpjpe(gt, gt, false), 0.0);
  Pose3d shifted = gt;
  shifted.col(0).array() += 10.0;
  EXPECT_NEAR(mpjpe(shifted, gt, false), 10.0, 1e-12);
  EXPECT_NEAR(mpjpe(Pose3d(0.5 * gt), gt, true), 0.0, 1e-9);
  EXPECT_GT(mpjpe(Pose3d(0.5 * gt), gt, false), 1.0);
}

TEST(Mpjpe, ScaleAdjustedIsScaleInvariant) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    const Pose3d gt = centred_pose(rng), pred = centred_pose(rng);
    const double s = std::uniform_real_distribution<double>(0.01, 100.0)(rng);
    EXPECT_NEAR(mpjpe(Pose3d(s * pred), gt, true), mpjpe(pred, gt, true), 1e-8);
  }
}

TEST(Mpjpe, RotationAboutAnAxisIsMonotone) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose3d gt = centred_pose(rng);
    const Eigen::Vector3d axis = testing::random_axis_angle(rng, 1.0).normalized();
    double previous = -1.0;
    for (int deg = 0; deg <= 90; ++deg) {
      const Rotation3d r = rodrigues(AxisAngled(axis * deg * std::numbers::pi / 180.0));
      const double e = mpjpe(Pose3d(gt * r.transpose()), gt, false);
      if (deg == 0) {
        EXPECT_NEAR(e, 0.0, 1e-9);
      }
      EXPECT_GE(e, previous - 1e-9);
      previous = e;
    }
  }
}

TEST(Pmpjpe, RemovesSimilarityTransforms) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 50; ++k) {
    const Pose3d gt = centred_pose(rng);
    const double s = std::uniform_real_distribution<double>(0.2, 5.0)(rng);
    const Pose3d pred = s * gt * random_rotation(rng).transpose();
    EXPECT_LT(pmpjpe(pred, gt), 1e-8);
    EXPECT_LT(pmpjpe(Pose3d(2.0 * gt), gt), 1e-8);
  }
}

TEST(Pmpjpe, InvariantUnderSimilarityOfPrediction) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    const Pose3d gt = centred_pose(rng), pred = centred_pose(rng);
    const double s = std::uniform_real_distribution<double>(0.2, 5.0)(rng);
    const Pose3d moved = (s * pred * random_rotation(rng).transpose()).rowwise() + Eigen::RowVector3d(3, -7, 11);
    EXPECT_NEAR(pmpjpe(moved, gt), pmpjpe(pred, gt), 1e-7);
  }
}

// Alignment minimises the summed squared error, so dominance is asserted on
// the root-mean-square joint error; the mean Euclidean error can exceed the
// scale-adjusted one by a few percent.
TEST(Pmpjpe, AlignmentNeverIncreasesRmsError) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0.0, 80.0);
  auto rms = [](const Pose3d& a, const Pose3d& b) { return std::sqrt((a - b).squaredNorm() / double(a.rows())); };
  for (int k = 0; k < 1000; ++k) {
    const Pose3d gt = centred_pose(rng);
    Pose3d pred = gt;
    if (k % 2 == 0) {
      pred = centred_pose(rng);
    } else {
      for (Eigen::Index i = 0; i < pred.size(); ++i) pred(i) += noise(rng);
      pred = center_on_root(pred);
    }
    const double aligned = rms(similarity_align(pred, gt).aligned, gt);
    const double scaled = rms(Pose3d(optimal_scale(pred, gt) * pred), gt);
    EXPECT_LE(aligned, scaled + 1e-9);
  }
}

TEST(Pck, BoundaryIsInclusive) {
  std::mt19937_64 rng(7);
  const Pose3d gt = centred_pose(rng).array().round();
  Pose3d pred = gt;
  pred.col(2).array() += 150.0;
  EXPECT_DOUBLE_EQ(pck({pred}, {gt}, 150.0), 100.0);
  EXPECT_DOUBLE_EQ(pck({gt}, {gt}), 100.0);
  pred.col(2).array() += 1e-6;
  EXPECT_DOUBLE_EQ(pck({pred}, {gt}, 150.0), 0.0);
  EXPECT_THROW(pck({}, {}), EmptyEvalSet);
}

TEST(Pck, MatchesBruteForceCount) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> err(0.0, 300.0);
  std::vector<Pose3d> preds, gts;
  int inside = 0, total = 0;
  for (int k = 0; k < 40; ++k) {
    const Pose3d gt = centred_pose(rng);
    Pose3d pred = gt;
    for (Eigen::Index i = 0; i < gt.rows(); ++i) {
      const double e = err(rng);
      const Eigen::Vector3d dir = testing::random_axis_angle(rng, 1.0).normalized();
      pred.row(i) += e * dir.transpose();
      inside += e <= 150.0 ? 1 : 0;
      ++total;
    }
    preds.push_back(pred);
    gts.push_back(gt);
  }
  EXPECT_NEAR(pck(preds, gts), 100.0 * inside / total, 1e-9);
}

TEST(Pck, MonotoneInThreshold) {
  std::mt19937_64 rng(9);
  std::vector<Pose3d> preds, gts;
  for (int k = 0; k < 20; ++k) {
    gts.push_back(centred_pose(rng));
    preds.push_back(centred_pose(rng));
  }
  double previous = 0.0;
  for (double t = 0.0; t <= 2000.0; t += 25.0) {
    const double v = pck(preds, gts, t);
    EXPECT_GE(v, previous);
    EXPECT_LE(v, 100.0);
    previous = v;
  }
}

TEST(CorrectPose, StrictBoundary) {
  std::mt19937_64 rng(10);
  const Pose3d gt = centred_pose(rng);
  EXPECT_EQ(correct_pose(gt, gt, 1e-6), 1);
  const double e = 180.0;
  EXPECT_EQ(correct_pose(gt, gt, e), 1);
  // A pose whose aligned max error is exactly theta is not correct.
  Pose3d pred = gt;
  pred.row(5) += Eigen::RowVector3d(0, 0, 250.0);
  const double m = aligned_max_error(pred, gt);
  EXPECT_EQ(correct_pose(pred, gt, m), 0);
  EXPECT_EQ(correct_pose(pred, gt, std::nextafter(m, 1e9)), 1);
}

TEST(Cps, Examples) {
  EXPECT_DOUBLE_EQ(cps_from_max_errors({0.0, 0.0}).cps, 300.0);
  EXPECT_DOUBLE_EQ(cps_from_max_errors({150.0}).cps, 150.0);
  EXPECT_DOUBLE_EQ(cps_from_max_errors({400.0}).cps, 0.0);
  EXPECT_DOUBLE_EQ(cps_from_max_errors({100.0, 500.0}).cps, 100.0);
  EXPECT_THROW(cps_from_max_errors({}), EmptyEvalSet);
  const auto c = cps_from_max_errors({150.0});
  ASSERT_EQ(c.curve.size(), 301u);
  EXPECT_EQ(c.curve[150], 0.0);
  EXPECT_EQ(c.curve[151], 1.0);
}

// Trapezoidal integration of the brute-force CP step function.
double cps_by_grid(const std::vector<double>& errors, double step) {
  auto cp = [&](double theta) {
    int correct = 0;
    for (double e : errors) correct += e < theta ? 1 : 0;
    return double(correct) / double(errors.size());
  };
  const int n = int(std::lround(300.0 / step));
  double sum = 0.0, prev = cp(0.0);
  for (int k = 1; k <= n; ++k) {
    const double cur = cp(k * step);
    sum += 0.5 * (prev + cur) * step;
    prev = cur;
  }
  return sum;
}

TEST(Cps, ExactFormulaMatchesGridIntegration) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> err(0.0, 400.0);
  for (int set = 0; set < 100; ++set) {
    std::vector<double> errors(20);
    for (double& e : errors) e = err(rng);
    EXPECT_NEAR(cps_from_max_errors(errors).cps, cps_by_grid(errors, 0.01), 0.02);
  }
}

TEST(Cps, CurveIsNondecreasingAndBounded) {
  std::mt19937_64 rng(12);
  std::vector<Pose3d> preds, gts;
  for (int k = 0; k < 30; ++k) {
    gts.push_back(centred_pose(rng, 300.0));
    Pose3d p = gts.back();
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += std::normal_distribution<double>(0.0, 40.0)(rng);
    preds.push_back(p);
  }
  const auto c = cps(preds, gts);
  EXPECT_GE(c.cps, 0.0);
  EXPECT_LE(c.cps, 300.0);
  for (std::size_t k = 1; k < c.curve.size(); ++k) EXPECT_GE(c.curve[k], c.curve[k - 1]);
}

// Two predictions with equal aligned mean error: one spreads its error over
// every joint, the other puts it on a single joint.
TEST(Cps, EqualMeanErrorDifferentCpAt180) {
  std::mt19937_64 rng(13);
  const Pose3d gt = centred_pose(rng);
  Pose3d outlier = gt;
  outlier.row(16) += Eigen::RowVector3d(400.0, 0.0, 0.0);
  const double target = pmpjpe(outlier, gt);

  Pose3d dirs(gt.rows(), 3);
  for (Eigen::Index i = 0; i < gt.rows(); ++i) dirs.row(i) = testing::random_axis_angle(rng, 1.0).normalized();
  double lo = 0.0, hi = 400.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (pmpjpe(Pose3d(gt + mid * dirs), gt) < target ? lo : hi) = mid;
  }
  const Pose3d spread = gt + 0.5 * (lo + hi) * dirs;
  ASSERT_NEAR(pmpjpe(spread, gt), target, 1e-6);

  EXPECT_EQ(correct_pose(spread, gt, 180.0), 1);
  EXPECT_EQ(correct_pose(outlier, gt, 180.0), 0);
  EXPECT_GT(cps({spread}, {gt}).curve[180], cps({outlier}, {gt}).curve[180]);
}

TEST(Dispersion, IdenticalPosesGiveZero) {
  std::mt19937_64 rng(14);
  const Pose3d p = centred_pose(rng);
  const auto d = canonical_dispersion({p, p, p}, {1, 4});
  ASSERT_EQ(d.size(), 2u);
  EXPECT_NEAR(d[0], 0.0, 1e-12);
  EXPECT_NEAR(d[1], 0.0, 1e-12);
  EXPECT_THROW(canonical_dispersion({}, {1}), EmptyEvalSet);
}

TEST(Dispersion, RecoversIsotropicStd) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> noise(0.0, 3.0);
  const Pose3d base = centred_pose(rng);
  std::vector<Pose3d> poses;
  for (int k = 0; k < 10000; ++k) {
    Pose3d p = base;
    p.row(1) += Eigen::RowVector3d(noise(rng), noise(rng), noise(rng));
    poses.push_back(p);
  }
  const auto d = canonical_dispersion(poses, {1, 2});
  EXPECT_NEAR(d[0], 3.0, 0.05 * 3.0);
  EXPECT_NEAR(d[1], 0.0, 1e-9);
}

TEST(Report, PerfectPredictions) {
  std::mt19937_64 rng(16);
  std::vector<Pose3d> gts;
  for (int k = 0; k < 10; ++k) gts.push_back(centred_pose(rng));
  for (PckAlignment a : {PckAlignment::scale, PckAlignment::similarity}) {
    const EvalReport r = compute_report(gts, gts, a);
    EXPECT_NEAR(r.mpjpe, 0.0, 1e-9);
    EXPECT_NEAR(r.pmpjpe, 0.0, 1e-8);
    EXPECT_DOUBLE_EQ(r.pck150, 100.0);
    EXPECT_NEAR(r.cps, 300.0, 1e-9);
    EXPECT_EQ(r.n_poses, 10u);
  }
}

TEST(Report, JsonAndCurveFields) {
  std::mt19937_64 rng(17);
  std::vector<Pose3d> gts, preds;
  for (int k = 0; k < 5; ++k) {
    gts.push_back(centred_pose(rng));
    preds.push_back(centred_pose(rng));
  }
  const EvalReport r = compute_report(preds, gts, PckAlignment::similarity, 120.0, false);
  std::ostringstream js;
  r.write_json(js);
  const auto j = nlohmann::json::parse(js.str());
  for (const char* key : {"n_poses", "mpjpe_mm", "mpjpe_frame", "pmpjpe_mm", "pmpjpe_scale", "pck150",
                          "pck_threshold_mm", "pck_alignment", "cps_mm", "cp_at_180", "depth_flipped", "cp_curve"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["pck_alignment"], "similarity");
  EXPECT_EQ(j["pck_threshold_mm"], 120.0);
  EXPECT_EQ(j["pmpjpe_scale"], false);
  EXPECT_GE(j["pck150"].get<double>(), 0.0);
  EXPECT_LE(j["pck150"].get<double>(), 100.0);

  std::ostringstream csv;
  r.write_curve_csv(csv);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "theta_mm,cp");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 301);
}

TEST(Report, PckAlignmentNames) {
  EXPECT_EQ(parse_pck_alignment("scale"), PckAlignment::scale);
  EXPECT_EQ(to_string(PckAlignment::similarity), "similarity");
  EXPECT_THROW(parse_pck_alignment("rigid"), ConfigError);
}

TEST(Evaluation, DepthMirroredPredictionsAreRegauged) {
  std::mt19937_64 rng(18);
  std::vector<Pose3d> preds, gts;
  for (int k = 0; k < 8; ++k) {
    gts.push_back(centred_pose(rng));
    Pose3d p = gts.back() / gts.back().norm();
    p.col(2) *= -1.0;
    preds.push_back(p);
  }
  EvalOptions opt;
  const Evaluation flipped = evaluate_predictions(preds, gts, preds, true, opt);
  EXPECT_TRUE(flipped.report.depth_flipped);
  EXPECT_LT(flipped.report.pmpjpe, 1e-8);
  opt.resolve_depth_flip = false;
  const Evaluation raw = evaluate_predictions(preds, gts, preds, true, opt);
  EXPECT_FALSE(raw.report.depth_flipped);
  EXPECT_GT(raw.report.pmpjpe, 1.0);
}

}  // namespace
}  // namespace canonpose
