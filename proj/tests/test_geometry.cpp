#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "canonpose/geometry.hpp"
#include "support.hpp"

namespace canonpose {
namespace {

using testing::random_axis_angle;
using testing::random_pose;
using testing::random_rotation;
using testing::series_exp;

Pose2Dd make_pose2d(const Points2d& joints) {
  Pose2Dd w;
  w.joints = joints;
  w.confidences = Eigen::VectorXd::LinSpaced(joints.rows(), 0.1, 1.0);
  return w;
}

TEST(NormalizePose2d, CentresOnRootAndHasUnitNorm) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose2Dd w = make_pose2d(Points2d::Random(17, 2) * 300.0);
    const Pose2Dd n = normalize_pose2d(w);
    EXPECT_NEAR(n.joints.norm(), 1.0, 1e-12);
    EXPECT_EQ(n.joints.row(0).norm(), 0.0);
    EXPECT_EQ(n.confidences, w.confidences);
  }
}

TEST(NormalizePose2d, InvariantUnderTranslationAndPositiveScale) {
  const Pose2Dd w = make_pose2d(Points2d::Random(17, 2));
  Pose2Dd moved = w;
  moved.joints = (w.joints * 7.5).rowwise() + Eigen::RowVector2d(120.0, -40.0);
  EXPECT_LT((normalize_pose2d(w).joints - normalize_pose2d(moved).joints).norm(), 1e-12);
}

TEST(NormalizePose2d, HandExample) {
  Points2d joints(2, 2);
  joints << 1.0, 1.0, 4.0, 5.0;
  const Pose2Dd n = normalize_pose2d(make_pose2d(joints));
  EXPECT_NEAR(n.joints(1, 0), 0.6, 1e-15);
  EXPECT_NEAR(n.joints(1, 1), 0.8, 1e-15);
}

TEST(NormalizePose2d, NormalisedInputIsAFixedPoint) {
  const Pose2Dd n = normalize_pose2d(make_pose2d(Points2d::Random(17, 2)));
  EXPECT_LT((normalize_pose2d(n).joints - n.joints).norm(), 1e-12);
}

TEST(NormalizePose2d, CoincidentJointsThrow) {
  const Pose2Dd w = make_pose2d(Points2d::Constant(5, 2, 3.0));
  EXPECT_THROW(normalize_pose2d(w), DegeneratePose);
}

TEST(NormalizePose2d, RootIndexOutOfRangeThrows) {
  EXPECT_THROW(normalize_pose2d(make_pose2d(Points2d::Random(4, 2)), 4), std::out_of_range);
}

TEST(Rodrigues, ZeroIsIdentity) {
  EXPECT_EQ(rodrigues<double>(AxisAngled::Zero()), Rotation3d::Identity());
}

TEST(Rodrigues, HalfTurnAboutZ) {
  const Rotation3d r = rodrigues<double>(AxisAngled(0, 0, std::numbers::pi));
  const Rotation3d expected = Eigen::Vector3d(-1, -1, 1).asDiagonal();
  EXPECT_LT((r - expected).norm(), 1e-15);
}

TEST(Rodrigues, QuarterTurnAboutZ) {
  const Rotation3d r = rodrigues<double>(AxisAngled(0, 0, std::numbers::pi / 2));
  Rotation3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((r - expected).norm(), 1e-15);
}

TEST(Rodrigues, QuarterTurnAboutX) {
  const Rotation3d r = rodrigues<double>(AxisAngled(std::numbers::pi / 2, 0, 0));
  EXPECT_LT((r * Eigen::Vector3d::UnitY() - Eigen::Vector3d::UnitZ()).norm(), 1e-15);
}

TEST(Rodrigues, MatchesSeriesExponential) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const AxisAngled v = random_axis_angle(rng, 4.0 * std::numbers::pi);
    const Rotation3d r = rodrigues(v);
    EXPECT_TRUE(is_rotation(r, 1e-9));
    ASSERT_LT((r - series_exp(skew(v), 60)).cwiseAbs().maxCoeff(), 1e-10) << v.transpose();
  }
}

TEST(Rodrigues, SmallAngleBranchIsContinuous) {
  const AxisAngled dir = AxisAngled(1, -2, 0.5).normalized();
  const Rotation3d below = rodrigues<double>(dir * 0.99e-8);
  const Rotation3d above = rodrigues<double>(dir * 1.01e-8);
  EXPECT_LT((below - above).norm(), 1e-9);
  EXPECT_LT((below - series_exp(skew<double>(dir * 0.99e-8))).norm(), 1e-15);
}

TEST(Rodrigues, OppositeVectorIsInverse) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const AxisAngled v = random_axis_angle(rng, 3.0);
    EXPECT_LT((rodrigues<double>(-v) * rodrigues(v) - Rotation3d::Identity()).norm(), 1e-14);
  }
}

TEST(Skew, MatchesCrossProduct) {
  const AxisAngled v(0.3, -1.2, 2.0);
  const Eigen::Vector3d p(-0.7, 0.4, 1.1);
  EXPECT_LT((skew(v) * p - v.cross(p)).norm(), 1e-15);
  EXPECT_EQ(skew(v) + skew(v).transpose(), Rotation3d::Zero());
}

TEST(IsRotation, RejectsReflectionAndScaling) {
  EXPECT_TRUE(is_rotation(Rotation3d(Rotation3d::Identity())));
  EXPECT_FALSE(is_rotation(Rotation3d(Eigen::Vector3d(1, 1, -1).asDiagonal())));
  EXPECT_FALSE(is_rotation(Rotation3d(1.001 * Rotation3d::Identity())));
}

TEST(ProjectWeakPerspective, IdentityDropsDepth) {
  std::mt19937_64 rng(4);
  const Pose3d x = random_pose(rng, 17);
  EXPECT_EQ(project_weak_perspective<double>(Rotation3d::Identity(), x), x.leftCols<2>());
}

TEST(ProjectWeakPerspective, HalfTurnAboutXFlipsY) {
  const Rotation3d r = rodrigues<double>(AxisAngled(std::numbers::pi, 0, 0));
  Pose3d x(1, 3);
  x << 1, 2, 3;
  const Points2d w = project_weak_perspective(r, x);
  EXPECT_NEAR(w(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(w(0, 1), -2.0, 1e-15);
}

TEST(ProjectWeakPerspective, MatchesColumnConvention) {
  std::mt19937_64 rng(5);
  const Rotation3d r = random_rotation(rng);
  const Pose3d x = random_pose(rng, 6);
  const Points2d w = project_weak_perspective(r, x);
  for (int i = 0; i < 6; ++i) {
    const Eigen::Vector3d cam = r * x.row(i).transpose();
    EXPECT_NEAR(w(i, 0), cam.x(), 1e-15);
    EXPECT_NEAR(w(i, 1), cam.y(), 1e-15);
  }
}

TEST(RelativeRotation, MapsFirstOntoSecond) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const Rotation3d r1 = random_rotation(rng), r2 = random_rotation(rng);
    const Rotation3d r12 = relative_rotation(r1, r2);
    EXPECT_LT((r12 * r1 - r2).norm(), 1e-14);
    EXPECT_TRUE(is_rotation(r12));
  }
}

TEST(OptimalScale, MatchesGridSearch) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose3d pred = random_pose(rng, 17);
    const Pose3d gt = 2.3 * pred + 0.3 * random_pose(rng, 17);
    const double s = optimal_scale(pred, gt);
    double best = 0.0, best_err = INFINITY;
    for (int k = 0; k <= 10000; ++k) {
      const double c = 5.0 * k / 10000.0;
      const double err = (c * pred - gt).norm();
      if (err < best_err) best_err = err, best = c;
    }
    EXPECT_NEAR(s, best, 5e-4);
    EXPECT_LE((s * pred - gt).norm(), best_err + 1e-12);
  }
}

TEST(OptimalScale, ExactMultipleAndOrthogonal) {
  std::mt19937_64 rng(12);
  const Pose3d pred = random_pose(rng, 17);
  EXPECT_NEAR(optimal_scale<double>(pred, 3.0 * pred), 3.0, 1e-14);
  Pose3d a = Pose3d::Zero(2, 3), b = Pose3d::Zero(2, 3);
  a(0, 0) = 1.0;
  b(1, 2) = 5.0;
  EXPECT_EQ(optimal_scale(a, b), 0.0);
}

TEST(OptimalScale, ZeroPredictionThrows) {
  EXPECT_THROW(optimal_scale<double>(Pose3d::Zero(4, 3), Pose3d::Ones(4, 3)), DegeneratePose);
}

TEST(SimilarityAlign, IdentityOnEqualPoses) {
  std::mt19937_64 rng(13);
  const Pose3d source = random_pose(rng, 17);
  const auto aligned = similarity_align(source, source);
  EXPECT_LT((aligned.aligned - source).norm(), 1e-9);
  EXPECT_NEAR(aligned.transform.scale, 1.0, 1e-12);
  EXPECT_LT((aligned.transform.rotation - Rotation3d::Identity()).norm(), 1e-12);
}

TEST(SimilarityAlign, RecoversKnownTransform) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose3d source = random_pose(rng, 17, 500.0);
    SimilarityTransform<double> t;
    t.scale = 0.3 + 2.0 * std::uniform_real_distribution<double>()(rng);
    t.rotation = random_rotation(rng);
    t.translation = Eigen::Vector3d::Random() * 100.0;
    const Pose3d target = t.apply(source);
    const auto aligned = similarity_align(source, target);
    EXPECT_LT((aligned.aligned - target).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(aligned.transform.scale, t.scale, 1e-12);
    EXPECT_LT((aligned.transform.rotation - t.rotation).norm(), 1e-12);
  }
}

TEST(SimilarityAlign, ReflectedTargetStillGivesProperRotation) {
  std::mt19937_64 rng(9);
  const Pose3d source = random_pose(rng, 17);
  const Pose3d target = source * Rotation3d(Eigen::Vector3d(1, 1, -1).asDiagonal());
  const auto aligned = similarity_align(source, target);
  EXPECT_TRUE(is_rotation(aligned.transform.rotation, 1e-12));
}

// No rotation from a random search of 1000, each with its optimal scale and
// translation, beats the closed form.
TEST(SimilarityAlign, NotBeatenByRandomSearch) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const Pose3d source = random_pose(rng, 17);
    const Pose3d target = random_pose(rng, 17);
    const double closed = (similarity_align(source, target).aligned - target).norm();
    const Pose3d tc = target.rowwise() - target.colwise().mean();
    const Pose3d sc = source.rowwise() - source.colwise().mean();
    for (int k = 0; k < 1000; ++k) {
      const Pose3d rotated = sc * random_rotation(rng).transpose();
      const double s = std::max(0.0, optimal_scale(rotated, tc));
      EXPECT_GE((s * rotated - tc).norm(), closed - 1e-12);
    }
  }
}

TEST(SimilarityAlign, RigidModeKeepsUnitScale) {
  std::mt19937_64 rng(11);
  const Pose3d source = random_pose(rng, 17);
  const Rotation3d r = random_rotation(rng);
  const auto aligned = similarity_align<double>(3.0 * source * r.transpose(), source, false);
  EXPECT_EQ(aligned.transform.scale, 1.0);
  EXPECT_GT((aligned.aligned - source).norm(), 1e-3);
}

TEST(SimilarityAlign, DegenerateInputThrows) {
  EXPECT_THROW(similarity_align<double>(Pose3d::Ones(5, 3), Pose3d::Random(5, 3)), DegeneratePose);
  EXPECT_THROW(similarity_align<double>(Pose3d::Random(5, 3), Pose3d::Random(4, 3)), std::invalid_argument);
}

}  // namespace
}  // namespace canonpose
