#pragma once

// Closed-form pose and camera geometry.
//
// Poses are stored one joint per row: a 3D pose is a j x 3 matrix and a 2D
// pose a j x 2 matrix. Column-vector formulas such as W = P * R * X therefore
// appear transposed here, e.g. the camera-frame pose is X * R^T and the
// weak-perspective projection is the first two columns of that product.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "canonpose/errors.hpp"

namespace canonpose {

template <typename Scalar>
using Pose3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;
template <typename Scalar>
using Points2 = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;
template <typename Scalar>
using Rotation3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using AxisAngle = Eigen::Matrix<Scalar, 3, 1>;

using Pose3d = Pose3<double>;
using Points2d = Points2<double>;
using Rotation3d = Rotation3<double>;
using AxisAngled = AxisAngle<double>;

/// 2D detections of one view: joint coordinates plus per-joint confidence.
template <typename Scalar>
struct Pose2D {
  Points2<Scalar> joints;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> confidences;

  Eigen::Index joint_count() const { return joints.rows(); }
};
using Pose2Dd = Pose2D<double>;

template <typename Scalar>
struct SimilarityTransform {
  Scalar scale = Scalar(1);
  Rotation3<Scalar> rotation = Rotation3<Scalar>::Identity();
  Eigen::Matrix<Scalar, 3, 1> translation = Eigen::Matrix<Scalar, 3, 1>::Zero();

  /// Applies s * R * p + t to every joint row.
  Pose3<Scalar> apply(const Pose3<Scalar>& pose) const {
    Pose3<Scalar> out = scale * pose * rotation.transpose();
    out.rowwise() += translation.transpose();
    return out;
  }
};

template <typename Scalar>
struct AlignResult {
  Pose3<Scalar> aligned;
  SimilarityTransform<Scalar> transform;
};

inline constexpr double kDegenerateNorm = 1e-9;
inline constexpr double kSmallAngle = 1e-8;

template <typename Derived>
typename Derived::PlainObject center_on_root(const Eigen::MatrixBase<Derived>& joints,
                                              Eigen::Index root_index = 0) {
  typename Derived::PlainObject out = joints;
  out.rowwise() -= joints.row(root_index);
  return out;
}

/// Root-centres the joints and divides by the Frobenius norm of the result.
/// Confidences pass through unchanged.
template <typename Scalar>
Pose2D<Scalar> normalize_pose2d(const Pose2D<Scalar>& w, Eigen::Index root_index = 0) {
  if (root_index < 0 || root_index >= w.joints.rows()) {
    throw std::out_of_range("normalize_pose2d: root index out of range");
  }
  Points2<Scalar> centered = center_on_root(w.joints, root_index);
  const Scalar norm = centered.norm();
  if (!(norm >= Scalar(kDegenerateNorm))) {
    throw DegeneratePose("2D joints coincide, centred Frobenius norm " + std::to_string(double(norm)));
  }
  Pose2D<Scalar> out;
  out.joints = centered / norm;
  out.joints.row(root_index).setZero();
  out.confidences = w.confidences;
  return out;
}

template <typename Scalar>
Rotation3<Scalar> skew(const AxisAngle<Scalar>& v) {
  Rotation3<Scalar> a;
  a << Scalar(0), -v.z(), v.y(),
       v.z(), Scalar(0), -v.x(),
       -v.y(), v.x(), Scalar(0);
  return a;
}

/// Rodrigues' formula for an axis-angle vector v = theta * omega.
/// Below theta = 1e-8 the first-order form I + [v]x is used.
template <typename Scalar>
Rotation3<Scalar> rodrigues(const AxisAngle<Scalar>& v) {
  using std::cos;
  using std::sin;
  const Scalar theta = v.norm();
  if (theta < Scalar(kSmallAngle)) {
    return Rotation3<Scalar>::Identity() + skew(v);
  }
  const Rotation3<Scalar> a = skew<Scalar>(v / theta);
  return Rotation3<Scalar>::Identity() + sin(theta) * a + (Scalar(1) - cos(theta)) * (a * a);
}

/// Rotates the pose into the camera frame and drops depth.
template <typename Scalar>
Points2<Scalar> project_weak_perspective(const Rotation3<Scalar>& r, const Pose3<Scalar>& x) {
  return x * r.template topRows<2>().transpose();
}

/// R_{1,2} = R_2 * R_1^T, so that R_{1,2} * R_1 = R_2.
template <typename Scalar>
Rotation3<Scalar> relative_rotation(const Rotation3<Scalar>& r1, const Rotation3<Scalar>& r2) {
  return r2 * r1.transpose();
}

template <typename Scalar>
bool is_rotation(const Rotation3<Scalar>& r, double tol = 1e-9) {
  const double orth = double((r * r.transpose() - Rotation3<Scalar>::Identity()).norm());
  const double det = double(r.determinant());
  return orth < tol && std::abs(det - 1.0) < tol;
}

/// Least-squares s minimising ||s * pred - gt||_F.
template <typename Scalar>
Scalar optimal_scale(const Pose3<Scalar>& pred, const Pose3<Scalar>& gt) {
  if (pred.rows() != gt.rows()) {
    throw std::invalid_argument("optimal_scale: joint count mismatch");
  }
  const Scalar pp = pred.squaredNorm();
  if (!(pp >= Scalar(1e-12))) {
    throw DegeneratePose("optimal_scale: prediction is all zero");
  }
  return (pred.array() * gt.array()).sum() / pp;
}

/// Closed-form similarity (Procrustes) alignment of source onto target.
/// The rotation is kept proper by flipping the weakest singular direction
/// when the cross-covariance has negative determinant. With with_scale set
/// to false the scale is fixed to 1 (rigid alignment).
template <typename Scalar>
AlignResult<Scalar> similarity_align(const Pose3<Scalar>& source, const Pose3<Scalar>& target,
                                     bool with_scale = true) {
  if (source.rows() != target.rows()) {
    throw std::invalid_argument("similarity_align: joint count mismatch");
  }
  using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
  const Vec3 mean_s = source.colwise().mean().transpose();
  const Vec3 mean_t = target.colwise().mean().transpose();
  Pose3<Scalar> a = source.rowwise() - mean_s.transpose();
  Pose3<Scalar> b = target.rowwise() - mean_t.transpose();
  if (a.norm() < Scalar(kDegenerateNorm) || b.norm() < Scalar(kDegenerateNorm)) {
    throw DegeneratePose("similarity_align: zero-variance pose");
  }

  const Rotation3<Scalar> cov = b.transpose() * a;
  Eigen::JacobiSVD<Rotation3<Scalar>> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 signs = Vec3::Ones();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < Scalar(0)) {
    signs(2) = Scalar(-1);
  }

  AlignResult<Scalar> out;
  out.transform.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
  out.transform.scale =
      with_scale ? svd.singularValues().dot(signs) / a.squaredNorm() : Scalar(1);
  out.transform.translation = mean_t - out.transform.scale * out.transform.rotation * mean_s;
  out.aligned = out.transform.apply(source);
  return out;
}

}  // namespace canonpose
