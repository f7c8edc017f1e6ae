#pragma once

// Differentiable counterparts of the geometry in geometry.hpp, composed from
// autodiff primitives so gradients flow through every step.

#include "canonpose/autodiff.hpp"
#include "canonpose/geometry.hpp"

namespace canonpose::ad {

/// Rodrigues' formula on a 3-entry node; matches canonpose::rodrigues().
template <typename Scalar>
Var<Scalar> rodrigues(const Var<Scalar>& v) {
  Tape<Scalar>& t = v.tape();
  const Var<Scalar> identity = t.constant(Matrix<Scalar>::Identity(3, 3));
  const Var<Scalar> theta = norm2(v);
  if (theta.scalar() < Scalar(kSmallAngle)) {
    return identity + skew(v);
  }
  const Var<Scalar> a = skew(divide(v, theta));
  const Var<Scalar> one_minus_cos = t.constant(Scalar(1)) - cos(theta);
  return add_n<Scalar>({identity, scale(a, sin(theta)), scale(matmul(a, a), one_minus_cos)});
}

/// First two columns of X * R^T (j x 2).
template <typename Scalar>
Var<Scalar> project_weak_perspective(const Var<Scalar>& rotation, const Var<Scalar>& pose) {
  return block(matmul(pose, transpose(rotation)), 0, 0, pose.rows(), 2);
}

/// Same projection when R^T has already been built.
template <typename Scalar>
Var<Scalar> project_with_transposed(const Var<Scalar>& rotation_t, const Var<Scalar>& pose) {
  return block(matmul(pose, rotation_t), 0, 0, pose.rows(), 2);
}

template <typename Scalar>
Var<Scalar> relative_rotation(const Var<Scalar>& r1, const Var<Scalar>& r2) {
  return matmul(r2, transpose(r1));
}

}  // namespace canonpose::ad
