#pragma once

#include <stdexcept>
#include <string>

namespace canonpose {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// exit codes, so each class below corresponds to one failure mode.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CANONPOSE_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

// geometry / metrics
CANONPOSE_DEFINE_ERROR(DegeneratePose);
CANONPOSE_DEFINE_ERROR(EmptyEvalSet);

// autodiff
CANONPOSE_DEFINE_ERROR(ShapeMismatch);
CANONPOSE_DEFINE_ERROR(NonFiniteValue);
CANONPOSE_DEFINE_ERROR(NonScalarLoss);

// losses
CANONPOSE_DEFINE_ERROR(DegenerateReprojection);
CANONPOSE_DEFINE_ERROR(InsufficientViews);
CANONPOSE_DEFINE_ERROR(RigGroupTooSmall);

// data
CANONPOSE_DEFINE_ERROR(ParseError);
CANONPOSE_DEFINE_ERROR(InconsistentJointCount);
CANONPOSE_DEFINE_ERROR(DuplicateCameraInSample);
CANONPOSE_DEFINE_ERROR(IoError);

// training
CANONPOSE_DEFINE_ERROR(NonFiniteGradient);
CANONPOSE_DEFINE_ERROR(SingleViewSample);

// evaluation / configuration
CANONPOSE_DEFINE_ERROR(MissingGroundTruth);
CANONPOSE_DEFINE_ERROR(ConfigError);

#undef CANONPOSE_DEFINE_ERROR

}  // namespace canonpose
