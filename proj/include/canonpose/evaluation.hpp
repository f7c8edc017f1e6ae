#pragma once

// Single-view inference over a dataset and metric evaluation against
// ground truth.
//
// The training objective is unchanged when every canonical pose and rotation
// is mirrored through the camera's image plane (X -> F X, R -> F R F with
// F = diag(1, 1, -1)), which mirrors each camera-frame prediction in depth.
// Evaluation therefore fixes this gauge once per model: when enabled, the
// depth sign with the lower mean PMPJPE over the whole set is used for all
// poses and reported in EvalReport::depth_flipped.

#include <string>
#include <vector>

#include "canonpose/data.hpp"
#include "canonpose/metrics.hpp"
#include "canonpose/model.hpp"

namespace canonpose {

struct EvalOptions {
  int root_joint = 0;
  bool resolve_depth_flip = true;
  PckAlignment pck_alignment = PckAlignment::scale;
  double pck_threshold = 150.0;
  bool pmpjpe_scale = true;
  bool unit_confidences = false;
  unsigned threads = 1;
  std::size_t chunk = 512;  // views per forward pass
};

/// Inference on already-normalised views. With threads > 1, chunks run on
/// worker threads; the output order always matches the input order.
template <typename Scalar>
std::vector<LiftOutput<double>> infer_views(const ModelParams<Scalar>& params, const std::vector<const Pose2Dd*>& views,
                                            unsigned threads = 1, std::size_t chunk = 512);

struct ViewRef {
  std::size_t sample = 0;
  std::size_t view = 0;
};

struct Evaluation {
  EvalReport report;
  std::vector<ViewRef> views;
  std::vector<Pose3d> predictions;  // camera frame, root-centred, unit-norm scale
  std::vector<Pose3d> targets;      // mm, root-centred
  std::vector<Pose3d> canonical;    // canonical-frame network output (depth gauge applied)
};

/// Evaluates every view of every sample. Ground truth comes from `truth`
/// (camera-frame targets) when given, otherwise from the samples' gt3d, in
/// which case MPJPE is measured after rigid rotation alignment.
template <typename Scalar>
Evaluation evaluate(const ModelParams<Scalar>& params, const Dataset& dataset, const std::vector<SampleTruth>* truth,
                    const EvalOptions& options = {});

/// Metrics for externally produced camera-frame predictions matched to targets.
Evaluation evaluate_predictions(std::vector<Pose3d> predictions, std::vector<Pose3d> targets,
                                std::vector<Pose3d> canonical, bool camera_frame_targets, const EvalOptions& options);

extern template std::vector<LiftOutput<double>> infer_views<float>(const ModelParams<float>&,
                                                                   const std::vector<const Pose2Dd*>&, unsigned,
                                                                   std::size_t);
extern template std::vector<LiftOutput<double>> infer_views<double>(const ModelParams<double>&,
                                                                    const std::vector<const Pose2Dd*>&, unsigned,
                                                                    std::size_t);
extern template Evaluation evaluate<float>(const ModelParams<float>&, const Dataset&, const std::vector<SampleTruth>*,
                                           const EvalOptions&);
extern template Evaluation evaluate<double>(const ModelParams<double>&, const Dataset&,
                                            const std::vector<SampleTruth>*, const EvalOptions&);

}  // namespace canonpose
