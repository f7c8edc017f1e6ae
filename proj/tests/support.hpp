#pragma once

// Oracles and fixtures shared by the unit tests and the acceptance suite.

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "canonpose/data.hpp"
#include "canonpose/evaluation.hpp"
#include "canonpose/losses.hpp"
#include "canonpose/model.hpp"
#include "canonpose/train.hpp"

namespace canonpose::testing {

/// exp(A) by its Taylor series, `terms` terms.
inline Rotation3d series_exp(const Rotation3d& a, int terms = 30) {
  Rotation3d sum = Rotation3d::Identity();
  Rotation3d term = Rotation3d::Identity();
  for (int k = 1; k < terms; ++k) {
    term = term * a / double(k);
    sum += term;
  }
  return sum;
}

inline AxisAngled random_axis_angle(std::mt19937_64& rng, double max_norm) {
  std::normal_distribution<double> normal;
  AxisAngled dir(normal(rng), normal(rng), normal(rng));
  dir.normalize();
  return dir * std::uniform_real_distribution<double>(0.0, max_norm)(rng);
}

inline Rotation3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Pose3d random_pose(std::mt19937_64& rng, int joints, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Pose3d p(joints, 3);
  for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = u(rng);
  return p;
}

/// Observation of `pose` through `r`, exactly normalised, unit confidences.
inline Pose2Dd observe(const Rotation3d& r, const Pose3d& pose) {
  Pose2Dd w;
  w.joints = project_weak_perspective(r, pose);
  w.confidences = Eigen::VectorXd::Ones(pose.rows());
  return normalize_pose2d(w);
}

inline AxisAngled log_rotation(const Rotation3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

/// Noise-free synthetic configuration with no occlusion.
inline SynthConfig noiseless(std::size_t samples, int cameras, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_samples = samples;
  cfg.num_cameras = cameras;
  cfg.noise_std = 0.0;
  cfg.occlusion_prob = 0.0;
  cfg.seed = seed;
  return cfg;
}

/// Ground-truth view predictions (canonical = unit-norm world pose, rotation =
/// generating camera rotation) as constants on `tape`.
inline std::vector<std::vector<ViewPrediction<double>>> truth_predictions(ad::Tape<double>& tape,
                                                                           const SyntheticSet& set,
                                                                           const std::vector<std::size_t>& batch) {
  std::vector<std::vector<ViewPrediction<double>>> out;
  for (std::size_t s : batch) {
    const SampleTruth& t = set.truth[s];
    const MultiViewSample& sample = set.dataset.samples[s];
    const Pose3d x = t.pose_mm / t.pose_mm.norm();
    std::vector<ViewPrediction<double>> views;
    for (std::size_t v = 0; v < sample.views.size(); ++v) {
      const auto cx = tape.constant(ad::Matrix<double>(x));
      const auto cr = tape.constant(ad::Matrix<double>(t.views[v].rotation));
      views.push_back(make_view(cx, cr, normalize_pose2d(sample.views[v].pose), sample.views[v].camera_id,
                                sample.sample_id, sample.rig_id));
    }
    out.push_back(std::move(views));
  }
  return out;
}

/// A network that reproduces the generating canonical pose and camera rotation
/// for every view of `samples`.
///
/// The trunk copies the input into the hidden layer as leaky(u) and
/// leaky(-u), whose difference is 1.01 u; every residual block has zero
/// weights and is the identity; the two heads are affine maps of u solved by
/// minimum-norm least squares over the fixture views. Exact when the number
/// of views is at most 3j + 1.
inline ModelParams<double> exact_fit_model(const SyntheticSet& set, const std::vector<std::size_t>& samples,
                                           Eigen::Index hidden) {
  const int j = set.dataset.joints;
  const Eigen::Index in = 3 * j;
  if (hidden < 2 * in) throw std::invalid_argument("exact_fit_model: hidden width too small");
  ModelParams<double> p = zero_params<double>(j, hidden);

  for (Eigen::Index k = 0; k < in; ++k) {
    p.net.trunk_in.weight(k, k) = 1.0;
    p.net.trunk_in.weight(k, in + k) = -1.0;
  }

  std::vector<Pose2Dd> inputs;
  std::vector<Pose3d> poses;
  std::vector<AxisAngled> rotations;
  for (std::size_t s : samples) {
    const SampleTruth& t = set.truth[s];
    for (std::size_t v = 0; v < set.dataset.samples[s].views.size(); ++v) {
      inputs.push_back(normalize_pose2d(set.dataset.samples[s].views[v].pose));
      poses.push_back(t.pose_mm / t.pose_mm.norm());
      rotations.push_back(log_rotation(t.views[v].rotation));
    }
  }
  const Eigen::Index n = Eigen::Index(inputs.size());
  Eigen::MatrixXd design(n, in + 1);
  Eigen::MatrixXd pose_targets(n, in), cam_targets(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Matrix<double, 1, Eigen::Dynamic> row(in);
    write_input_row<double>(inputs[std::size_t(r)], row);
    design.row(r) << row, 1.0;
    for (int i = 0; i < j; ++i) {
      for (int c = 0; c < 3; ++c) pose_targets(r, 3 * i + c) = poses[std::size_t(r)](i, c);
    }
    cam_targets.row(r) = rotations[std::size_t(r)].transpose();
  }
  const auto solver = design.completeOrthogonalDecomposition();
  const Eigen::MatrixXd pose_coef = solver.solve(pose_targets);
  const Eigen::MatrixXd cam_coef = solver.solve(cam_targets);

  const double gain = 1.0 + ad::kLeakySlope;
  auto fill_head = [&](Dense<ad::Matrix<double>>& head, const Eigen::MatrixXd& coef) {
    for (Eigen::Index k = 0; k < in; ++k) {
      head.weight.row(k) = coef.row(k) / gain;
      head.weight.row(in + k) = -coef.row(k) / gain;
    }
    head.bias = coef.row(in);
  };
  fill_head(p.net.pose_out, pose_coef);
  fill_head(p.net.cam_out, cam_coef);
  return p;
}

/// Supervised baseline: the same network and optimiser trained on the
/// camera-frame ground truth, scaled by the 2D normalisation factor of each
/// view so that targets share the units of the network input. Loss is the
/// batch mean of sum_i ||(R X)_i - Y_i||^2 over views.
template <typename Scalar>
TrainResult<Scalar> train_supervised(const SyntheticSet& set, const TrainConfig& cfg,
                                     const EpochCallback<Scalar>& on_epoch = {}) {
  PrepareOptions prep;
  prep.max_cameras = cfg.max_cameras;
  const std::vector<PreparedSample> samples = prepare_samples(set.dataset, prep);
  std::vector<std::vector<ad::Matrix<Scalar>>> targets(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (std::size_t v = 0; v < samples[s].views.size(); ++v) {
      const Pose3d cam = center_on_root(set.truth[s].camera_pose_mm(v));
      const double scale = cam.leftCols<2>().norm();
      targets[s].push_back((cam / scale).template cast<Scalar>());
    }
  }
  const int j = set.dataset.joints;
  BatchObjective<Scalar> objective = [&](ad::Tape<Scalar>& tape, const Network<ad::Var<Scalar>>& net,
                                         const std::vector<std::size_t>& batch, std::uint64_t) {
    auto preds = predict_views(tape, net, j, samples, batch);
    std::vector<ad::Var<Scalar>> terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t v = 0; v < preds[b].size(); ++v) {
        const auto camera = ad::matmul(preds[b][v].canonical, preds[b][v].rotation_t);
        const auto diff = camera - tape.constant(targets[batch[b]][v]);
        terms.push_back(ad::sum(ad::hadamard(diff, diff)));
      }
    }
    const auto total = ad::scale(ad::add_n(terms), Scalar(1) / Scalar(batch.size()));
    return StepLoss<Scalar>{total, {double(total.scalar())}};
  };
  auto init = init_params<Scalar>(j, derive_seed(cfg.seed, "init"), cfg.hidden);
  return optimize<Scalar>(std::move(init), set.dataset, cfg, {"supervised_loss"}, objective, false, on_epoch);
}

}  // namespace canonpose::testing
