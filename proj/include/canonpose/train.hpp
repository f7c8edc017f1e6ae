#pragma once

// Self-supervised training: Adam with step learning-rate decay over the
// composed multi-view objective.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "canonpose/data.hpp"
#include "canonpose/losses.hpp"
#include "canonpose/model.hpp"
#include "canonpose/rng.hpp"

namespace canonpose {

enum class Ablation { none, pose_equality, camera_equality, no_confidences };
enum class DecayMode {
  lr_step,  // lr *= factor at each decay epoch
  l2,       // constant lr, gradient += l2_weight * theta
};

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);
std::string to_string(DecayMode d);
DecayMode parse_decay_mode(const std::string& s);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 100;
  double initial_lr = 1e-4;
  std::vector<int> lr_decay_epochs = {30, 60, 90};
  double lr_decay_factor = 0.1;
  DecayMode decay_mode = DecayMode::lr_step;
  double l2_weight = 1e-4;
  std::size_t batch_size = 256;
  AdamHyper adam;
  double lambda_cam = 1.0;
  double lambda_equality = 1.0;
  bool static_camera_mode = false;
  Ablation ablation = Ablation::none;
  int max_cameras = 0;          // 0 keeps every view; otherwise the first k views of each sample
  double max_grad_norm = 0.0;   // 0 disables clipping
  int root_joint = 0;
  Eigen::Index hidden = kHiddenWidth;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;     // epochs; 0 disables periodic checkpoints
  std::string checkpoint_dir;

  /// Throws ConfigError on the first invalid field.
  void validate() const;
  LossConfig loss_config() const;
};

/// Learning rate used throughout `epoch` (0-based).
double lr_at(int epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
struct AdamState {
  ModelParams<Scalar> m;
  ModelParams<Scalar> v;
  std::uint64_t step = 0;

  static AdamState zeros(const ModelParams<Scalar>& like) { return {like.zeros_like(), like.zeros_like(), 0}; }
};

/// One bias-corrected Adam update of a single tensor at step number `step`
/// (1-based, already incremented).
template <typename Scalar>
void adam_update(ad::Matrix<Scalar>& theta, const ad::Matrix<Scalar>& g, ad::Matrix<Scalar>& m,
                 ad::Matrix<Scalar>& v, std::uint64_t step, double lr, const AdamHyper& h) {
  const Scalar b1 = Scalar(h.beta1), b2 = Scalar(h.beta2);
  m = b1 * m + (Scalar(1) - b1) * g;
  v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
  const Scalar c1 = Scalar(1.0 - std::pow(h.beta1, double(step)));
  const Scalar c2 = Scalar(1.0 - std::pow(h.beta2, double(step)));
  const Scalar rate = Scalar(lr), eps = Scalar(h.eps);
  theta.array() -= rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

/// Applies one Adam step to every tensor. A non-finite gradient entry throws
/// NonFiniteGradient before anything is modified.
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, AdamState<Scalar>& state, double lr,
               const AdamHyper& h = {}) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  Network<ad::Matrix<Scalar>> g = grads.net;
  visit_tensors([&](const std::string& name, ad::Matrix<Scalar>& p, ad::Matrix<Scalar>& gt) {
    if (p.rows() != gt.rows() || p.cols() != gt.cols()) throw ShapeMismatch("adam_step: gradient shape of " + name);
    if (!gt.allFinite()) throw NonFiniteGradient("gradient of " + name + " has a non-finite entry");
  }, params.net, g);
  ++state.step;
  visit_tensors([&](const std::string&, ad::Matrix<Scalar>& p, ad::Matrix<Scalar>& gt, ad::Matrix<Scalar>& m,
                    ad::Matrix<Scalar>& v) { adam_update(p, gt, m, v, state.step, lr, h); },
                params.net, g, state.m.net, state.v.net);
}

// ---------------------------------------------------------------------------
// Training data

struct PreparedView {
  std::string camera_id;
  Pose2Dd observation;  // normalised
};

struct PreparedSample {
  std::string sample_id;
  std::string rig_id;
  std::vector<PreparedView> views;
};

struct PrepareOptions {
  int root_joint = 0;
  int max_cameras = 0;
  bool unit_confidences = false;
  bool require_multiview = true;  // SingleViewSample otherwise
};

std::vector<PreparedSample> prepare_samples(const Dataset& dataset, const PrepareOptions& options);

/// Network predictions for the samples `batch` of `samples`, all views
/// stacked into one forward pass.
template <typename Scalar>
std::vector<std::vector<ViewPrediction<Scalar>>> predict_views(ad::Tape<Scalar>& tape,
                                                               const Network<ad::Var<Scalar>>& net, int joints,
                                                               const std::vector<PreparedSample>& samples,
                                                               const std::vector<std::size_t>& batch) {
  std::vector<const Pose2Dd*> inputs;
  for (std::size_t s : batch) {
    for (const auto& v : samples.at(s).views) inputs.push_back(&v.observation);
  }
  const LiftGraph<Scalar> graph = lift(net, tape.constant(make_inputs<Scalar>(inputs, joints)), joints);
  std::vector<std::vector<ViewPrediction<Scalar>>> out;
  out.reserve(batch.size());
  Eigen::Index row = 0;
  for (std::size_t s : batch) {
    const PreparedSample& sample = samples[s];
    std::vector<ViewPrediction<Scalar>> views;
    views.reserve(sample.views.size());
    for (const auto& v : sample.views) {
      const auto rotation = ad::rodrigues(graph.view_axis_angle(row));
      views.push_back(make_view(graph.view_pose(row), rotation, v.observation, v.camera_id, sample.sample_id,
                                sample.rig_id));
      ++row;
    }
    out.push_back(std::move(views));
  }
  return out;
}

/// Donor permutation for step `step` of a run seeded with `seed`.
std::vector<std::size_t> step_permutation(const std::vector<PreparedSample>& samples,
                                          const std::vector<std::size_t>& batch, std::uint64_t seed,
                                          std::uint64_t step);

/// The self-supervised objective of one batch.
template <typename Scalar>
LossBreakdown<Scalar> batch_loss(ad::Tape<Scalar>& tape, const Network<ad::Var<Scalar>>& net, int joints,
                                 const std::vector<PreparedSample>& samples, const std::vector<std::size_t>& batch,
                                 const std::vector<std::size_t>& permutation, const LossConfig& config) {
  return total_loss(predict_views(tape, net, joints, samples, batch), permutation, config);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::vector<double> components;  // named by TrainLog::component_names
  double wall_seconds = 0.0;
  std::size_t steps = 0;
};

struct TrainLog {
  std::vector<std::string> component_names;
  std::vector<EpochRecord> epochs;

  /// Header: epoch,lr,total_loss,<components...>,wall_time_s
  void write_csv(std::ostream& out) const;
  void save_csv(const std::string& path) const;
};

template <typename Scalar>
struct StepLoss {
  ad::Var<Scalar> total;
  std::vector<double> components;
};

/// Builds the loss of one batch (indices into the dataset) at global step `step`.
template <typename Scalar>
using BatchObjective = std::function<StepLoss<Scalar>(ad::Tape<Scalar>& tape, const Network<ad::Var<Scalar>>& net,
                                                      const std::vector<std::size_t>& batch, std::uint64_t step)>;

template <typename Scalar>
struct TrainResult {
  ModelParams<Scalar> params;
  TrainLog log;
};

/// Called after each completed epoch with the current parameters.
template <typename Scalar>
using EpochCallback = std::function<void(const EpochRecord&, const ModelParams<Scalar>&)>;

std::string checkpoint_path(const std::string& dir, int epoch);

/// Generic optimisation loop: per epoch, seeded batches of `dataset`; per
/// batch, objective -> backward -> optional clipping / L2 -> Adam.
template <typename Scalar>
TrainResult<Scalar> optimize(ModelParams<Scalar> params, const Dataset& dataset, const TrainConfig& cfg,
                             std::vector<std::string> component_names, const BatchObjective<Scalar>& objective,
                             bool rig_aware, const EpochCallback<Scalar>& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  TrainResult<Scalar> result{std::move(params), TrainLog{std::move(component_names), {}}};
  ModelParams<Scalar>& p = result.params;
  AdamState<Scalar> adam = AdamState<Scalar>::zeros(p);
  const BatchSampler sampler(dataset, cfg.batch_size, cfg.seed, rig_aware);
  std::uint64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, cfg);
    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = lr;
    record.components.assign(result.log.component_names.size(), 0.0);
    std::size_t seen = 0;

    for (const auto& batch : sampler.epoch(std::size_t(epoch))) {
      ad::Tape<Scalar> tape;
      const auto net = bind(tape, p, true);
      const StepLoss<Scalar> loss = objective(tape, net, batch, step);
      tape.backward(loss.total);
      ModelParams<Scalar> grads = gradients(tape, net, p);

      if (cfg.decay_mode == DecayMode::l2) {
        const Scalar w = Scalar(cfg.l2_weight);
        visit_tensors([w](const std::string&, ad::Matrix<Scalar>& g, ad::Matrix<Scalar>& theta) { g += w * theta; },
                      grads.net, p.net);
      }
      if (cfg.max_grad_norm > 0.0) {
        double sq = 0.0;
        visit_tensors([&](const std::string&, ad::Matrix<Scalar>& g) { sq += double(g.squaredNorm()); }, grads.net);
        const double norm = std::sqrt(sq);
        if (norm > cfg.max_grad_norm) {
          const Scalar factor = Scalar(cfg.max_grad_norm / norm);
          visit_tensors([factor](const std::string&, ad::Matrix<Scalar>& g) { g *= factor; }, grads.net);
        }
      }
      adam_step(p, grads, adam, lr, cfg.adam);

      const double weight = double(batch.size());
      record.total += weight * double(loss.total.scalar());
      for (std::size_t k = 0; k < record.components.size() && k < loss.components.size(); ++k) {
        record.components[k] += weight * loss.components[k];
      }
      seen += batch.size();
      ++step;
      ++record.steps;
    }

    record.total /= double(seen);
    for (double& c : record.components) c /= double(seen);
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(record);
    if (on_epoch) on_epoch(record, p);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(checkpoint_path(cfg.checkpoint_dir, epoch + 1), p);
    }
  }
  return result;
}

/// Names of the logged loss components for a configuration.
std::vector<std::string> loss_component_names(const TrainConfig& cfg);

/// Self-supervised training from a fresh initialisation (seed derived from
/// cfg.seed). Every sample must carry at least two views.
template <typename Scalar>
TrainResult<Scalar> train(const Dataset& dataset, const TrainConfig& cfg, const EpochCallback<Scalar>& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  PrepareOptions prep;
  prep.root_joint = cfg.root_joint;
  prep.max_cameras = cfg.max_cameras;
  prep.unit_confidences = cfg.ablation == Ablation::no_confidences;
  const std::vector<PreparedSample> samples = prepare_samples(dataset, prep);
  const LossConfig loss_cfg = cfg.loss_config();

  BatchObjective<Scalar> objective = [&](ad::Tape<Scalar>& tape, const Network<ad::Var<Scalar>>& net,
                                         const std::vector<std::size_t>& batch, std::uint64_t step) {
    const auto perm = step_permutation(samples, batch, cfg.seed, step);
    const LossBreakdown<Scalar> b = batch_loss(tape, net, dataset.joints, samples, batch, perm, loss_cfg);
    StepLoss<Scalar> out{b.total, {}};
    switch (loss_cfg.objective) {
      case Objective::mixing:
        out.components = {b.view_loss, b.camera_loss};
        break;
      case Objective::pose_equality:
        out.components = {b.view_loss, b.equality_loss, b.camera_loss};
        break;
      case Objective::camera_equality:
        out.components = {b.view_loss, b.equality_loss};
        break;
    }
    return out;
  };
  ModelParams<Scalar> init = init_params<Scalar>(dataset.joints, derive_seed(cfg.seed, "init"), cfg.hidden);
  return optimize<Scalar>(std::move(init), dataset, cfg, loss_component_names(cfg), objective,
                          cfg.static_camera_mode || cfg.ablation == Ablation::camera_equality, on_epoch);
}

extern template TrainResult<float> train<float>(const Dataset&, const TrainConfig&, const EpochCallback<float>&);
extern template TrainResult<double> train<double>(const Dataset&, const TrainConfig&, const EpochCallback<double>&);

}  // namespace canonpose
