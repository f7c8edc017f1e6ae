#include "canonpose/evaluation.hpp"

#include <map>
#include <thread>

namespace canonpose {
namespace {

Pose3d flip_depth(const Pose3d& p) {
  Pose3d out = p;
  out.col(2) = -out.col(2);
  return out;
}

double mean_pmpjpe(const std::vector<Pose3d>& preds, const std::vector<Pose3d>& gts, bool with_scale) {
  double sum = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) sum += pmpjpe(preds[k], gts[k], with_scale);
  return sum / double(preds.size());
}

}  // namespace

template <typename Scalar>
std::vector<LiftOutput<double>> infer_views(const ModelParams<Scalar>& params, const std::vector<const Pose2Dd*>& views,
                                            unsigned threads, std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  std::vector<LiftOutput<double>> out(views.size());
  const std::size_t n_chunks = (views.size() + chunk - 1) / chunk;
  auto run = [&](std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(views.size(), begin + chunk);
    std::vector<const Pose2Dd*> part(views.begin() + std::ptrdiff_t(begin), views.begin() + std::ptrdiff_t(end));
    auto res = forward_batch(params, part);
    for (std::size_t k = 0; k < res.size(); ++k) out[begin + k] = std::move(res[k]);
  };
  if (threads <= 1 || n_chunks <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
    return out;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < n_chunks; c += threads) run(c);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

Evaluation evaluate_predictions(std::vector<Pose3d> predictions, std::vector<Pose3d> targets,
                                std::vector<Pose3d> canonical, bool camera_frame_targets, const EvalOptions& options) {
  if (predictions.empty()) throw EmptyEvalSet("evaluation: no poses with ground truth");
  Evaluation ev;
  bool flipped = false;
  if (options.resolve_depth_flip) {
    std::vector<Pose3d> mirrored;
    mirrored.reserve(predictions.size());
    for (const auto& p : predictions) mirrored.push_back(flip_depth(p));
    if (mean_pmpjpe(mirrored, targets, options.pmpjpe_scale) < mean_pmpjpe(predictions, targets, options.pmpjpe_scale)) {
      predictions = std::move(mirrored);
      for (auto& c : canonical) c = flip_depth(c);
      flipped = true;
    }
  }
  ev.report = compute_report(predictions, targets, options.pck_alignment, options.pck_threshold, options.pmpjpe_scale);
  if (!camera_frame_targets) {
    double sum = 0.0;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
      const Pose3d rotated = similarity_align(predictions[k], targets[k], false).aligned;
      sum += mpjpe(center_on_root(rotated, options.root_joint), targets[k], true);
    }
    ev.report.mpjpe = sum / double(predictions.size());
    ev.report.mpjpe_frame = "rotation_aligned";
  }
  ev.report.depth_flipped = flipped;
  ev.predictions = std::move(predictions);
  ev.targets = std::move(targets);
  ev.canonical = std::move(canonical);
  return ev;
}

template <typename Scalar>
Evaluation evaluate(const ModelParams<Scalar>& params, const Dataset& dataset, const std::vector<SampleTruth>* truth,
                    const EvalOptions& options) {
  if (dataset.joints != 0 && dataset.joints != params.joints) {
    throw ShapeMismatch("dataset has " + std::to_string(dataset.joints) + " joints, model expects " +
                        std::to_string(params.joints));
  }
  std::map<std::string, const SampleTruth*> by_id;
  if (truth != nullptr) {
    for (const auto& t : *truth) by_id[t.sample_id] = &t;
  }

  std::vector<ViewRef> refs;
  std::vector<Pose2Dd> inputs;
  std::vector<Pose3d> targets;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const MultiViewSample& sample = dataset.samples[s];
    const SampleTruth* st = nullptr;
    if (truth != nullptr) {
      auto it = by_id.find(sample.sample_id);
      if (it == by_id.end()) throw MissingGroundTruth("no ground truth for sample '" + sample.sample_id + "'");
      st = it->second;
    } else if (!sample.gt3d) {
      throw MissingGroundTruth("sample '" + sample.sample_id + "' has no gt3d");
    }
    for (std::size_t v = 0; v < sample.views.size(); ++v) {
      Pose3d target;
      if (st != nullptr) {
        std::size_t k = 0;
        while (k < st->views.size() && st->views[k].camera_id != sample.views[v].camera_id) ++k;
        if (k == st->views.size()) {
          throw MissingGroundTruth("no rotation for camera '" + sample.views[v].camera_id + "' of sample '" +
                                   sample.sample_id + "'");
        }
        target = st->camera_pose_mm(k);
      } else {
        target = *sample.gt3d;
      }
      if (target.rows() != params.joints) throw ShapeMismatch("ground truth joint count differs from the model");
      targets.push_back(center_on_root(target, options.root_joint));
      Pose2Dd w = normalize_pose2d(sample.views[v].pose, options.root_joint);
      if (options.unit_confidences) w.confidences.setOnes();
      inputs.push_back(std::move(w));
      refs.push_back({s, v});
    }
  }

  std::vector<const Pose2Dd*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& w : inputs) ptrs.push_back(&w);
  const std::vector<LiftOutput<double>> outputs = infer_views(params, ptrs, options.threads, options.chunk);

  std::vector<Pose3d> predictions, canonical;
  predictions.reserve(outputs.size());
  canonical.reserve(outputs.size());
  for (const auto& o : outputs) {
    predictions.push_back(center_on_root(o.camera_frame(), options.root_joint));
    canonical.push_back(o.canonical);
  }
  Evaluation ev = evaluate_predictions(std::move(predictions), std::move(targets), std::move(canonical),
                                       truth != nullptr, options);
  ev.views = std::move(refs);
  return ev;
}

template std::vector<LiftOutput<double>> infer_views<float>(const ModelParams<float>&,
                                                            const std::vector<const Pose2Dd*>&, unsigned, std::size_t);
template std::vector<LiftOutput<double>> infer_views<double>(const ModelParams<double>&,
                                                             const std::vector<const Pose2Dd*>&, unsigned,
                                                             std::size_t);
template Evaluation evaluate<float>(const ModelParams<float>&, const Dataset&, const std::vector<SampleTruth>*,
                                    const EvalOptions&);
template Evaluation evaluate<double>(const ModelParams<double>&, const Dataset&, const std::vector<SampleTruth>*,
                                     const EvalOptions&);

}  // namespace canonpose
