#include "canonpose/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace canonpose {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::pose_equality: return "pose_equality";
    case Ablation::camera_equality: return "camera_equality";
    case Ablation::no_confidences: return "no_confidences";
  }
  return "none";
}

Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::none, Ablation::pose_equality, Ablation::camera_equality, Ablation::no_confidences}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("unknown ablation '" + s + "'");
}

std::string to_string(DecayMode d) { return d == DecayMode::lr_step ? "lr_step" : "l2"; }

DecayMode parse_decay_mode(const std::string& s) {
  if (s == "lr_step") return DecayMode::lr_step;
  if (s == "l2") return DecayMode::l2;
  throw ConfigError("unknown decay mode '" + s + "'");
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  check(epochs >= 1, "epochs must be >= 1");
  check(initial_lr > 0.0 && std::isfinite(initial_lr), "learning rate must be positive");
  check(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0, "lr decay factor must lie in (0, 1]");
  check(std::all_of(lr_decay_epochs.begin(), lr_decay_epochs.end(), [](int e) { return e >= 0; }),
        "lr decay epochs must be >= 0");
  check(l2_weight >= 0.0, "l2 weight must be >= 0");
  check(batch_size >= 2, "batch size must be >= 2");
  check(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "adam beta1 must lie in [0, 1)");
  check(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "adam beta2 must lie in [0, 1)");
  check(adam.eps > 0.0, "adam epsilon must be positive");
  check(lambda_cam >= 0.0, "lambda_cam must be >= 0");
  check(lambda_equality >= 0.0, "lambda_equality must be >= 0");
  check(max_cameras == 0 || max_cameras >= 2, "max cameras must be 0 (all) or >= 2");
  check(max_grad_norm >= 0.0, "max grad norm must be >= 0");
  check(root_joint >= 0, "root joint must be >= 0");
  check(hidden >= 1, "hidden width must be >= 1");
  check(checkpoint_every >= 0, "checkpoint interval must be >= 0");
}

LossConfig TrainConfig::loss_config() const {
  LossConfig c;
  c.objective = ablation == Ablation::pose_equality     ? Objective::pose_equality
                : ablation == Ablation::camera_equality ? Objective::camera_equality
                                                        : Objective::mixing;
  c.static_cameras = static_camera_mode;
  c.lambda_cam = lambda_cam;
  c.lambda_equality = lambda_equality;
  return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw std::out_of_range("lr_at: epoch outside the schedule");
  if (cfg.decay_mode == DecayMode::l2) return cfg.initial_lr;
  const auto decays = std::count_if(cfg.lr_decay_epochs.begin(), cfg.lr_decay_epochs.end(),
                                    [epoch](int e) { return e <= epoch; });
  return cfg.initial_lr * std::pow(cfg.lr_decay_factor, double(decays));
}

std::vector<PreparedSample> prepare_samples(const Dataset& dataset, const PrepareOptions& options) {
  std::vector<PreparedSample> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) {
    PreparedSample p;
    p.sample_id = s.sample_id;
    p.rig_id = s.rig_id;
    std::size_t count = s.views.size();
    if (options.max_cameras > 0) count = std::min(count, std::size_t(options.max_cameras));
    if (options.require_multiview && count < 2) {
      throw SingleViewSample("sample '" + s.sample_id + "' has " + std::to_string(count) + " usable view(s)");
    }
    for (std::size_t k = 0; k < count; ++k) {
      PreparedView v;
      v.camera_id = s.views[k].camera_id;
      v.observation = normalize_pose2d(s.views[k].pose, options.root_joint);
      if (options.unit_confidences) v.observation.confidences.setOnes();
      p.views.push_back(std::move(v));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::size_t> step_permutation(const std::vector<PreparedSample>& samples,
                                          const std::vector<std::size_t>& batch, std::uint64_t seed,
                                          std::uint64_t step) {
  std::vector<std::string> rigs;
  rigs.reserve(batch.size());
  for (std::size_t s : batch) rigs.push_back(samples.at(s).rig_id);
  std::mt19937_64 rng(derive_seed(seed, "permutation", step));
  return rig_permutation(rigs, rng);
}

std::vector<std::string> loss_component_names(const TrainConfig& cfg) {
  switch (cfg.loss_config().objective) {
    case Objective::mixing: return {"view_mixing_loss", "camera_consistency_loss"};
    case Objective::pose_equality: return {"self_reprojection_loss", "pose_equality_loss", "camera_consistency_loss"};
    case Objective::camera_equality: return {"self_reprojection_loss", "camera_equality_loss"};
  }
  return {};
}

std::string checkpoint_path(const std::string& dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
  return (std::filesystem::path(dir) / name).string();
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "epoch,lr,total_loss";
  for (const auto& n : component_names) out << ',' << n;
  out << ",wall_time_s\n";
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  for (const auto& r : epochs) {
    out << r.epoch << ',' << num(r.lr) << ',' << num(r.total);
    for (double c : r.components) out << ',' << num(c);
    out << ',' << num(r.wall_seconds) << '\n';
  }
}

void TrainLog::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_csv(out);
  if (!out) throw IoError("failed writing " + path);
}

template TrainResult<float> train<float>(const Dataset&, const TrainConfig&, const EpochCallback<float>&);
template TrainResult<double> train<double>(const Dataset&, const TrainConfig&, const EpochCallback<double>&);

}  // namespace canonpose
