#include "canonpose/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "canonpose/data.hpp"
#include "canonpose/evaluation.hpp"
#include "canonpose/model.hpp"
#include "canonpose/train.hpp"

namespace canonpose::cli {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration keys shared by the JSON config file and the flags. A key
// `noise_std` is the flag `--noise-std`.

enum class Kind { integer, real, boolean, text, int_list };

struct Key {
  std::string name;
  Kind kind;
  std::string help;
};

const std::map<std::string, std::vector<Key>>& schema() {
  static const std::map<std::string, std::vector<Key>> keys = {
      {"synth",
       {{"samples", Kind::integer, "number of samples"},
        {"cameras", Kind::integer, "cameras per sample"},
        {"noise_std", Kind::real, "2D noise std in normalised units"},
        {"camera_mode", Kind::text, "static | moving"},
        {"rigs", Kind::integer, "number of static rigs"},
        {"occlusion_prob", Kind::real, "per-joint occlusion probability"},
        {"angle_scale", Kind::real, "multiplier on joint-angle ranges"},
        {"max_elevation_deg", Kind::real, "camera elevation range"},
        {"seed", Kind::integer, "root seed"},
        {"id_prefix", Kind::text, "sample id prefix"},
        {"out", Kind::text, "dataset output path (JSON Lines)"},
        {"ground_truth", Kind::text, "ground-truth output path (default <out>.gt.jsonl)"}}},
      {"train",
       {{"data", Kind::text, "training dataset (JSON Lines)"},
        {"epochs", Kind::integer, "training epochs"},
        {"lr", Kind::real, "initial learning rate"},
        {"lr_decay_epochs", Kind::int_list, "comma-separated decay epochs"},
        {"lr_decay_factor", Kind::real, "learning-rate decay factor"},
        {"decay_mode", Kind::text, "lr_step | l2"},
        {"l2_weight", Kind::real, "L2 coefficient for decay_mode l2"},
        {"batch_size", Kind::integer, "samples per batch"},
        {"lambda_cam", Kind::real, "camera-consistency weight"},
        {"lambda_equality", Kind::real, "equality-ablation weight"},
        {"static_cameras", Kind::boolean, "enable camera consistency (static rigs)"},
        {"ablation", Kind::text, "none | pose_equality | camera_equality | no_confidences"},
        {"max_cameras", Kind::integer, "use only the first k views of each sample (0 = all)"},
        {"max_grad_norm", Kind::real, "gradient clipping norm (0 = off)"},
        {"root_joint", Kind::integer, "root joint index"},
        {"hidden", Kind::integer, "hidden width"},
        {"precision", Kind::text, "float | double"},
        {"checkpoint_every", Kind::integer, "periodic checkpoint interval in epochs (0 = off)"},
        {"seed", Kind::integer, "root seed"},
        {"out_dir", Kind::text, "output directory"}}},
      {"eval",
       {{"checkpoint", Kind::text, "model checkpoint"},
        {"data", Kind::text, "evaluation dataset with gt3d"},
        {"ground_truth", Kind::text, "ground-truth file with camera rotations"},
        {"out", Kind::text, "report path (JSON)"},
        {"curve", Kind::text, "CP curve path (CSV, default <out>.cp.csv)"},
        {"pck_alignment", Kind::text, "scale | similarity"},
        {"pck_threshold", Kind::real, "PCK threshold in mm"},
        {"no_depth_flip", Kind::boolean, "keep the network's depth sign"},
        {"no_confidences", Kind::boolean, "feed unit confidences"},
        {"root_joint", Kind::integer, "root joint index"},
        {"threads", Kind::integer, "inference worker threads"}}},
      {"infer",
       {{"checkpoint", Kind::text, "model checkpoint"},
        {"data", Kind::text, "input dataset (JSON Lines)"},
        {"out", Kind::text, "predictions output path (JSON Lines)"},
        {"no_confidences", Kind::boolean, "feed unit confidences"},
        {"root_joint", Kind::integer, "root joint index"},
        {"threads", Kind::integer, "inference worker threads"}}},
  };
  return keys;
}

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

json convert_flag(const Key& key, const std::string& raw) {
  try {
    std::size_t used = 0;
    switch (key.kind) {
      case Kind::integer: {
        if (!raw.empty() && raw[0] == '-') {
          const long long v = std::stoll(raw, &used);
          if (used != raw.size()) break;
          return v;
        }
        const unsigned long long v = std::stoull(raw, &used);
        if (used != raw.size()) break;
        return v;
      }
      case Kind::real: {
        const double v = std::stod(raw, &used);
        if (used != raw.size()) break;
        return v;
      }
      case Kind::text:
        return raw;
      case Kind::int_list: {
        json arr = json::array();
        std::stringstream ss(raw);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (item.empty()) continue;
          const long long v = std::stoll(item, &used);
          if (used != item.size()) throw std::invalid_argument(item);
          arr.push_back(v);
        }
        return arr;
      }
      case Kind::boolean:
        return true;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid value '" + raw + "' for " + flag_name(key.name));
}

void check_type(const Key& key, const json& v) {
  bool ok = false;
  switch (key.kind) {
    case Kind::integer: ok = v.is_number_integer(); break;
    case Kind::real: ok = v.is_number(); break;
    case Kind::boolean: ok = v.is_boolean(); break;
    case Kind::text: ok = v.is_string(); break;
    case Kind::int_list:
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
      break;
  }
  if (!ok) throw ConfigError("config key '" + key.name + "' has the wrong type");
}

/// Merged settings of one subcommand: config-file section overridden by flags.
class Settings {
 public:
  Settings(std::string section, json values) : section_(std::move(section)), values_(std::move(values)) {}

  bool has(const std::string& k) const { return values_.contains(k); }

  template <typename T>
  T get(const std::string& k, T fallback) const {
    auto it = values_.find(k);
    return it == values_.end() ? fallback : it->get<T>();
  }

  std::string require(const std::string& k) const {
    if (!has(k)) throw ConfigError(section_ + ": " + flag_name(k) + " is required");
    return values_.at(k).get<std::string>();
  }

  std::uint64_t seed() const {
    auto it = values_.find("seed");
    if (it == values_.end()) return 0;
    if (it->is_number_unsigned()) return it->get<std::uint64_t>();
    if (it->get<long long>() < 0) throw ConfigError("seed must be non-negative");
    return std::uint64_t(it->get<long long>());
  }

  long long non_negative(const std::string& k, long long fallback) const {
    const long long v = get<long long>(k, fallback);
    if (v < 0) throw ConfigError(flag_name(k) + " must be non-negative");
    return v;
  }

 private:
  std::string section_;
  json values_;
};

struct Subcommand {
  CLI::App* app = nullptr;
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> options;
};

Settings merge(const std::string& section, const Subcommand& sub, const std::string& config_path) {
  const std::vector<Key>& keys = schema().at(section);
  json merged = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config: " + config_path);
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + config_path + ": " + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
      if (!schema().contains(it.key())) throw ConfigError("unknown config section '" + it.key() + "'");
    }
    if (cfg.contains(section)) {
      const json& sec = cfg.at(section);
      if (!sec.is_object()) throw ConfigError("config section '" + section + "' must be an object");
      for (auto it = sec.begin(); it != sec.end(); ++it) {
        auto key = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return k.name == it.key(); });
        if (key == keys.end()) throw ConfigError("unknown key '" + it.key() + "' in config section '" + section + "'");
        check_type(*key, it.value());
        merged[it.key()] = it.value();
      }
    }
  }
  for (const Key& key : keys) {
    const CLI::Option* opt = sub.options.at(key.name);
    if (opt->count() == 0) continue;
    merged[key.name] = convert_flag(key, key.kind == Kind::boolean ? std::string() : sub.raw.at(key.name));
  }
  return Settings(section, std::move(merged));
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const Settings& s) {
  SynthConfig cfg;
  cfg.num_samples = std::size_t(s.non_negative("samples", (long long)cfg.num_samples));
  cfg.num_cameras = int(s.get<long long>("cameras", cfg.num_cameras));
  cfg.noise_std = s.get<double>("noise_std", cfg.noise_std);
  const std::string mode = s.get<std::string>("camera_mode", "static");
  if (mode == "static") {
    cfg.camera_mode = CameraMode::static_rig;
  } else if (mode == "moving") {
    cfg.camera_mode = CameraMode::moving;
  } else {
    throw ConfigError("--camera-mode must be static or moving");
  }
  cfg.num_rigs = int(s.get<long long>("rigs", cfg.num_rigs));
  cfg.occlusion_prob = s.get<double>("occlusion_prob", cfg.occlusion_prob);
  cfg.angle_scale = s.get<double>("angle_scale", cfg.angle_scale);
  cfg.max_elevation_deg = s.get<double>("max_elevation_deg", cfg.max_elevation_deg);
  cfg.seed = s.seed();
  cfg.id_prefix = s.get<std::string>("id_prefix", cfg.id_prefix);
  if (cfg.num_cameras < 2) throw ConfigError("--cameras must be >= 2");
  if (!(cfg.noise_std >= 0.0)) throw ConfigError("--noise-std must be >= 0");
  if (cfg.num_rigs < 1) throw ConfigError("--rigs must be >= 1");
  if (!(cfg.occlusion_prob >= 0.0 && cfg.occlusion_prob <= 1.0)) throw ConfigError("--occlusion-prob must lie in [0, 1]");
  const std::string out = s.require("out");
  const std::string gt = s.get<std::string>("ground_truth", out + ".gt.jsonl");

  const SyntheticSet set = generate_synthetic(cfg);
  save_dataset(out, set.dataset.samples);
  save_ground_truth(gt, set.truth);
  std::cerr << "synth: " << set.dataset.size() << " samples, " << cfg.num_cameras << " cameras, mode " << mode
            << ", seed " << cfg.seed << " -> " << out << ", " << gt << '\n';
  return kExitOk;
}

template <typename Scalar>
int run_training(const Dataset& data, const TrainConfig& cfg, const std::string& out_dir) {
  const auto result = train<Scalar>(data, cfg, [&](const EpochRecord& r, const ModelParams<Scalar>&) {
    std::cerr << "epoch " << r.epoch << "/" << cfg.epochs << " lr " << r.lr << " loss " << r.total << " ("
              << r.wall_seconds << " s)\n";
  });
  const std::string ckpt = (std::filesystem::path(out_dir) / "model.ckpt").string();
  save_checkpoint(ckpt, result.params);
  result.log.save_csv((std::filesystem::path(out_dir) / "train_log.csv").string());
  std::cerr << "train: wrote " << ckpt << '\n';
  return kExitOk;
}

int cmd_train(const Settings& s) {
  TrainConfig cfg;
  cfg.epochs = int(s.get<long long>("epochs", cfg.epochs));
  cfg.initial_lr = s.get<double>("lr", cfg.initial_lr);
  if (s.has("lr_decay_epochs")) cfg.lr_decay_epochs = s.get<std::vector<int>>("lr_decay_epochs", {});
  cfg.lr_decay_factor = s.get<double>("lr_decay_factor", cfg.lr_decay_factor);
  cfg.decay_mode = parse_decay_mode(s.get<std::string>("decay_mode", to_string(cfg.decay_mode)));
  cfg.l2_weight = s.get<double>("l2_weight", cfg.l2_weight);
  const long long batch = s.get<long long>("batch_size", (long long)cfg.batch_size);
  if (batch < 2) throw ConfigError("--batch-size must be >= 2");
  cfg.batch_size = std::size_t(batch);
  cfg.lambda_cam = s.get<double>("lambda_cam", cfg.lambda_cam);
  cfg.lambda_equality = s.get<double>("lambda_equality", cfg.lambda_equality);
  cfg.static_camera_mode = s.get<bool>("static_cameras", cfg.static_camera_mode);
  cfg.ablation = parse_ablation(s.get<std::string>("ablation", to_string(cfg.ablation)));
  cfg.max_cameras = int(s.get<long long>("max_cameras", cfg.max_cameras));
  cfg.max_grad_norm = s.get<double>("max_grad_norm", cfg.max_grad_norm);
  cfg.root_joint = int(s.get<long long>("root_joint", cfg.root_joint));
  cfg.hidden = Eigen::Index(s.get<long long>("hidden", cfg.hidden));
  cfg.checkpoint_every = int(s.get<long long>("checkpoint_every", cfg.checkpoint_every));
  cfg.seed = s.seed();
  const std::string precision = s.get<std::string>("precision", "float");
  if (precision != "float" && precision != "double") throw ConfigError("--precision must be float or double");
  cfg.validate();

  const std::string out_dir = s.require("out_dir");
  const Dataset data = load_dataset(s.require("data"));
  if (data.empty()) throw ConfigError("training dataset is empty");
  if (cfg.root_joint >= data.joints) throw ConfigError("--root-joint out of range");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  if (cfg.checkpoint_every > 0) {
    cfg.checkpoint_dir = (std::filesystem::path(out_dir) / "checkpoints").string();
    std::filesystem::create_directories(cfg.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.checkpoint_dir + ": " + ec.message());
  }
  if (data.clamped_confidences > 0) {
    std::cerr << "warning: " << data.clamped_confidences << " confidences clamped to [0, 1]\n";
  }
  return precision == "float" ? run_training<float>(data, cfg, out_dir) : run_training<double>(data, cfg, out_dir);
}

unsigned thread_count(const Settings& s) {
  const long long t = s.get<long long>("threads", 1);
  if (t < 1) throw ConfigError("--threads must be >= 1");
  return unsigned(t);
}

int cmd_eval(const Settings& s) {
  const ModelParams<double> params = load_checkpoint<double>(s.require("checkpoint"));
  const Dataset data = load_dataset(s.require("data"));
  if (data.joints != 0 && data.joints != params.joints) {
    throw ConfigError("dataset has " + std::to_string(data.joints) + " joints, checkpoint has " +
                      std::to_string(params.joints));
  }
  EvalOptions opt;
  opt.root_joint = int(s.get<long long>("root_joint", 0));
  if (opt.root_joint < 0 || opt.root_joint >= params.joints) throw ConfigError("--root-joint out of range");
  opt.resolve_depth_flip = !s.get<bool>("no_depth_flip", false);
  opt.unit_confidences = s.get<bool>("no_confidences", false);
  opt.pck_alignment = parse_pck_alignment(s.get<std::string>("pck_alignment", "scale"));
  opt.pck_threshold = s.get<double>("pck_threshold", 150.0);
  opt.threads = thread_count(s);
  std::vector<SampleTruth> truth;
  if (s.has("ground_truth")) truth = load_ground_truth(s.require("ground_truth"));
  if (data.empty()) throw EmptyEvalSet("evaluation dataset is empty");

  const Evaluation ev = evaluate(params, data, s.has("ground_truth") ? &truth : nullptr, opt);
  const std::string out = s.require("out");
  ev.report.save_json(out);
  ev.report.save_curve_csv(s.get<std::string>("curve", out + ".cp.csv"));
  std::cerr << "eval: " << ev.report.n_poses << " poses, PMPJPE " << ev.report.pmpjpe << " mm, MPJPE "
            << ev.report.mpjpe << " mm, CPS " << ev.report.cps << " mm\n";
  return kExitOk;
}

template <typename Derived>
ordered_json rows(const Eigen::MatrixBase<Derived>& m) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    arr.push_back(std::move(row));
  }
  return arr;
}

int cmd_infer(const Settings& s) {
  const ModelParams<double> params = load_checkpoint<double>(s.require("checkpoint"));
  const Dataset data = load_dataset(s.require("data"));
  if (data.joints != 0 && data.joints != params.joints) {
    throw ConfigError("dataset has " + std::to_string(data.joints) + " joints, checkpoint has " +
                      std::to_string(params.joints));
  }
  const int root = int(s.get<long long>("root_joint", 0));
  if (root < 0 || root >= params.joints) throw ConfigError("--root-joint out of range");
  const bool unit_conf = s.get<bool>("no_confidences", false);

  std::vector<Pose2Dd> inputs;
  std::vector<std::pair<const MultiViewSample*, const CameraView*>> refs;
  for (const auto& sample : data.samples) {
    for (const auto& view : sample.views) {
      Pose2Dd w = normalize_pose2d(view.pose, root);
      if (unit_conf) w.confidences.setOnes();
      inputs.push_back(std::move(w));
      refs.emplace_back(&sample, &view);
    }
  }
  std::vector<const Pose2Dd*> ptrs;
  for (const auto& w : inputs) ptrs.push_back(&w);
  const auto outputs = infer_views(params, ptrs, thread_count(s));

  const std::string out_path = s.require("out");
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + out_path);
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const LiftOutput<double>& o = outputs[k];
    ordered_json j;
    j["sample_id"] = refs[k].first->sample_id;
    j["rig_id"] = refs[k].first->rig_id;
    j["camera_id"] = refs[k].second->camera_id;
    j["canonical"] = rows(o.canonical);
    j["axis_angle"] = {o.rotation(0), o.rotation(1), o.rotation(2)};
    j["rotation_matrix"] = rows(o.rotation_matrix);
    j["camera_frame"] = rows(o.camera_frame());
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + out_path);
  std::cerr << "infer: " << outputs.size() << " views -> " << out_path << '\n';
  return kExitOk;
}

int report(const char* kind, const std::exception& e, int code) {
  std::cerr << "error (" << kind << "): " << e.what() << '\n';
  return code;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app("Self-supervised multi-view 3D pose lifting", "canonpose");
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags take precedence");

  std::map<std::string, Subcommand> subs;
  const std::map<std::string, std::string> descriptions = {
      {"synth", "generate a synthetic multi-view dataset"},
      {"train", "train the lifting network"},
      {"eval", "evaluate a checkpoint against ground truth"},
      {"infer", "single-view inference"},
  };
  for (const auto& [name, keys] : schema()) {
    Subcommand& sub = subs[name];
    sub.app = app.add_subcommand(name, descriptions.at(name));
    for (const Key& key : keys) {
      if (key.kind == Kind::boolean) {
        sub.options[key.name] = sub.app->add_flag(flag_name(key.name), key.help);
      } else {
        sub.options[key.name] = sub.app->add_option(flag_name(key.name), sub.raw[key.name], key.help);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    for (auto& [name, sub] : subs) {
      if (!sub.app->parsed()) continue;
      const Settings settings = merge(name, sub, config_path);
      if (name == "synth") return cmd_synth(settings);
      if (name == "train") return cmd_train(settings);
      if (name == "eval") return cmd_eval(settings);
      return cmd_infer(settings);
    }
  } catch (const IoError& e) {
    return report("io", e, kExitIo);
  } catch (const NonFiniteValue& e) {
    return report("numerical", e, kExitNumeric);
  } catch (const NonFiniteGradient& e) {
    return report("numerical", e, kExitNumeric);
  } catch (const DegenerateReprojection& e) {
    return report("numerical", e, kExitNumeric);
  } catch (const json::exception& e) {
    return report("config", e, kExitConfig);
  } catch (const Error& e) {
    return report("config", e, kExitConfig);
  } catch (const std::invalid_argument& e) {
    return report("config", e, kExitConfig);
  } catch (const std::out_of_range& e) {
    return report("config", e, kExitConfig);
  }
  return kExitConfig;
}

}  // namespace canonpose::cli
