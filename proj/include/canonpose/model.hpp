#pragma once

// Two-branch residual lifting network.
//
//   input (2j coords, j confidences) -> dense(3j -> H) -> leaky -> residual
//     pose path:   residual -> residual -> dense(H -> 3j)   canonical pose
//     camera path: residual -> residual -> dense(H -> 3)    axis-angle
//
// A residual block is x + leaky(dense(leaky(dense(x)))). Output layers have no
// activation. Joint order of the canonical output matches the input order:
// entry 3i + c of the pose output is coordinate c of joint i.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "canonpose/autodiff.hpp"
#include "canonpose/geometry.hpp"
#include "canonpose/graph_geometry.hpp"

namespace canonpose {

inline constexpr Eigen::Index kHiddenWidth = 1024;

template <typename T>
struct Dense {
  T weight;  // in x out
  T bias;    // 1 x out
};

template <typename T>
struct Residual {
  Dense<T> first;
  Dense<T> second;
};

template <typename T>
struct Network {
  Dense<T> trunk_in;
  Residual<T> trunk_block;
  std::array<Residual<T>, 2> pose_blocks;
  Dense<T> pose_out;
  std::array<Residual<T>, 2> cam_blocks;
  Dense<T> cam_out;
};

/// Calls fn(name, tensor_of_net_1, tensor_of_net_2, ...) for every tensor in
/// declaration order. The order is also the checkpoint order.
template <typename Fn, typename... Nets>
void visit_tensors(Fn&& fn, Nets&... nets) {
  auto dense = [&](const std::string& name, auto*... layers) {
    fn(name + ".weight", layers->weight...);
    fn(name + ".bias", layers->bias...);
  };
  auto residual = [&](const std::string& name, auto*... blocks) {
    dense(name + ".first", &blocks->first...);
    dense(name + ".second", &blocks->second...);
  };
  dense("trunk_in", &nets.trunk_in...);
  residual("trunk_block", &nets.trunk_block...);
  for (std::size_t k = 0; k < 2; ++k) residual("pose_blocks." + std::to_string(k), &nets.pose_blocks[k]...);
  dense("pose_out", &nets.pose_out...);
  for (std::size_t k = 0; k < 2; ++k) residual("cam_blocks." + std::to_string(k), &nets.cam_blocks[k]...);
  dense("cam_out", &nets.cam_out...);
}

template <typename Scalar>
struct ModelParams {
  int joints = 0;
  std::uint64_t seed = 0;
  Eigen::Index hidden = kHiddenWidth;
  Network<ad::Matrix<Scalar>> net;

  Eigen::Index input_size() const { return 3 * joints; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit_tensors([&](const std::string&, const ad::Matrix<Scalar>& t) { n += std::size_t(t.size()); }, net);
    return n;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.joints = joints;
    out.seed = seed;
    out.hidden = hidden;
    Network<ad::Matrix<Scalar>> src = net;
    visit_tensors([](const std::string&, ad::Matrix<Other>& dst, ad::Matrix<Scalar>& from) {
      dst = from.template cast<Other>();
    }, out.net, src);
    return out;
  }

  /// Same structure with every tensor set to zero.
  ModelParams zeros_like() const {
    ModelParams out = *this;
    visit_tensors([](const std::string&, ad::Matrix<Scalar>& t) { t.setZero(); }, out.net);
    return out;
  }
};

/// Correctly shaped parameters with every entry zero.
template <typename Scalar>
ModelParams<Scalar> zero_params(int joints, Eigen::Index hidden = kHiddenWidth) {
  if (joints < 2) throw std::invalid_argument("model needs at least 2 joints");
  ModelParams<Scalar> p;
  p.joints = joints;
  p.hidden = hidden;
  const Eigen::Index in = 3 * joints;
  auto shape = [](Dense<ad::Matrix<Scalar>>& d, Eigen::Index fan_in, Eigen::Index fan_out) {
    d.weight = ad::Matrix<Scalar>::Zero(fan_in, fan_out);
    d.bias = ad::Matrix<Scalar>::Zero(1, fan_out);
  };
  auto shape_block = [&](Residual<ad::Matrix<Scalar>>& b) {
    shape(b.first, hidden, hidden);
    shape(b.second, hidden, hidden);
  };
  shape(p.net.trunk_in, in, hidden);
  shape_block(p.net.trunk_block);
  for (auto& b : p.net.pose_blocks) shape_block(b);
  shape(p.net.pose_out, hidden, in);
  for (auto& b : p.net.cam_blocks) shape_block(b);
  shape(p.net.cam_out, hidden, 3);
  return p;
}

/// Fan-in uniform initialisation: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero. The draw is made in double so float and double models from
/// the same seed agree up to rounding.
template <typename Scalar>
ModelParams<Scalar> init_params(int joints, std::uint64_t seed, Eigen::Index hidden = kHiddenWidth) {
  ModelParams<double> p = zero_params<double>(joints, hidden);
  p.seed = seed;

  std::mt19937_64 rng(seed);
  visit_tensors([&](const std::string& name, ad::Matrix<double>& t) {
    if (name.ends_with(".bias")) return;
    const double bound = 1.0 / std::sqrt(double(t.rows()));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (Eigen::Index k = 0; k < t.size(); ++k) t(k) = uniform(rng);
  }, p.net);
  if constexpr (std::is_same_v<Scalar, double>) {
    return p;
  } else {
    return p.template cast<Scalar>();
  }
}

/// Leaves for every tensor of `params` on `tape`.
template <typename Scalar>
Network<ad::Var<Scalar>> bind(ad::Tape<Scalar>& tape, const ModelParams<Scalar>& params, bool trainable) {
  Network<ad::Var<Scalar>> out;
  Network<ad::Matrix<Scalar>> values = params.net;
  visit_tensors([&](const std::string&, ad::Var<Scalar>& v, ad::Matrix<Scalar>& m) {
    v = trainable ? tape.variable(std::move(m)) : tape.constant(std::move(m));
  }, out, values);
  return out;
}

/// Gradients of the last backward() pass, shaped like `params`.
template <typename Scalar>
ModelParams<Scalar> gradients(const ad::Tape<Scalar>& tape, const Network<ad::Var<Scalar>>& bound,
                              const ModelParams<Scalar>& params) {
  ModelParams<Scalar> out;
  out.joints = params.joints;
  out.seed = params.seed;
  out.hidden = params.hidden;
  Network<ad::Var<Scalar>> vars = bound;
  visit_tensors([&](const std::string&, ad::Matrix<Scalar>& g, ad::Var<Scalar>& v) { g = tape.grad(v); },
                out.net, vars);
  return out;
}

template <typename Scalar>
ad::Var<Scalar> apply_dense(const Dense<ad::Var<Scalar>>& layer, const ad::Var<Scalar>& x) {
  return ad::add_row(ad::matmul(x, layer.weight), layer.bias);
}

template <typename Scalar>
ad::Var<Scalar> apply_residual(const Residual<ad::Var<Scalar>>& block, const ad::Var<Scalar>& x) {
  const ad::Var<Scalar> h = ad::leaky_relu(apply_dense(block.first, x));
  return x + ad::leaky_relu(apply_dense(block.second, h));
}

/// Network outputs for a stack of inputs, one row per view.
template <typename Scalar>
struct LiftGraph {
  ad::Var<Scalar> canonical;   // rows x 3j
  ad::Var<Scalar> axis_angle;  // rows x 3
  int joints = 0;

  ad::Var<Scalar> view_pose(Eigen::Index row) const {
    return ad::reshape(ad::block(canonical, row, 0, 1, 3 * joints), joints, 3);
  }
  ad::Var<Scalar> view_axis_angle(Eigen::Index row) const { return ad::block(axis_angle, row, 0, 1, 3); }
};

template <typename Scalar>
LiftGraph<Scalar> lift(const Network<ad::Var<Scalar>>& net, const ad::Var<Scalar>& input, int joints) {
  if (input.cols() != 3 * joints || net.trunk_in.weight.rows() != input.cols()) {
    throw ShapeMismatch("lift: input has " + std::to_string(input.cols()) + " features, network expects " +
                        std::to_string(net.trunk_in.weight.rows()));
  }
  ad::Var<Scalar> h = ad::leaky_relu(apply_dense(net.trunk_in, input));
  h = apply_residual(net.trunk_block, h);
  ad::Var<Scalar> pose = h;
  for (const auto& b : net.pose_blocks) pose = apply_residual(b, pose);
  ad::Var<Scalar> cam = h;
  for (const auto& b : net.cam_blocks) cam = apply_residual(b, cam);
  LiftGraph<Scalar> out;
  out.canonical = apply_dense(net.pose_out, pose);
  out.axis_angle = apply_dense(net.cam_out, cam);
  out.joints = joints;
  return out;
}

/// Input feature row for a normalised 2D pose: x0, y0, x1, y1, ..., c0, ..., c_{j-1}.
template <typename Scalar, typename In>
void write_input_row(const Pose2D<In>& w, Eigen::Ref<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> row) {
  const Eigen::Index j = w.joint_count();
  for (Eigen::Index i = 0; i < j; ++i) {
    row(2 * i) = Scalar(w.joints(i, 0));
    row(2 * i + 1) = Scalar(w.joints(i, 1));
    row(2 * j + i) = Scalar(w.confidences(i));
  }
}

template <typename Scalar, typename In>
ad::Matrix<Scalar> make_inputs(const std::vector<const Pose2D<In>*>& views, int joints) {
  ad::Matrix<Scalar> inputs(Eigen::Index(views.size()), 3 * joints);
  for (std::size_t k = 0; k < views.size(); ++k) {
    if (views[k]->joint_count() != joints || views[k]->confidences.size() != joints) {
      throw ShapeMismatch("input pose has " + std::to_string(views[k]->joint_count()) +
                          " joints, network expects " + std::to_string(joints));
    }
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> row(3 * joints);
    write_input_row<Scalar>(*views[k], row);
    inputs.row(Eigen::Index(k)) = row;
  }
  return inputs;
}

template <typename Scalar>
struct LiftOutput {
  Pose3<Scalar> canonical;
  AxisAngle<Scalar> rotation;
  Rotation3<Scalar> rotation_matrix;

  /// Pose in the observing camera's frame, R * X in column convention.
  Pose3<Scalar> camera_frame() const { return canonical * rotation_matrix.transpose(); }
};

/// Batched inference on normalised inputs. Results are returned in double
/// regardless of the parameter precision.
template <typename Scalar>
std::vector<LiftOutput<double>> forward_batch(const ModelParams<Scalar>& params,
                                              const std::vector<const Pose2Dd*>& views) {
  std::vector<LiftOutput<double>> out;
  if (views.empty()) return out;
  ad::Tape<Scalar> tape;
  const auto net = bind(tape, params, false);
  const auto input = tape.constant(make_inputs<Scalar>(views, params.joints));
  const LiftGraph<Scalar> graph = lift(net, input, params.joints);
  out.reserve(views.size());
  for (Eigen::Index r = 0; r < Eigen::Index(views.size()); ++r) {
    LiftOutput<double> o;
    const ad::Matrix<Scalar> flat = graph.canonical.value().row(r);
    o.canonical.resize(params.joints, 3);
    for (int i = 0; i < params.joints; ++i) {
      for (int c = 0; c < 3; ++c) o.canonical(i, c) = double(flat(0, 3 * i + c));
    }
    o.rotation = graph.axis_angle.value().row(r).transpose().template cast<double>();
    o.rotation_matrix = rodrigues<double>(o.rotation);
    out.push_back(std::move(o));
  }
  return out;
}

template <typename Scalar>
LiftOutput<double> forward(const ModelParams<Scalar>& params, const Pose2Dd& w) {
  return forward_batch(params, std::vector<const Pose2Dd*>{&w}).front();
}

template <typename Scalar>
Pose3d infer_camera_frame(const ModelParams<Scalar>& params, const Pose2Dd& w) {
  return forward(params, w).camera_frame();
}

// Checkpoint container:
//   bytes 0..7   magic "CNPSCKPT"
//   bytes 8..15  header length n, uint64 little-endian
//   next n bytes JSON header (UTF-8): format_version, joints, hidden, seed,
//                tensors: [{name, shape: [rows, cols]}] in visit_tensors order
//   remainder    float64 little-endian, each tensor row-major, same order
inline constexpr int kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelParams<Scalar>& params);
template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::string& path);

extern template void save_checkpoint<float>(const std::string&, const ModelParams<float>&);
extern template void save_checkpoint<double>(const std::string&, const ModelParams<double>&);
extern template ModelParams<float> load_checkpoint<float>(const std::string&);
extern template ModelParams<double> load_checkpoint<double>(const std::string&);

}  // namespace canonpose
