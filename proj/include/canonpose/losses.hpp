#pragma once

// Training objectives built on an autodiff tape.
//
// Reduction: every reprojection term is a sum over joints and coordinates;
// terms are summed per sample; total_loss() averages over the samples of the
// batch. The m^2 view-mixing sum is not normalised by m^2.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "canonpose/autodiff.hpp"
#include "canonpose/geometry.hpp"
#include "canonpose/graph_geometry.hpp"

namespace canonpose {

/// One view's network outputs together with the observation they explain.
template <typename Scalar>
struct ViewPrediction {
  ad::Var<Scalar> canonical;   // j x 3
  ad::Var<Scalar> rotation;    // 3 x 3
  ad::Var<Scalar> rotation_t;  // R^T, shared by every term projecting with R
  ad::Var<Scalar> target;      // normalised W, j x 2
  ad::Var<Scalar> weights;     // confidences replicated per coordinate, j x 2
  std::string camera_id;
  std::string sample_id;
  std::string rig_id;

  Eigen::Index joint_count() const { return canonical.rows(); }
};

/// Builds the constant nodes for an observation. `observation` must already
/// be normalised.
template <typename Scalar>
ViewPrediction<Scalar> make_view(const ad::Var<Scalar>& canonical, const ad::Var<Scalar>& rotation,
                                 const Pose2Dd& observation, std::string camera_id, std::string sample_id,
                                 std::string rig_id) {
  if (canonical.rows() != observation.joint_count() || canonical.cols() != 3) {
    throw ShapeMismatch("canonical pose and observation disagree on joint count");
  }
  ad::Tape<Scalar>& t = canonical.tape();
  const Eigen::Index j = observation.joint_count();
  ad::Matrix<Scalar> w = observation.joints.cast<Scalar>();
  ad::Matrix<Scalar> c(j, 2);
  c.col(0) = observation.confidences.cast<Scalar>();
  c.col(1) = c.col(0);
  ViewPrediction<Scalar> v;
  v.canonical = canonical;
  v.rotation = rotation;
  v.rotation_t = ad::transpose(rotation);
  v.target = t.constant(std::move(w));
  v.weights = t.constant(std::move(c));
  v.camera_id = std::move(camera_id);
  v.sample_id = std::move(sample_id);
  v.rig_id = std::move(rig_id);
  return v;
}

/// A loss node plus the values of the individual terms it sums.
template <typename Scalar>
struct LossValue {
  ad::Var<Scalar> value;
  std::vector<double> terms;

  std::size_t term_count() const { return terms.size(); }
};

/// || (W - W_rep / ||W_rep||_F) (.) C ||_1
template <typename Scalar>
ad::Var<Scalar> reprojection_loss(const ad::Var<Scalar>& target, const ad::Var<Scalar>& weights,
                                  const ad::Var<Scalar>& w_rep) {
  const ad::Var<Scalar> norm = ad::frobenius_norm(w_rep);
  if (!(double(norm.scalar()) >= kDegenerateNorm)) {
    throw DegenerateReprojection("reprojected pose has Frobenius norm " + std::to_string(double(norm.scalar())));
  }
  return ad::sum(ad::abs(ad::hadamard(target - ad::divide(w_rep, norm), weights)));
}

template <typename Scalar>
ad::Var<Scalar> reprojection_loss(ad::Tape<Scalar>& tape, const Pose2Dd& w, const ad::Var<Scalar>& w_rep) {
  if (w.joint_count() != w_rep.rows() || w_rep.cols() != 2) {
    throw ShapeMismatch("reprojection_loss: observation and reprojection shapes differ");
  }
  ad::Matrix<Scalar> c(w.joint_count(), 2);
  c.col(0) = w.confidences.cast<Scalar>();
  c.col(1) = c.col(0);
  return reprojection_loss(tape.constant(w.joints.cast<Scalar>()), tape.constant(std::move(c)), w_rep);
}

namespace detail {

template <typename Scalar>
LossValue<Scalar> finish(ad::Tape<Scalar>& tape, const std::vector<ad::Var<Scalar>>& nodes) {
  LossValue<Scalar> out;
  out.terms.reserve(nodes.size());
  for (const auto& n : nodes) out.terms.push_back(double(n.scalar()));
  out.value = nodes.empty() ? tape.constant(Scalar(0)) : ad::add_n(nodes);
  return out;
}

template <typename Scalar>
void check_sample(const std::vector<ViewPrediction<Scalar>>& views, const char* op) {
  if (views.size() < 2) {
    throw InsufficientViews(std::string(op) + ": need at least 2 views, got " + std::to_string(views.size()));
  }
  for (const auto& v : views) {
    if (v.sample_id != views.front().sample_id) {
      throw std::invalid_argument(std::string(op) + ": views belong to different samples");
    }
    if (v.joint_count() != views.front().joint_count()) {
      throw ShapeMismatch(std::string(op) + ": views disagree on joint count");
    }
  }
}

template <typename Scalar>
const ViewPrediction<Scalar>* find_camera(const std::vector<ViewPrediction<Scalar>>& views, const std::string& id) {
  for (const auto& v : views) {
    if (v.camera_id == id) return &v;
  }
  return nullptr;
}

/// Sample indices grouped by rig id, groups ordered by first appearance.
template <typename Scalar>
std::vector<std::vector<std::size_t>> rig_groups(const std::vector<std::vector<ViewPrediction<Scalar>>>& batch) {
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::string& rig = batch[s].front().rig_id;
    auto [it, inserted] = index.emplace(rig, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(s);
  }
  return groups;
}

}  // namespace detail

/// Reprojection of every view's own pose with its own rotation (the m
/// diagonal terms of the mixing sum).
template <typename Scalar>
LossValue<Scalar> self_reprojection_loss(const std::vector<ViewPrediction<Scalar>>& views) {
  if (views.empty()) throw InsufficientViews("self_reprojection_loss: no views");
  std::vector<ad::Var<Scalar>> terms;
  for (const auto& v : views) {
    terms.push_back(reprojection_loss(v.target, v.weights, ad::project_with_transposed(v.rotation_t, v.canonical)));
  }
  return detail::finish(views.front().canonical.tape(), terms);
}

/// Sum over all ordered view pairs (a, b), a == b included, of the loss of
/// view a's canonical pose projected with view b's rotation against view b's
/// observation: m^2 terms.
template <typename Scalar>
LossValue<Scalar> view_mixing_loss(const std::vector<ViewPrediction<Scalar>>& views) {
  detail::check_sample(views, "view_mixing_loss");
  std::vector<ad::Var<Scalar>> terms;
  terms.reserve(views.size() * views.size());
  for (const auto& source : views) {
    for (const auto& target : views) {
      const auto w_rep = ad::project_with_transposed(target.rotation_t, source.canonical);
      terms.push_back(reprojection_loss(target.target, target.weights, w_rep));
    }
  }
  return detail::finish(views.front().canonical.tape(), terms);
}

/// Donor map for camera consistency: a uniform random permutation inside
/// every rig group. Samples alone in their rig map to themselves.
inline std::vector<std::size_t> rig_permutation(const std::vector<std::string>& rig_ids, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(rig_ids.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < rig_ids.size(); ++s) groups[rig_ids[s]].push_back(s);
  for (auto& [rig, members] : groups) {
    std::vector<std::size_t> donors = members;
    std::shuffle(donors.begin(), donors.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) perm[members[k]] = donors[k];
  }
  return perm;
}

/// For each sample s' and ordered camera pair (a, b), a != b: project
/// R_ab^(s) * R_a^(s') * X_a^(s') against W_b^(s'), where s = permutation[s'] is
/// a donor from the same rig and R_ab^(s) = R_b^(s) R_a^(s)^T. Pairs whose
/// cameras are missing from the donor are skipped.
template <typename Scalar>
LossValue<Scalar> camera_consistency_loss(const std::vector<std::vector<ViewPrediction<Scalar>>>& batch,
                                          const std::vector<std::size_t>& permutation) {
  if (batch.empty()) throw RigGroupTooSmall("camera_consistency_loss: empty batch");
  if (permutation.size() != batch.size()) {
    throw std::invalid_argument("camera_consistency_loss: permutation size differs from batch size");
  }
  for (const auto& group : detail::rig_groups(batch)) {
    if (group.size() < 2) {
      throw RigGroupTooSmall("rig '" + batch[group.front()].front().rig_id + "' has a single sample in the batch");
    }
  }
  std::vector<ad::Var<Scalar>> terms;
  for (std::size_t s_cur = 0; s_cur < batch.size(); ++s_cur) {
    const auto& cur = batch[s_cur];
    const std::size_t s_donor = permutation[s_cur];
    if (s_donor >= batch.size() || batch[s_donor].front().rig_id != cur.front().rig_id) {
      throw std::invalid_argument("camera_consistency_loss: donor outside the sample's rig");
    }
    const auto& donor = batch[s_donor];
    for (const auto& a : cur) {
      const ViewPrediction<Scalar>* donor_a = detail::find_camera(donor, a.camera_id);
      if (donor_a == nullptr) continue;
      for (const auto& b : cur) {
        if (&a == &b) continue;
        const ViewPrediction<Scalar>* donor_b = detail::find_camera(donor, b.camera_id);
        if (donor_b == nullptr) continue;
        // (R_ab R_a)^T = R_a^T R_ab^T = R_a^T R_a^(s) R_b^(s)^T
        const auto rel_t = ad::matmul(donor_a->rotation, donor_b->rotation_t);
        const auto composed_t = ad::matmul(a.rotation_t, rel_t);
        const auto w_rep = ad::project_with_transposed(composed_t, a.canonical);
        terms.push_back(reprojection_loss(b.target, b.weights, w_rep));
      }
    }
  }
  return detail::finish(batch.front().front().canonical.tape(), terms);
}

/// Mean over view pairs of the mean squared entry difference between their
/// canonical poses.
template <typename Scalar>
LossValue<Scalar> direct_pose_equality_loss(const std::vector<ViewPrediction<Scalar>>& views) {
  detail::check_sample(views, "direct_pose_equality_loss");
  std::vector<ad::Var<Scalar>> pairs;
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t b = a + 1; b < views.size(); ++b) {
      const auto diff = views[a].canonical - views[b].canonical;
      pairs.push_back(ad::scale(ad::sum(ad::hadamard(diff, diff)), Scalar(1) / Scalar(diff.value().size())));
    }
  }
  auto out = detail::finish(views.front().canonical.tape(), pairs);
  out.value = ad::scale(out.value, Scalar(1) / Scalar(pairs.size()));
  return out;
}

/// Mean squared entry difference between the relative rotations of the same
/// camera pair across the samples of a rig, averaged over sample pairs,
/// camera pairs and rigs. Uses sum_{s<t} |R_s - R_t|^2 = n sum_s |R_s - mean|^2.
template <typename Scalar>
LossValue<Scalar> direct_camera_equality_loss(const std::vector<std::vector<ViewPrediction<Scalar>>>& batch) {
  if (batch.empty()) throw RigGroupTooSmall("direct_camera_equality_loss: empty batch");
  ad::Tape<Scalar>& tape = batch.front().front().canonical.tape();
  std::vector<ad::Var<Scalar>> parts;
  for (const auto& group : detail::rig_groups(batch)) {
    if (group.size() < 2) {
      throw RigGroupTooSmall("rig '" + batch[group.front()].front().rig_id + "' has a single sample in the batch");
    }
    const auto& reference = batch[group.front()];
    for (std::size_t a = 0; a < reference.size(); ++a) {
      for (std::size_t b = a + 1; b < reference.size(); ++b) {
        std::vector<ad::Var<Scalar>> rels;
        for (std::size_t s : group) {
          const auto* va = detail::find_camera(batch[s], reference[a].camera_id);
          const auto* vb = detail::find_camera(batch[s], reference[b].camera_id);
          if (va == nullptr || vb == nullptr) continue;
          rels.push_back(ad::matmul(vb->rotation, va->rotation_t));
        }
        if (rels.size() < 2) continue;
        const Scalar n = Scalar(rels.size());
        const auto mean = ad::scale(ad::add_n(rels), Scalar(1) / n);
        std::vector<ad::Var<Scalar>> sq;
        for (const auto& r : rels) {
          const auto d = r - mean;
          sq.push_back(ad::sum(ad::hadamard(d, d)));
        }
        parts.push_back(ad::scale(ad::add_n(sq), Scalar(2) / ((n - Scalar(1)) * Scalar(9))));
      }
    }
  }
  auto out = detail::finish(tape, parts);
  if (!parts.empty()) out.value = ad::scale(out.value, Scalar(1) / Scalar(parts.size()));
  return out;
}

enum class Objective {
  mixing,           // view mixing, plus camera-consistency mixing for static rigs
  pose_equality,    // own-view reprojection plus direct canonical-pose equality
  camera_equality,  // own-view reprojection plus direct relative-rotation equality
};

struct LossConfig {
  Objective objective = Objective::mixing;
  bool static_cameras = false;
  double lambda_cam = 1.0;
  double lambda_equality = 1.0;
};

template <typename Scalar>
struct LossBreakdown {
  ad::Var<Scalar> total;
  double view_loss = 0.0;      // batch mean of the mixing or own-view term
  double equality_loss = 0.0;  // batch mean of pose equality, or the camera-equality value
  double camera_loss = 0.0;    // batch mean of camera-consistency mixing
  std::vector<double> view_terms;
  std::vector<double> camera_terms;
  std::vector<double> equality_terms;  // pose-equality per sample, or the camera-equality value
  std::size_t samples = 0;
  std::size_t camera_samples = 0;  // samples that took part in camera consistency
};

/// Composes the objective for one batch. `permutation` is the donor map for
/// camera consistency (see rig_permutation); samples whose rig occurs only
/// once in the batch are left out of the camera term.
template <typename Scalar>
LossBreakdown<Scalar> total_loss(const std::vector<std::vector<ViewPrediction<Scalar>>>& batch,
                                 const std::vector<std::size_t>& permutation, const LossConfig& config) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  const Scalar inv_b = Scalar(1) / Scalar(batch.size());
  LossBreakdown<Scalar> out;
  out.samples = batch.size();

  std::vector<ad::Var<Scalar>> per_sample;
  for (const auto& views : batch) {
    if (config.objective == Objective::mixing) {
      auto mix = view_mixing_loss(views);
      out.view_terms.insert(out.view_terms.end(), mix.terms.begin(), mix.terms.end());
      per_sample.push_back(mix.value);
    } else {
      auto self = self_reprojection_loss(views);
      out.view_terms.insert(out.view_terms.end(), self.terms.begin(), self.terms.end());
      if (config.objective == Objective::pose_equality) {
        auto eq = direct_pose_equality_loss(views);
        out.equality_terms.push_back(double(eq.value.scalar()));
        out.view_loss += double(self.value.scalar()) / double(batch.size());
        out.equality_loss += double(eq.value.scalar()) / double(batch.size());
        per_sample.push_back(self.value + ad::scale(eq.value, Scalar(config.lambda_equality)));
      } else {
        per_sample.push_back(self.value);
      }
    }
  }
  ad::Var<Scalar> pose_term = ad::scale(ad::add_n(per_sample), inv_b);
  if (config.objective != Objective::pose_equality) out.view_loss = double(pose_term.scalar());
  ad::Var<Scalar> total = pose_term;

  const bool camera_mixing = config.static_cameras && config.objective != Objective::camera_equality;
  std::vector<std::vector<ViewPrediction<Scalar>>> grouped;
  if (camera_mixing || config.objective == Objective::camera_equality) {
    if (camera_mixing && permutation.size() != batch.size()) {
      throw std::invalid_argument("total_loss: permutation size differs from batch size");
    }
    std::vector<std::size_t> keep;
    for (const auto& group : detail::rig_groups(batch)) {
      if (group.size() >= 2) keep.insert(keep.end(), group.begin(), group.end());
    }
    std::sort(keep.begin(), keep.end());
    std::vector<std::size_t> position(batch.size(), batch.size());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      position[keep[k]] = k;
      grouped.push_back(batch[keep[k]]);
    }
    out.camera_samples = keep.size();
    if (!grouped.empty()) {
      if (camera_mixing) {
        std::vector<std::size_t> sub_perm;
        for (std::size_t s : keep) sub_perm.push_back(position.at(permutation[s]));
        auto cam = camera_consistency_loss(grouped, sub_perm);
        out.camera_terms = cam.terms;
        const auto cam_mean = ad::scale(cam.value, inv_b);
        out.camera_loss = double(cam_mean.scalar());
        total = total + ad::scale(cam_mean, Scalar(config.lambda_cam));
      } else {
        auto eq = direct_camera_equality_loss(grouped);
        out.equality_terms.push_back(double(eq.value.scalar()));
        out.equality_loss = double(eq.value.scalar());
        total = total + ad::scale(eq.value, Scalar(config.lambda_equality));
      }
    }
  }
  out.total = total;
  return out;
}

}  // namespace canonpose
