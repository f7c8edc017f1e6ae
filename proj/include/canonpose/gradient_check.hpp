#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "canonpose/autodiff.hpp"

namespace canonpose::ad {

/// Builds a scalar loss on `tape` from leaves bound to `params` (in order).
using GraphFn = std::function<Var<double>(Tape<double>& tape, const std::vector<Var<double>>& params)>;

/// |a - b| / max(1, |a|, |b|)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

struct GradientCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise this many random coordinates per tensor.
  std::size_t coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Drops coordinates whose +-eps evaluations land on a different side of a
  /// kink than the centre; a central difference there is not a derivative.
  bool skip_kink_crossings = false;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t kink_crossings = 0;
};

struct Evaluation {
  double value = 0.0;
  std::uint64_t kink_pattern = 0;
};

inline Evaluation evaluate_with_pattern(const GraphFn& f, const std::vector<Matrix<double>>& params) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.variable(p));
  const double value = f(tape, leaves).scalar();
  return {value, tape.kink_pattern()};
}

inline double evaluate(const GraphFn& f, const std::vector<Matrix<double>>& params) {
  return evaluate_with_pattern(f, params).value;
}

inline std::vector<Matrix<double>> analytic_gradients(const GraphFn& f, const std::vector<Matrix<double>>& params) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.variable(p));
  tape.backward(f(tape, leaves));
  std::vector<Matrix<double>> grads;
  grads.reserve(leaves.size());
  for (const auto& l : leaves) grads.push_back(tape.grad(l));
  return grads;
}

/// Central-difference comparison against reverse-mode gradients.
inline GradientCheckResult check_gradients(const GraphFn& f, std::vector<Matrix<double>> params,
                                           const GradientCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw std::invalid_argument("check_gradients: eps must lie in [1e-7, 1e-3]");
  }
  const std::vector<Matrix<double>> grads = analytic_gradients(f, params);
  const std::uint64_t centre = evaluate_with_pattern(f, params).kink_pattern;
  std::mt19937_64 rng(options.seed);
  GradientCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Eigen::Index n = params[p].size();
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.coords_per_param > 0 && options.coords_per_param < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_param);
    }
    for (Eigen::Index k : coords) {
      double& x = params[p](k);
      const double saved = x;
      x = saved + options.eps;
      const Evaluation up = evaluate_with_pattern(f, params);
      x = saved - options.eps;
      const Evaluation down = evaluate_with_pattern(f, params);
      x = saved;
      if (options.skip_kink_crossings && (up.kink_pattern != centre || down.kink_pattern != centre)) {
        ++result.kink_crossings;
        continue;
      }
      const double fd = (up.value - down.value) / (2.0 * options.eps);
      result.max_relative_error = std::max(result.max_relative_error, relative_error(grads[p](k), fd));
      ++result.checked;
    }
  }
  return result;
}

inline double check_gradients(const GraphFn& f, const std::vector<Matrix<double>>& params, double eps) {
  GradientCheckOptions options;
  options.eps = eps;
  return check_gradients(f, params, options).max_relative_error;
}

/// Compares the directional derivative along a random unit direction spanning
/// all tensors with the central difference along the same direction.
inline double check_directional(const GraphFn& f, const std::vector<Matrix<double>>& params, double eps,
                                std::uint64_t seed) {
  const std::vector<Matrix<double>> grads = analytic_gradients(f, params);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Matrix<double>> dir;
  double norm2 = 0.0;
  for (const auto& p : params) {
    Matrix<double> d = Matrix<double>::NullaryExpr(p.rows(), p.cols(), [&] { return normal(rng); });
    norm2 += d.squaredNorm();
    dir.push_back(std::move(d));
  }
  const double inv = 1.0 / std::sqrt(norm2);
  double analytic = 0.0;
  std::vector<Matrix<double>> up = params, down = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    dir[i] *= inv;
    analytic += grads[i].cwiseProduct(dir[i]).sum();
    up[i] += eps * dir[i];
    down[i] -= eps * dir[i];
  }
  const double fd = (evaluate(f, up) - evaluate(f, down)) / (2.0 * eps);
  return relative_error(analytic, fd);
}

}  // namespace canonpose::ad
