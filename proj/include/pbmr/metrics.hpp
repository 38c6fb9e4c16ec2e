#pragma once

// Regression metrics and the least-squares / mean-predictor baselines.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "pbmr/error.hpp"

namespace pbmr {

namespace detail {

inline void check_metric_inputs(std::span<const double> pred, std::span<const double> target, const char* name) {
  if (pred.size() != target.size())
    throw ValidationError(std::string(name) + ": " + std::to_string(pred.size()) + " predictions vs " +
                          std::to_string(target.size()) + " targets");
  if (pred.empty()) throw ValidationError(std::string(name) + ": empty input");
}

} // namespace detail

/// Mean absolute error.
inline double mae(std::span<const double> pred, std::span<const double> target) {
  detail::check_metric_inputs(pred, target, "mae");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

inline double rmse(std::span<const double> pred, std::span<const double> target) {
  detail::check_metric_inputs(pred, target, "rmse");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(pred.size()));
}

/// Coefficient of determination; the mean is taken over the given targets.
/// Undefined (error) for constant targets.
inline double r2(std::span<const double> pred, std::span<const double> target) {
  detail::check_metric_inputs(pred, target, "r2");
  double mean = 0;
  for (double t : target) mean += t;
  mean /= static_cast<double>(target.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    const double c = target[i] - mean;
    ss_res += d * d;
    ss_tot += c * c;
  }
  if (!(ss_tot > 0)) throw ValidationError("r2: targets are constant, R^2 is undefined");
  return 1.0 - ss_res / ss_tot;
}

struct RegressionMetrics {
  double mae = 0;
  double rmse = 0;
  double r2 = 0; ///< NaN when the targets are constant
};

inline RegressionMetrics evaluate_metrics(std::span<const double> pred, std::span<const double> target) {
  RegressionMetrics m;
  m.mae = mae(pred, target);
  m.rmse = rmse(pred, target);
  bool constant = true;
  for (double t : target) constant = constant && t == target[0];
  m.r2 = constant ? std::numeric_limits<double>::quiet_NaN() : r2(pred, target);
  return m;
}

/// Ordinary least squares with an intercept, solved through the normal
/// equations on centred data with a small ridge jitter for conditioning.
class LeastSquares {
public:
  static constexpr double kJitter = 1e-8;

  /// features: one row per sample.
  static LeastSquares fit(const Eigen::MatrixXd& features, std::span<const double> targets, double jitter = kJitter) {
    const auto n = features.rows();
    const auto p = features.cols();
    if (n == 0 || static_cast<std::size_t>(n) != targets.size())
      throw ValidationError("least squares: feature rows do not match targets");
    LeastSquares m;
    m.mean_ = features.colwise().mean();
    double y_mean = 0;
    for (double t : targets) y_mean += t;
    y_mean /= static_cast<double>(n);

    Eigen::MatrixXd centred = features.rowwise() - m.mean_.transpose();
    if (!(centred.cwiseAbs().maxCoeff() > 0))
      throw ValidationError("least squares: every feature is constant, design matrix is singular");
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = targets[static_cast<std::size_t>(i)] - y_mean;

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(centred.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
    gram.diagonal().array() += jitter;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) throw ValidationError("least squares: normal equations could not be factored");
    m.weights_ = ldlt.solve(centred.transpose() * y);
    if (!m.weights_.allFinite()) throw ValidationError("least squares: solution is not finite");
    m.intercept_ = y_mean - m.weights_.dot(m.mean_);
    return m;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const {
    return (features * weights_).array() + intercept_;
  }

  const Eigen::VectorXd& weights() const { return weights_; }
  double intercept() const { return intercept_; }

private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd weights_;
  double intercept_ = 0;
};

} // namespace pbmr
