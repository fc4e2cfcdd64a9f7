#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pdm/models/tree.hpp"

namespace pdm::models {

struct SvmParams {
  double lambda = 0.01;
  int epochs = 30;
  std::uint64_t seed = 0;
};

/// Linear SVM trained with Pegasos. The bias rides along as a constant
/// feature and is regularized with the weights.
class LinearSvm {
 public:
  LinearSvm() = default;
  LinearSvm(Eigen::VectorXd w, double bias, SvmParams params, std::vector<double> objective)
      : w_(std::move(w)), bias_(bias), params_(params), objective_(std::move(objective)) {}

  int n_features() const { return static_cast<int>(w_.size()); }
  const Eigen::VectorXd& weights() const { return w_; }
  double bias() const { return bias_; }
  const SvmParams& params() const { return params_; }
  /// Primal objective after each epoch.
  const std::vector<double>& objective() const { return objective_; }

  double decision(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return row.dot(w_) + bias_; }
  double score_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return 1.0 / (1.0 + std::exp(-decision(row)));
  }
  int predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return decision(row) > 0.0 ? 1 : 0; }

 private:
  Eigen::VectorXd w_;
  double bias_ = 0.0;
  SvmParams params_;
  std::vector<double> objective_;
};

inline double svm_objective(const Matrix& x, std::span<const int> y, const Eigen::VectorXd& w, double b,
                            double lambda) {
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = y[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    hinge += std::max(0.0, 1.0 - s * (x.row(i).dot(w) + b));
  }
  return 0.5 * lambda * (w.squaredNorm() + b * b) + hinge / static_cast<double>(x.rows());
}

inline LinearSvm fit_svm(const Matrix& x, std::span<const int> y, const SvmParams& p) {
  detail::check_fit_inputs(x, y);
  if (p.lambda <= 0.0 || p.epochs < 1) throw Error(ErrorKind::Config, "svm needs lambda > 0 and epochs >= 1");
  const auto n = static_cast<std::size_t>(x.rows());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  double b = 0.0;
  const double radius = 1.0 / std::sqrt(p.lambda);
  Rng rng(p.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> objective;
  std::uint64_t t = 0;
  for (int e = 0; e < p.epochs; ++e) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (p.lambda * static_cast<double>(t));
      const double s = y[i] ? 1.0 : -1.0;
      const auto row = x.row(static_cast<Eigen::Index>(i));
      const bool violated = s * (row.dot(w) + b) < 1.0;
      w *= 1.0 - eta * p.lambda;
      b *= 1.0 - eta * p.lambda;
      if (violated) {
        w += (eta * s) * row.transpose();
        b += eta * s;
      }
      const double norm = std::sqrt(w.squaredNorm() + b * b);
      if (norm > radius) {
        w *= radius / norm;
        b *= radius / norm;
      }
    }
    objective.push_back(svm_objective(x, y, w, b, p.lambda));
  }
  return LinearSvm(std::move(w), b, p, std::move(objective));
}

inline nlohmann::json svm_to_json(const LinearSvm& m) {
  std::vector<double> w(m.weights().data(), m.weights().data() + m.weights().size());
  return {{"weights", w},
          {"bias", m.bias()},
          {"params", {{"lambda", m.params().lambda}, {"epochs", m.params().epochs}, {"seed", m.params().seed}}},
          {"objective", m.objective()}};
}

inline LinearSvm svm_from_json(const nlohmann::json& j) {
  const auto w = j.at("weights").get<std::vector<double>>();
  const auto& jp = j.at("params");
  SvmParams p{jp.at("lambda").get<double>(), jp.at("epochs").get<int>(), jp.at("seed").get<std::uint64_t>()};
  return LinearSvm(Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())),
                   j.at("bias").get<double>(), p, j.at("objective").get<std::vector<double>>());
}

}  // namespace pdm::models
