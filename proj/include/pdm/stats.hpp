#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

#include "pdm/core/error.hpp"
#include "pdm/timeseries.hpp"

namespace pdm::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Population variance (divides by n).
inline double variance(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

inline double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const auto n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

/// Quantile of sorted data by linear interpolation between order statistics,
/// inclusive convention: position h = (n - 1) q.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::TooFewValues, "quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct IqrFences {
  double q1 = 0.0;
  double q3 = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

inline IqrFences iqr_fences(std::vector<double> values, double k) {
  if (values.size() < 4) throw Error(ErrorKind::TooFewValues, "IQR needs at least 4 values");
  std::sort(values.begin(), values.end());
  IqrFences f;
  f.q1 = quantile_sorted(values, 0.25);
  f.q3 = quantile_sorted(values, 0.75);
  const double iqr = f.q3 - f.q1;
  f.lower = f.q1 - k * iqr;
  f.upper = f.q3 + k * iqr;
  return f;
}

/// Indices of observed cells strictly outside the Tukey fences.
inline std::vector<std::size_t> detect_outliers_iqr(std::span<const Cell> series, double k = 1.5) {
  std::vector<double> observed;
  for (const auto& c : series)
    if (c) observed.push_back(*c);
  const auto f = iqr_fences(observed, k);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i] && (*series[i] < f.lower || *series[i] > f.upper)) out.push_back(i);
  return out;
}

inline std::vector<std::size_t> detect_outliers_iqr(std::span<const double> series, double k = 1.5) {
  std::vector<Cell> cells(series.begin(), series.end());
  return detect_outliers_iqr(std::span<const Cell>(cells), k);
}

struct CorrelationResult {
  Eigen::MatrixXd matrix;
  std::vector<std::size_t> constant_columns;
};

/// Pearson correlation. Constant columns correlate 0 with everything
/// (including themselves) and are reported in `constant_columns`.
inline CorrelationResult correlation_matrix(const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw Error(ErrorKind::TooFewValues, "correlation needs at least 2 rows");
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  const Eigen::VectorXd ss = c.colwise().squaredNorm();
  CorrelationResult r;
  r.matrix = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (ss(j) <= 0.0) r.constant_columns.push_back(static_cast<std::size_t>(j));
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    if (ss(i) <= 0.0) continue;
    for (Eigen::Index j = i; j < x.cols(); ++j) {
      if (ss(j) <= 0.0) continue;
      const double v = i == j ? 1.0 : std::clamp(c.col(i).dot(c.col(j)) / std::sqrt(ss(i) * ss(j)), -1.0, 1.0);
      r.matrix(i, j) = r.matrix(j, i) = v;
    }
  }
  return r;
}

struct PcaResult {
  Eigen::MatrixXd loadings;   // columns are unit eigenvectors, descending eigenvalue
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd explained;  // fractions, sum to 1
  Eigen::RowVectorXd center;
  std::size_t retained = 0;   // minimal prefix reaching the variance threshold
};

/// Covariance PCA (population normalization). Each eigenvector's largest-
/// magnitude entry is made positive so the output is sign-stable.
inline PcaResult pca(const Eigen::MatrixXd& x, double variance_threshold) {
  if (x.rows() < 2) throw Error(ErrorKind::TooFewValues, "PCA needs at least 2 rows");
  PcaResult r;
  r.center = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - r.center;
  const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto p = cov.cols();
  r.eigenvalues.resize(p);
  r.loadings.resize(p, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const auto src = p - 1 - k;
    r.eigenvalues(k) = std::max(0.0, es.eigenvalues()(src));
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.loadings.col(k) = v;
  }
  const double total = r.eigenvalues.sum();
  r.explained = total > 0 ? Eigen::VectorXd(r.eigenvalues / total) : Eigen::VectorXd::Zero(p);
  double cum = 0.0;
  r.retained = static_cast<std::size_t>(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    cum += r.explained(k);
    if (cum >= variance_threshold - 1e-12) {
      r.retained = static_cast<std::size_t>(k + 1);
      break;
    }
  }
  return r;
}

struct IcsResult {
  std::vector<std::size_t> flagged;
  Eigen::VectorXd distances;     // squared distance in the selected invariant coordinates
  Eigen::VectorXd eigenvalues;   // generalized eigenvalues of (COV4, COV)
  std::vector<std::size_t> components;
  double threshold = 0.0;
};

struct IcsParams {
  std::size_t components = 2;
  double alpha = 0.025;
};

/// Invariant coordinate outlier detection with the covariance / fourth-moment
/// scatter pair. Rows are flagged when their squared distance over the
/// selected coordinates exceeds the chi-square(m) upper-alpha quantile.
inline IcsResult detect_outliers_ics(const Eigen::MatrixXd& x, const IcsParams& params = {}) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (p < 1 || n < 10 * p) throw Error(ErrorKind::TooFewValues, "ICS needs at least 10 rows per channel");
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(n);

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double scale = std::max(cov.diagonal().maxCoeff(), 1e-300);
  if (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array().square() / scale).minCoeff() < 1e-12)
    throw Error(ErrorKind::Degenerate, "covariance scatter is singular");

  // Squared Mahalanobis distance of each row under COV.
  const Eigen::MatrixXd w = llt.matrixL().solve(c.transpose());
  const Eigen::VectorXd r2 = w.colwise().squaredNorm().transpose();
  Eigen::MatrixXd cov4 = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < n; ++i) cov4.noalias() += r2(i) * c.row(i).transpose() * c.row(i);
  cov4 /= static_cast<double>(n) * static_cast<double>(p + 2);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(cov4, cov);
  if (ges.info() != Eigen::Success) throw Error(ErrorKind::Degenerate, "generalized eigenproblem failed");
  IcsResult r;
  r.eigenvalues = ges.eigenvalues();
  const Eigen::MatrixXd z = c * ges.eigenvectors();  // invariant coordinates, unit variance under COV

  std::vector<double> logs(static_cast<std::size_t>(p));
  for (Eigen::Index k = 0; k < p; ++k) logs[static_cast<std::size_t>(k)] = std::log(std::max(r.eigenvalues(k), 1e-300));
  const double med = median(logs);
  std::vector<std::size_t> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(logs[a] - med) > std::abs(logs[b] - med);
  });
  const auto m = std::min<std::size_t>(std::max<std::size_t>(params.components, 1), static_cast<std::size_t>(p));
  r.components.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(r.components.begin(), r.components.end());

  r.distances = Eigen::VectorXd::Zero(n);
  for (auto k : r.components) r.distances += z.col(static_cast<Eigen::Index>(k)).array().square().matrix();
  const boost::math::chi_squared chi(static_cast<double>(m));
  r.threshold = boost::math::quantile(boost::math::complement(chi, params.alpha));
  for (Eigen::Index i = 0; i < n; ++i)
    if (r.distances(i) > r.threshold) r.flagged.push_back(static_cast<std::size_t>(i));
  return r;
}

}  // namespace pdm::stats
