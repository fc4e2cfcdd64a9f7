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

struct GbdtParams {
  int iterations = 60;
  double learning_rate = 0.1;
  int max_depth = 3;
  int bins = 32;
  double lambda = 1.0;
  int min_leaf = 1;
  std::uint64_t seed = 0;
};

struct RegressionNode {
  int feature = -1;
  double threshold = 0.0;  // go left when value <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;
  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<RegressionNode> nodes;
  double weight = 1.0;  // shrinkage actually applied to this tree

  double eval(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = row(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
  }
};

/// Gradient-boosted trees on the logistic loss.
class GbdtModel {
 public:
  GbdtModel() = default;
  GbdtModel(double prior, std::vector<RegressionTree> trees, int n_features, GbdtParams params,
            std::vector<double> loss_history)
      : prior_(prior),
        trees_(std::move(trees)),
        n_features_(n_features),
        params_(params),
        loss_history_(std::move(loss_history)) {}

  int n_features() const { return n_features_; }
  double prior() const { return prior_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }
  const GbdtParams& params() const { return params_; }
  /// Mean training log-loss before the first tree and after each tree.
  const std::vector<double>& loss_history() const { return loss_history_; }

  double raw_score(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double s = prior_;
    for (const auto& t : trees_) s += t.weight * t.eval(row);
    return s;
  }
  double score_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return 1.0 / (1.0 + std::exp(-raw_score(row)));
  }
  // probability exactly 0.5 predicts 0
  int predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return raw_score(row) > 0.0 ? 1 : 0; }

 private:
  double prior_ = 0.0;
  std::vector<RegressionTree> trees_;
  int n_features_ = 0;
  GbdtParams params_;
  std::vector<double> loss_history_;
};

namespace detail {

inline double log_loss(std::span<const int> y, std::span<const double> f) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    // log(1 + exp(-m)) computed stably, m = +/- f
    const double m = y[i] ? f[i] : -f[i];
    s += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
  }
  return s / static_cast<double>(y.size());
}

/// Equal-frequency cut points. Value v lands in the bin of the first cut >= v.
inline std::vector<double> bin_cuts(std::vector<double> values, int bins) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> cuts;
  if (values.size() < 2) return cuts;
  if (static_cast<int>(values.size()) <= bins) {
    for (std::size_t i = 0; i + 1 < values.size(); ++i) cuts.push_back(0.5 * (values[i] + values[i + 1]));
    return cuts;
  }
  const auto n = values.size();
  for (int b = 1; b < bins; ++b) {
    const auto i = static_cast<std::size_t>(b) * n / static_cast<std::size_t>(bins);
    const double c = 0.5 * (values[i - 1] + values[i]);
    if (cuts.empty() || c > cuts.back()) cuts.push_back(c);
  }
  return cuts;
}

class GbdtTreeBuilder {
 public:
  GbdtTreeBuilder(const std::vector<std::vector<std::uint8_t>>& binned, const std::vector<std::vector<double>>& cuts,
                  std::span<const double> g, std::span<const double> h, const GbdtParams& p)
      : binned_(binned), cuts_(cuts), g_(g), h_(h), p_(p) {}

  RegressionTree build(std::vector<int> rows) {
    RegressionTree t;
    nodes_ = &t.nodes;
    grow(std::move(rows), 0);
    return t;
  }

 private:
  int grow(std::vector<int> rows, int depth) {
    const int id = static_cast<int>(nodes_->size());
    nodes_->emplace_back();
    double G = 0.0, H = 0.0;
    for (int r : rows) {
      G += g_[static_cast<std::size_t>(r)];
      H += h_[static_cast<std::size_t>(r)];
    }
    (*nodes_)[static_cast<std::size_t>(id)].value = -G / (H + p_.lambda);
    const int n = static_cast<int>(rows.size());
    if (depth >= p_.max_depth || n < 2 * p_.min_leaf) return id;

    const double parent = G * G / (H + p_.lambda);
    double best = 1e-12;
    int best_f = -1, best_bin = -1;
    for (std::size_t f = 0; f < cuts_.size(); ++f) {
      const std::size_t nb = cuts_[f].size() + 1;
      if (nb < 2) continue;
      std::vector<double> hg(nb, 0.0), hh(nb, 0.0);
      std::vector<int> hc(nb, 0);
      for (int r : rows) {
        const auto b = binned_[f][static_cast<std::size_t>(r)];
        hg[b] += g_[static_cast<std::size_t>(r)];
        hh[b] += h_[static_cast<std::size_t>(r)];
        ++hc[b];
      }
      double gl = 0.0, hl = 0.0;
      int cl = 0;
      for (std::size_t b = 0; b + 1 < nb; ++b) {
        gl += hg[b];
        hl += hh[b];
        cl += hc[b];
        if (cl < p_.min_leaf || n - cl < p_.min_leaf) continue;
        const double gr = G - gl, hr = H - hl;
        const double gain = 0.5 * (gl * gl / (hl + p_.lambda) + gr * gr / (hr + p_.lambda) - parent);
        if (gain > best) {
          best = gain;
          best_f = static_cast<int>(f);
          best_bin = static_cast<int>(b);
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<int> left, right;
    for (int r : rows)
      (binned_[static_cast<std::size_t>(best_f)][static_cast<std::size_t>(r)] <= best_bin ? left : right).push_back(r);
    rows.clear();
    const int l = grow(std::move(left), depth + 1);
    const int rr = grow(std::move(right), depth + 1);
    auto& node = (*nodes_)[static_cast<std::size_t>(id)];
    node.feature = best_f;
    node.threshold = cuts_[static_cast<std::size_t>(best_f)][static_cast<std::size_t>(best_bin)];
    node.left = l;
    node.right = rr;
    return id;
  }

  const std::vector<std::vector<std::uint8_t>>& binned_;
  const std::vector<std::vector<double>>& cuts_;
  std::span<const double> g_, h_;
  GbdtParams p_;
  std::vector<RegressionNode>* nodes_ = nullptr;
};

}  // namespace detail

/// If a tree would raise the training loss, its step is halved (up to ten
/// times) and dropped when that still does not help. Loss is therefore
/// non-increasing across iterations.
inline GbdtModel fit_gbdt(const Matrix& x, std::span<const int> y, const GbdtParams& p) {
  detail::check_fit_inputs(x, y);
  if (p.bins < 2 || p.bins > 256) throw Error(ErrorKind::Config, "gbdt bins must be in [2, 256]");
  if (p.lambda <= 0.0) throw Error(ErrorKind::Config, "gbdt lambda must be positive");
  if (p.iterations < 0 || p.learning_rate <= 0.0) throw Error(ErrorKind::Config, "bad gbdt iterations or rate");
  const auto n = static_cast<std::size_t>(x.rows());
  const auto cols = static_cast<std::size_t>(x.cols());

  std::size_t pos = 0;
  for (int v : y) pos += static_cast<std::size_t>(v);
  double prior = 0.0;
  if (pos != n - pos) {
    const double frac = std::clamp(static_cast<double>(pos) / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    prior = std::log(frac / (1.0 - frac));
  }
  std::vector<double> f(n, prior);
  std::vector<double> history{detail::log_loss(y, f)};
  std::vector<RegressionTree> trees;
  if (pos == 0 || pos == n) return GbdtModel(prior, {}, static_cast<int>(cols), p, std::move(history));

  std::vector<std::vector<double>> cuts(cols);
  std::vector<std::vector<std::uint8_t>> binned(cols, std::vector<std::uint8_t>(n));
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> v(n);
    for (std::size_t r = 0; r < n; ++r) v[r] = x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    cuts[c] = detail::bin_cuts(v, p.bins);
    for (std::size_t r = 0; r < n; ++r)
      binned[c][r] =
          static_cast<std::uint8_t>(std::lower_bound(cuts[c].begin(), cuts[c].end(), v[r]) - cuts[c].begin());
  }

  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> g(n), h(n), leaf(n), trial(n);
  for (int it = 0; it < p.iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double prob = 1.0 / (1.0 + std::exp(-f[i]));
      g[i] = prob - y[i];
      h[i] = std::max(prob * (1.0 - prob), 1e-12);
    }
    detail::GbdtTreeBuilder builder(binned, cuts, g, h, p);
    RegressionTree t = builder.build(all);
    for (std::size_t i = 0; i < n; ++i) leaf[i] = t.eval(x.row(static_cast<Eigen::Index>(i)));
    const double before = history.back();
    double step = p.learning_rate, after = before;
    bool accepted = false;
    for (int k = 0; k < 10 && !accepted; ++k, step *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = f[i] + step * leaf[i];
      after = detail::log_loss(y, trial);
      accepted = after <= before;
      if (accepted) break;
    }
    if (!accepted) {
      history.push_back(before);
      continue;
    }
    t.weight = step;
    f.swap(trial);
    history.push_back(after);
    trees.push_back(std::move(t));
  }
  return GbdtModel(prior, std::move(trees), static_cast<int>(cols), p, std::move(history));
}

inline nlohmann::json gbdt_to_json(const GbdtModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees()) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    trees.push_back({{"weight", t.weight}, {"nodes", nodes}});
  }
  const auto& p = m.params();
  return {{"n_features", m.n_features()},
          {"prior", m.prior()},
          {"params",
           {{"iterations", p.iterations},
            {"learning_rate", p.learning_rate},
            {"max_depth", p.max_depth},
            {"bins", p.bins},
            {"lambda", p.lambda},
            {"min_leaf", p.min_leaf},
            {"seed", p.seed}}},
          {"loss_history", m.loss_history()},
          {"trees", trees}};
}

inline GbdtModel gbdt_from_json(const nlohmann::json& j) {
  std::vector<RegressionTree> trees;
  for (const auto& jt : j.at("trees")) {
    RegressionTree t;
    t.weight = jt.at("weight").get<double>();
    for (const auto& a : jt.at("nodes"))
      t.nodes.push_back({a.at(0).get<int>(), a.at(1).get<double>(), a.at(2).get<int>(), a.at(3).get<int>(),
                         a.at(4).get<double>()});
    trees.push_back(std::move(t));
  }
  const auto& jp = j.at("params");
  GbdtParams p;
  p.iterations = jp.at("iterations").get<int>();
  p.learning_rate = jp.at("learning_rate").get<double>();
  p.max_depth = jp.at("max_depth").get<int>();
  p.bins = jp.at("bins").get<int>();
  p.lambda = jp.at("lambda").get<double>();
  p.min_leaf = jp.at("min_leaf").get<int>();
  p.seed = jp.at("seed").get<std::uint64_t>();
  return GbdtModel(j.at("prior").get<double>(), std::move(trees), j.at("n_features").get<int>(), p,
                   j.at("loss_history").get<std::vector<double>>());
}

}  // namespace pdm::models
