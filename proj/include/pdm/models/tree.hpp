#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pdm/core/error.hpp"
#include "pdm/core/rng.hpp"

namespace pdm::models {

using Matrix = Eigen::MatrixXd;
using Labels = std::vector<int>;

struct TreeParams {
  int max_depth = 6;
  int min_leaf = 1;
  int max_features = 0;  // features examined per node; 0 = all
  std::uint64_t seed = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int samples = 0;
  int positives = 0;
  double gain = 0.0;

  bool is_leaf() const { return feature < 0; }
  int prediction() const { return 2 * positives > samples ? 1 : 0; }  // tie -> 0
};

/// Binary CART classifier with Gini impurity.
class DecisionTree {
 public:
  DecisionTree() = default;
  DecisionTree(std::vector<TreeNode> nodes, int n_features, TreeParams params)
      : nodes_(std::move(nodes)), n_features_(n_features), params_(params) {}

  int n_features() const { return n_features_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeParams& params() const { return params_; }

  const TreeNode& leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      i = row(n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(i)];
  }

  int predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const { return leaf_for(row).prediction(); }

  /// Fraction of positive training samples in the row's leaf.
  double score_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    const auto& leaf = leaf_for(row);
    return leaf.samples ? static_cast<double>(leaf.positives) / leaf.samples : 0.0;
  }

  int depth() const {
    std::function<int(int)> d = [&](int i) -> int {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      return n.is_leaf() ? 0 : 1 + std::max(d(n.left), d(n.right));
    };
    return nodes_.empty() ? 0 : d(0);
  }

 private:
  std::vector<TreeNode> nodes_;
  int n_features_ = 0;
  TreeParams params_;
};

namespace detail {

inline double gini(int n, int pos) {
  if (n == 0) return 0.0;
  const double p = static_cast<double>(pos) / n;
  return 2.0 * p * (1.0 - p);
}

inline void check_fit_inputs(const Matrix& x, std::span<const int> y) {
  if (x.rows() == 0 || y.empty()) throw Error(ErrorKind::EmptyInput, "fit on empty input");
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw Error(ErrorKind::Dimension, "feature rows and labels differ in length");
  for (int v : y)
    if (v != 0 && v != 1) throw Error(ErrorKind::Config, "labels must be 0 or 1");
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, std::span<const int> y, const TreeParams& p)
      : x_(x), y_(y), p_(p), rng_(p.seed) {}

  std::vector<TreeNode> build(std::vector<int> rows) {
    grow(std::move(rows), 0);
    return std::move(nodes_);
  }

 private:
  int grow(std::vector<int> rows, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    int pos = 0;
    for (int r : rows) pos += y_[static_cast<std::size_t>(r)];
    nodes_[static_cast<std::size_t>(id)].samples = static_cast<int>(rows.size());
    nodes_[static_cast<std::size_t>(id)].positives = pos;
    const int n = static_cast<int>(rows.size());
    if (depth >= p_.max_depth || pos == 0 || pos == n || n < 2 * p_.min_leaf) return id;

    const auto features = candidate_features();
    const double parent = gini(n, pos);
    double best_gain = -1.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<int> order(rows);
    for (int f : features) {
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double va = x_(a, f), vb = x_(b, f);
        return va != vb ? va < vb : a < b;
      });
      int left_pos = 0;
      for (int i = 0; i < n - 1; ++i) {
        left_pos += y_[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const double v = x_(order[static_cast<std::size_t>(i)], f);
        const double next = x_(order[static_cast<std::size_t>(i) + 1], f);
        if (v == next) continue;
        const int nl = i + 1, nr = n - nl;
        if (nl < p_.min_leaf || nr < p_.min_leaf) continue;
        const double g = parent - (static_cast<double>(nl) / n) * gini(nl, left_pos) -
                         (static_cast<double>(nr) / n) * gini(nr, pos - left_pos);
        if (g > best_gain + 1e-12) {
          best_gain = g;
          best_feature = f;
          best_threshold = 0.5 * (v + next);
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<int> left, right;
    for (int r : rows) (x_(r, best_feature) <= best_threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    node.gain = std::max(0.0, best_gain);
    return id;
  }

  std::vector<int> candidate_features() {
    const int p = static_cast<int>(x_.cols());
    std::vector<int> all(static_cast<std::size_t>(p));
    std::iota(all.begin(), all.end(), 0);
    if (p_.max_features <= 0 || p_.max_features >= p) return all;
    for (int i = 0; i < p_.max_features; ++i) {  // partial Fisher-Yates
      const auto j = static_cast<std::size_t>(i) + rng_.below(static_cast<std::uint64_t>(p - i));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(p_.max_features));
    std::sort(all.begin(), all.end());
    return all;
  }

  const Matrix& x_;
  std::span<const int> y_;
  TreeParams p_;
  Rng rng_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

inline DecisionTree fit_tree_on_rows(const Matrix& x, std::span<const int> y, std::vector<int> rows,
                                     const TreeParams& p) {
  if (p.max_depth < 1 || p.min_leaf < 1) throw Error(ErrorKind::Config, "tree depth and min leaf must be >= 1");
  detail::TreeBuilder b(x, y, p);
  return DecisionTree(b.build(std::move(rows)), static_cast<int>(x.cols()), p);
}

inline DecisionTree fit_tree(const Matrix& x, std::span<const int> y, const TreeParams& p) {
  detail::check_fit_inputs(x, y);
  std::vector<int> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), 0);
  return fit_tree_on_rows(x, y, std::move(rows), p);
}

struct ForestParams {
  int trees = 50;
  bool bootstrap = true;
  int max_depth = 8;
  int min_leaf = 1;
  int max_features = -1;  // -1 = floor(sqrt(features)), 0 = all
  std::uint64_t seed = 0;
};

class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(std::vector<DecisionTree> trees, int n_features, ForestParams params)
      : trees_(std::move(trees)), n_features_(n_features), params_(params) {}

  int n_features() const { return n_features_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const ForestParams& params() const { return params_; }

  /// Fraction of trees voting 1.
  double score_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    if (trees_.empty()) return 0.0;
    int votes = 0;
    for (const auto& t : trees_) votes += t.predict_row(row);
    return static_cast<double>(votes) / static_cast<double>(trees_.size());
  }

  int predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int votes = 0;
    for (const auto& t : trees_) votes += t.predict_row(row);
    return 2 * votes > static_cast<int>(trees_.size()) ? 1 : 0;
  }

 private:
  std::vector<DecisionTree> trees_;
  int n_features_ = 0;
  ForestParams params_;
};

/// Each tree draws its bootstrap sample and feature subsets from its own
/// seed substream, so tree t is the same regardless of training order.
inline RandomForest fit_forest(const Matrix& x, std::span<const int> y, const ForestParams& p) {
  detail::check_fit_inputs(x, y);
  if (p.trees < 1) throw Error(ErrorKind::Config, "forest needs at least one tree");
  const int n = static_cast<int>(x.rows());
  const int features = p.max_features < 0
                           ? std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(x.cols())))))
                           : p.max_features;
  const Rng root(p.seed);
  std::vector<DecisionTree> trees;
  trees.reserve(static_cast<std::size_t>(p.trees));
  for (int t = 0; t < p.trees; ++t) {
    Rng rng = root.substream(static_cast<std::uint64_t>(t));
    std::vector<int> rows(static_cast<std::size_t>(n));
    if (p.bootstrap) {
      for (auto& r : rows) r = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      std::sort(rows.begin(), rows.end());
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    const TreeParams tp{p.max_depth, p.min_leaf, features, rng.next()};
    trees.push_back(fit_tree_on_rows(x, y, std::move(rows), tp));
  }
  return RandomForest(std::move(trees), static_cast<int>(x.cols()), p);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json tree_to_json(const DecisionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes())
    nodes.push_back({n.feature, n.threshold, n.left, n.right, n.samples, n.positives, n.gain});
  return {{"n_features", t.n_features()},
          {"params",
           {{"max_depth", t.params().max_depth},
            {"min_leaf", t.params().min_leaf},
            {"max_features", t.params().max_features},
            {"seed", t.params().seed}}},
          {"nodes", nodes}};
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& a : j.at("nodes")) {
    TreeNode n;
    n.feature = a.at(0).get<int>();
    n.threshold = a.at(1).get<double>();
    n.left = a.at(2).get<int>();
    n.right = a.at(3).get<int>();
    n.samples = a.at(4).get<int>();
    n.positives = a.at(5).get<int>();
    n.gain = a.at(6).get<double>();
    nodes.push_back(n);
  }
  const auto& p = j.at("params");
  TreeParams tp{p.at("max_depth").get<int>(), p.at("min_leaf").get<int>(), p.at("max_features").get<int>(),
                p.at("seed").get<std::uint64_t>()};
  return DecisionTree(std::move(nodes), j.at("n_features").get<int>(), tp);
}

}  // namespace pdm::models
