#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pdm/models/gbdt.hpp"
#include "pdm/models/svm.hpp"
#include "pdm/models/tree.hpp"

namespace pdm::models {

enum class Family { Tree, Forest, Gbdt, LinearSvm };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::Tree: return "Tree";
    case Family::Forest: return "RandomForest";
    case Family::Gbdt: return "GBDT";
    case Family::LinearSvm: return "LinearSVM";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  for (auto f : {Family::Tree, Family::Forest, Family::Gbdt, Family::LinearSvm})
    if (to_string(f) == s) return f;
  throw Error(ErrorKind::Config, "unknown model family '" + std::string(s) + "'");
}

using ClassifierModel = std::variant<DecisionTree, RandomForest, GbdtModel, LinearSvm>;

inline Family family_of(const ClassifierModel& m) { return static_cast<Family>(m.index()); }

inline int n_features(const ClassifierModel& m) {
  return std::visit([](const auto& x) { return x.n_features(); }, m);
}

struct Prediction {
  std::vector<int> labels;
  std::vector<double> scores;
};

inline Prediction predict(const ClassifierModel& m, const Matrix& x) {
  if (x.cols() != n_features(m))
    throw Error(ErrorKind::Dimension, "model expects " + std::to_string(n_features(m)) + " features, got " +
                                          std::to_string(x.cols()));
  Prediction p;
  p.labels.reserve(static_cast<std::size_t>(x.rows()));
  p.scores.reserve(static_cast<std::size_t>(x.rows()));
  std::visit(
      [&](const auto& model) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          p.labels.push_back(model.predict_row(x.row(i)));
          p.scores.push_back(model.score_row(x.row(i)));
        }
      },
      m);
  return p;
}

inline nlohmann::json model_to_json(const ClassifierModel& m) {
  nlohmann::json body = std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, DecisionTree>) {
          return tree_to_json(x);
        } else if constexpr (std::is_same_v<T, RandomForest>) {
          nlohmann::json trees = nlohmann::json::array();
          for (const auto& t : x.trees()) trees.push_back(tree_to_json(t));
          const auto& p = x.params();
          return {{"n_features", x.n_features()},
                  {"params",
                   {{"trees", p.trees},
                    {"bootstrap", p.bootstrap},
                    {"max_depth", p.max_depth},
                    {"min_leaf", p.min_leaf},
                    {"max_features", p.max_features},
                    {"seed", p.seed}}},
                  {"trees", trees}};
        } else if constexpr (std::is_same_v<T, GbdtModel>) {
          return gbdt_to_json(x);
        } else {
          return svm_to_json(x);
        }
      },
      m);
  return {{"family", to_string(family_of(m))}, {"model", body}};
}

inline ClassifierModel model_from_json(const nlohmann::json& j) {
  const auto& b = j.at("model");
  switch (parse_family(j.at("family").get<std::string>())) {
    case Family::Tree: return tree_from_json(b);
    case Family::Forest: {
      std::vector<DecisionTree> trees;
      for (const auto& t : b.at("trees")) trees.push_back(tree_from_json(t));
      const auto& jp = b.at("params");
      ForestParams p;
      p.trees = jp.at("trees").get<int>();
      p.bootstrap = jp.at("bootstrap").get<bool>();
      p.max_depth = jp.at("max_depth").get<int>();
      p.min_leaf = jp.at("min_leaf").get<int>();
      p.max_features = jp.at("max_features").get<int>();
      p.seed = jp.at("seed").get<std::uint64_t>();
      return RandomForest(std::move(trees), b.at("n_features").get<int>(), p);
    }
    case Family::Gbdt: return gbdt_from_json(b);
    case Family::LinearSvm: return svm_from_json(b);
  }
  throw Error(ErrorKind::Config, "bad model document");
}

}  // namespace pdm::models
