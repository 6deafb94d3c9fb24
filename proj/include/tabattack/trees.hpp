#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabattack/schema.hpp"

namespace tabattack {

enum class TreeKind { decision_tree, random_forest, gbm };

std::string tree_kind_name(TreeKind k);
TreeKind tree_kind_from_name(const std::string& s);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    bool categorical_split = false;
    double threshold = 0.0;                     // numeric: x <= threshold goes left
    std::vector<std::uint8_t> left_categories;  // categorical: code-in-set goes left
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf value
};

struct Tree {
    std::vector<TreeNode> nodes;
    double predict(std::span<const double> x) const;
};

struct TreeHyperparams {
    std::size_t max_depth = 8;       // decision tree / forest members
    std::size_t min_samples_leaf = 1;
    std::size_t n_trees = 100;       // forest
    bool bootstrap = true;           // forest row resampling
    std::size_t max_features = 0;    // forest per-split subsampling; 0 = sqrt(d)
    std::size_t gbm_rounds = 200;
    std::size_t gbm_depth = 3;
    double learning_rate = 0.1;
    double subsample = 1.0;          // gbm row subsampling

    nlohmann::json to_json() const;
    static TreeHyperparams from_json(const nlohmann::json& j);
};

/// Tree-based target model with information-gain feature importance.
/// Immutable once trained; concurrent-read safe.
struct TreeModel {
    TreeKind kind = TreeKind::decision_tree;
    Task task = Task::binary_classification;
    std::vector<Tree> trees;
    double base_score = 0.0;  // gbm prior (log-odds or mean)
    double learning_rate = 1.0;
    std::vector<double> importance;  // cumulative gain per feature
    TreeHyperparams hyperparams;

    /// Positive-class probability for classification, real value for
    /// regression.
    double predict_score(std::span<const double> x) const;
    int predict_label(std::span<const double> x) const;

    nlohmann::json to_json() const;
    static TreeModel from_json(const nlohmann::json& j);
};

TreeModel train_tree_model(TreeKind kind, const Dataset& train, const Schema& schema,
                           const TreeHyperparams& hp, std::uint64_t seed);

/// ROC-AUC via the rank statistic (ties get average rank).
double auc_score(std::span<const double> scores, std::span<const double> labels);
double mse_score(std::span<const double> predictions, std::span<const double> targets);

/// Table-style evaluation: AUC for classification, MSE for regression.
double evaluate(const TreeModel& model, const Dataset& data);

/// Entropy in bits of a binary split, for hand-verified gain checks.
double binary_entropy(double p);

}  // namespace tabattack
