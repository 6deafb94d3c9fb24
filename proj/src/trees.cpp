#include "tabattack/trees.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tabattack/parallel.hpp"

namespace tabattack {

std::string tree_kind_name(TreeKind k) {
    switch (k) {
        case TreeKind::decision_tree: return "decision_tree";
        case TreeKind::random_forest: return "random_forest";
        case TreeKind::gbm: return "gbm";
    }
    return "decision_tree";
}

TreeKind tree_kind_from_name(const std::string& s) {
    if (s == "decision_tree" || s == "dt") return TreeKind::decision_tree;
    if (s == "random_forest" || s == "rf") return TreeKind::random_forest;
    if (s == "gbm") return TreeKind::gbm;
    throw std::invalid_argument("unknown tree kind '" + s + "'");
}

double binary_entropy(double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double Tree::predict(std::span<const double> x) const {
    int n = 0;
    while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
        const TreeNode& node = nodes[static_cast<std::size_t>(n)];
        const double v = x[static_cast<std::size_t>(node.feature)];
        bool go_left;
        if (node.categorical_split) {
            const auto code = static_cast<std::size_t>(std::llround(v));
            go_left = code < node.left_categories.size() && node.left_categories[code];
        } else {
            go_left = v <= node.threshold;
        }
        n = go_left ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(n)].value;
}

namespace {

constexpr double kMinGain = 1e-12;

struct SplitChoice {
    bool found = false;
    int feature = -1;
    bool categorical = false;
    double threshold = 0.0;
    std::vector<std::uint8_t> left_categories;
    double gain = 0.0;
};

struct GrowContext {
    const Dataset& data;
    const Schema& schema;
    bool entropy_impurity;           // otherwise variance
    const std::vector<double>& y;    // per-row targets (labels or residuals)
    const std::vector<double>* hess; // Newton leaf denominators (gbm logistic)
    std::size_t max_depth;
    std::size_t min_samples_leaf;
    std::size_t max_features;        // 0 = all
    bool categorical_as_sets;
    std::vector<double>* importance;
};

double impurity_from_sums(bool entropy, double sum, double sum_sq, double n) {
    if (n <= 0.0) return 0.0;
    if (entropy) return binary_entropy(sum / n);
    return sum_sq / n - (sum / n) * (sum / n);  // variance
}

// Best split of one feature over the node's rows; deterministic
// feature-local tie-break (first strictly better candidate wins).
SplitChoice best_split_for_feature(const GrowContext& ctx,
                                   const std::vector<std::size_t>& rows, int feature,
                                   double parent_impurity) {
    SplitChoice best;
    best.feature = feature;
    const auto f = static_cast<std::size_t>(feature);
    const FeatureSpec& spec = ctx.schema.feature(f);
    const double n = static_cast<double>(rows.size());

    double total_sum = 0.0, total_sq = 0.0;
    for (std::size_t r : rows) {
        total_sum += ctx.y[r];
        total_sq += ctx.y[r] * ctx.y[r];
    }

    auto evaluate_partition = [&](double nl, double sum_l, double sq_l) -> double {
        const double nr = n - nl;
        const double child = (nl / n) * impurity_from_sums(ctx.entropy_impurity, sum_l, sq_l, nl) +
                             (nr / n) * impurity_from_sums(ctx.entropy_impurity, total_sum - sum_l,
                                                           total_sq - sq_l, nr);
        return parent_impurity - child;
    };

    if (spec.is_categorical() && ctx.categorical_as_sets) {
        const std::size_t k = spec.cardinality();
        std::vector<double> count(k, 0.0), sum(k, 0.0), sq(k, 0.0);
        for (std::size_t r : rows) {
            const auto c = static_cast<std::size_t>(std::llround(ctx.data.row(r)[f]));
            count[c] += 1.0;
            sum[c] += ctx.y[r];
            sq[c] += ctx.y[r] * ctx.y[r];
        }
        auto try_set = [&](const std::vector<std::uint8_t>& left) {
            double nl = 0.0, sum_l = 0.0, sq_l = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                if (!left[c]) continue;
                nl += count[c];
                sum_l += sum[c];
                sq_l += sq[c];
            }
            if (nl < static_cast<double>(ctx.min_samples_leaf) ||
                n - nl < static_cast<double>(ctx.min_samples_leaf))
                return;
            const double gain = evaluate_partition(nl, sum_l, sq_l);
            if (gain > best.gain + kMinGain || (!best.found && gain > kMinGain)) {
                best.found = true;
                best.categorical = true;
                best.left_categories = left;
                best.gain = gain;
            }
        };
        if (k <= 16) {
            // One-vs-rest candidates, ascending category code.
            for (std::size_t c = 0; c < k; ++c) {
                if (count[c] == 0.0) continue;
                std::vector<std::uint8_t> left(k, 0);
                left[c] = 1;
                try_set(left);
            }
        } else {
            // Frequency-ordered prefix scan.
            std::vector<std::size_t> order(k);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return count[a] > count[b];
            });
            std::vector<std::uint8_t> left(k, 0);
            for (std::size_t step = 0; step + 1 < k; ++step) {
                left[order[step]] = 1;
                try_set(left);
            }
        }
        return best;
    }

    // Numeric (and ordered-categorical) scan over midpoints of sorted
    // distinct values.
    std::vector<std::pair<double, double>> pairs;  // (x, y)
    pairs.reserve(rows.size());
    for (std::size_t r : rows) pairs.emplace_back(ctx.data.row(r)[f], ctx.y[r]);
    std::sort(pairs.begin(), pairs.end());
    double nl = 0.0, sum_l = 0.0, sq_l = 0.0;
    for (std::size_t i = 0; i + 1 < pairs.size(); ++i) {
        nl += 1.0;
        sum_l += pairs[i].second;
        sq_l += pairs[i].second * pairs[i].second;
        if (pairs[i].first == pairs[i + 1].first) continue;
        if (nl < static_cast<double>(ctx.min_samples_leaf) ||
            n - nl < static_cast<double>(ctx.min_samples_leaf))
            continue;
        const double gain = evaluate_partition(nl, sum_l, sq_l);
        if (gain > best.gain + kMinGain || (!best.found && gain > kMinGain)) {
            best.found = true;
            best.categorical = false;
            best.threshold = (pairs[i].first + pairs[i + 1].first) / 2.0;
            best.gain = gain;
        }
    }
    return best;
}

double leaf_value(const GrowContext& ctx, const std::vector<std::size_t>& rows) {
    if (ctx.hess) {
        double num = 0.0, den = 0.0;
        for (std::size_t r : rows) {
            num += ctx.y[r];
            den += (*ctx.hess)[r];
        }
        return num / std::max(den, 1e-12);
    }
    double sum = 0.0;
    for (std::size_t r : rows) sum += ctx.y[r];
    return sum / static_cast<double>(rows.size());
}

int grow_node(const GrowContext& ctx, Tree& tree, std::vector<std::size_t>& rows,
              std::size_t depth, std::mt19937_64* rng) {
    const int node_index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    double sum = 0.0, sq = 0.0;
    for (std::size_t r : rows) {
        sum += ctx.y[r];
        sq += ctx.y[r] * ctx.y[r];
    }
    const double n = static_cast<double>(rows.size());
    const double parent = impurity_from_sums(ctx.entropy_impurity, sum, sq, n);

    auto make_leaf = [&]() {
        tree.nodes[static_cast<std::size_t>(node_index)].value = leaf_value(ctx, rows);
        return node_index;
    };
    if (depth >= ctx.max_depth || rows.size() < 2 * ctx.min_samples_leaf || parent <= kMinGain)
        return make_leaf();

    // Candidate feature set; forests subsample per split.
    const std::size_t d = ctx.schema.dimension();
    std::vector<int> candidates;
    if (ctx.max_features > 0 && ctx.max_features < d && rng) {
        std::vector<int> all(d);
        std::iota(all.begin(), all.end(), 0);
        std::shuffle(all.begin(), all.end(), *rng);
        candidates.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(ctx.max_features));
        std::sort(candidates.begin(), candidates.end());
    } else {
        candidates.resize(d);
        std::iota(candidates.begin(), candidates.end(), 0);
    }

    // Per-feature bests are independent; the serial ascending reduction
    // keeps the result identical at any thread count.
    std::vector<SplitChoice> per_feature(candidates.size());
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(candidates.size()); ++ci)
        per_feature[static_cast<std::size_t>(ci)] =
            best_split_for_feature(ctx, rows, candidates[static_cast<std::size_t>(ci)], parent);

    SplitChoice best;
    for (const auto& choice : per_feature)
        if (choice.found && (!best.found || choice.gain > best.gain + kMinGain)) best = choice;
    if (!best.found) return make_leaf();

    if (ctx.importance)
        (*ctx.importance)[static_cast<std::size_t>(best.feature)] += best.gain;

    std::vector<std::size_t> left_rows, right_rows;
    const auto f = static_cast<std::size_t>(best.feature);
    for (std::size_t r : rows) {
        const double v = ctx.data.row(r)[f];
        bool go_left;
        if (best.categorical) {
            const auto code = static_cast<std::size_t>(std::llround(v));
            go_left = code < best.left_categories.size() && best.left_categories[code];
        } else {
            go_left = v <= best.threshold;
        }
        (go_left ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    TreeNode& node = tree.nodes[static_cast<std::size_t>(node_index)];
    node.feature = best.feature;
    node.categorical_split = best.categorical;
    node.threshold = best.threshold;
    node.left_categories = best.left_categories;
    const int left = grow_node(ctx, tree, left_rows, depth + 1, rng);
    const int right = grow_node(ctx, tree, right_rows, depth + 1, rng);
    tree.nodes[static_cast<std::size_t>(node_index)].left = left;
    tree.nodes[static_cast<std::size_t>(node_index)].right = right;
    return node_index;
}

Tree grow_tree(const GrowContext& ctx, std::vector<std::size_t> rows, std::mt19937_64* rng) {
    Tree tree;
    grow_node(ctx, tree, rows, 0, rng);
    return tree;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

double TreeModel::predict_score(std::span<const double> x) const {
    switch (kind) {
        case TreeKind::decision_tree:
            return trees.front().predict(x);
        case TreeKind::random_forest: {
            double sum = 0.0;
            for (const auto& t : trees) sum += t.predict(x);
            return sum / static_cast<double>(trees.size());
        }
        case TreeKind::gbm: {
            double score = base_score;
            for (const auto& t : trees) score += learning_rate * t.predict(x);
            return task == Task::binary_classification ? sigmoid(score) : score;
        }
    }
    return 0.0;
}

int TreeModel::predict_label(std::span<const double> x) const {
    return predict_score(x) >= 0.5 ? 1 : 0;
}

TreeModel train_tree_model(TreeKind kind, const Dataset& train, const Schema& schema,
                           const TreeHyperparams& hp, std::uint64_t seed) {
    if (train.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
    TreeModel model;
    model.kind = kind;
    model.task = schema.labels().task;
    model.hyperparams = hp;
    model.importance.assign(schema.dimension(), 0.0);

    const bool classification = model.task == Task::binary_classification;
    const std::vector<double>& y = train.labels();
    const bool degenerate =
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
    if (degenerate) {
        std::cerr << "warning: single-class training data, returning constant predictor\n";
        if (kind == TreeKind::gbm) {
            model.learning_rate = hp.learning_rate;
            if (classification) {
                const double p = std::clamp(y.front(), 1e-9, 1.0 - 1e-9);
                model.base_score = std::log(p / (1.0 - p));
            } else {
                model.base_score = y.front();
            }
        } else {
            Tree t;
            t.nodes.emplace_back();
            t.nodes.back().value = y.front();
            model.trees.push_back(std::move(t));
        }
        return model;
    }

    std::vector<std::size_t> all_rows(train.size());
    std::iota(all_rows.begin(), all_rows.end(), 0);

    if (kind == TreeKind::decision_tree) {
        GrowContext ctx{train,   schema, classification, y,
                        nullptr, hp.max_depth, hp.min_samples_leaf,
                        0,       true,   &model.importance};
        model.trees.push_back(grow_tree(ctx, all_rows, nullptr));
        return model;
    }

    if (kind == TreeKind::random_forest) {
        const std::size_t d = schema.dimension();
        const std::size_t max_features =
            hp.max_features > 0
                ? hp.max_features
                : std::max<std::size_t>(1, static_cast<std::size_t>(
                                               std::llround(std::sqrt(static_cast<double>(d)))));
        model.trees.resize(hp.n_trees);
        std::vector<std::vector<double>> importances(hp.n_trees,
                                                     std::vector<double>(d, 0.0));
        // Trees are independent; per-tree seeds keep any schedule deterministic.
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(hp.n_trees); ++t) {
            std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(t + 1));
            std::vector<std::size_t> rows;
            if (hp.bootstrap) {
                std::uniform_int_distribution<std::size_t> u(0, train.size() - 1);
                rows.resize(train.size());
                for (auto& r : rows) r = u(rng);
            } else {
                rows = all_rows;
            }
            GrowContext ctx{train,   schema, classification, y,
                            nullptr, hp.max_depth, hp.min_samples_leaf,
                            hp.n_trees > 1 ? max_features : 0, true,
                            &importances[static_cast<std::size_t>(t)]};
            model.trees[static_cast<std::size_t>(t)] = grow_tree(ctx, std::move(rows), &rng);
        }
        for (const auto& imp : importances)
            for (std::size_t i = 0; i < d; ++i) model.importance[i] += imp[i];
        return model;
    }

    // GBM: depth-limited regression trees on gradients with shrinkage.
    model.learning_rate = hp.learning_rate;
    const double mean_y =
        std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    if (classification) {
        const double p = std::clamp(mean_y, 1e-9, 1.0 - 1e-9);
        model.base_score = std::log(p / (1.0 - p));
    } else {
        model.base_score = mean_y;
    }

    std::vector<double> raw(train.size(), model.base_score);
    std::vector<double> residual(train.size());
    std::vector<double> hess(train.size());
    std::mt19937_64 rng(seed ^ 0xa5a5a5a5a5a5a5a5ULL);
    for (std::size_t round = 0; round < hp.gbm_rounds; ++round) {
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (classification) {
                const double p = sigmoid(raw[i]);
                residual[i] = y[i] - p;
                hess[i] = std::max(p * (1.0 - p), 1e-12);
            } else {
                residual[i] = y[i] - raw[i];
                hess[i] = 1.0;
            }
        }
        std::vector<std::size_t> rows = all_rows;
        if (hp.subsample < 1.0) {
            std::shuffle(rows.begin(), rows.end(), rng);
            rows.resize(std::max<std::size_t>(
                1, static_cast<std::size_t>(hp.subsample * static_cast<double>(rows.size()))));
            std::sort(rows.begin(), rows.end());
        }
        GrowContext ctx{train, schema, false,  residual,
                        classification ? &hess : nullptr, hp.gbm_depth,
                        hp.min_samples_leaf, 0, false, &model.importance};
        Tree tree = grow_tree(ctx, std::move(rows), nullptr);
        for (std::size_t i = 0; i < train.size(); ++i)
            raw[i] += hp.learning_rate * tree.predict(train.row(i));
        model.trees.push_back(std::move(tree));
    }
    return model;
}

double auc_score(std::span<const double> scores, std::span<const double> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (double l : labels) (l > 0.5 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc undefined for a single-class dataset");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tied scores.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] > 0.5) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double mse_score(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size()) throw std::invalid_argument("mse: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = predictions[i] - targets[i];
        s += d * d;
    }
    return s / static_cast<double>(predictions.size());
}

double evaluate(const TreeModel& model, const Dataset& data) {
    std::vector<double> scores(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) scores[i] = model.predict_score(data.row(i));
    if (model.task == Task::binary_classification) return auc_score(scores, data.labels());
    return mse_score(scores, data.labels());
}

nlohmann::json TreeHyperparams::to_json() const {
    return {{"max_depth", max_depth},
            {"min_samples_leaf", min_samples_leaf},
            {"n_trees", n_trees},
            {"bootstrap", bootstrap},
            {"max_features", max_features},
            {"gbm_rounds", gbm_rounds},
            {"gbm_depth", gbm_depth},
            {"learning_rate", learning_rate},
            {"subsample", subsample}};
}

TreeHyperparams TreeHyperparams::from_json(const nlohmann::json& j) {
    TreeHyperparams hp;
    hp.max_depth = j.value("max_depth", hp.max_depth);
    hp.min_samples_leaf = j.value("min_samples_leaf", hp.min_samples_leaf);
    hp.n_trees = j.value("n_trees", hp.n_trees);
    hp.bootstrap = j.value("bootstrap", hp.bootstrap);
    hp.max_features = j.value("max_features", hp.max_features);
    hp.gbm_rounds = j.value("gbm_rounds", hp.gbm_rounds);
    hp.gbm_depth = j.value("gbm_depth", hp.gbm_depth);
    hp.learning_rate = j.value("learning_rate", hp.learning_rate);
    hp.subsample = j.value("subsample", hp.subsample);
    return hp;
}

nlohmann::json TreeModel::to_json() const {
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& tree : trees) {
        nlohmann::json jn = nlohmann::json::array();
        for (const auto& n : tree.nodes) {
            nlohmann::json node;
            node["feature"] = n.feature;
            if (n.feature >= 0) {
                node["left"] = n.left;
                node["right"] = n.right;
                if (n.categorical_split) {
                    std::vector<int> cats;
                    for (std::size_t c = 0; c < n.left_categories.size(); ++c)
                        if (n.left_categories[c]) cats.push_back(static_cast<int>(c));
                    node["left_categories"] = cats;
                    node["cardinality"] = n.left_categories.size();
                } else {
                    node["threshold"] = n.threshold;
                }
            } else {
                node["value"] = n.value;
            }
            jn.push_back(std::move(node));
        }
        jt.push_back(std::move(jn));
    }
    return {{"kind", tree_kind_name(kind)},
            {"task", task == Task::binary_classification ? "binary_classification"
                                                         : "regression"},
            {"base_score", base_score},
            {"learning_rate", learning_rate},
            {"importance", importance},
            {"hyperparams", hyperparams.to_json()},
            {"trees", std::move(jt)}};
}

TreeModel TreeModel::from_json(const nlohmann::json& j) {
    TreeModel m;
    m.kind = tree_kind_from_name(j.at("kind").get<std::string>());
    m.task = j.at("task").get<std::string>() == "regression" ? Task::regression
                                                             : Task::binary_classification;
    m.base_score = j.at("base_score").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    m.importance = j.at("importance").get<std::vector<double>>();
    m.hyperparams = TreeHyperparams::from_json(j.at("hyperparams"));
    for (const auto& jt : j.at("trees")) {
        Tree tree;
        for (const auto& jn : jt) {
            TreeNode n;
            n.feature = jn.at("feature").get<int>();
            if (n.feature >= 0) {
                n.left = jn.at("left").get<int>();
                n.right = jn.at("right").get<int>();
                if (jn.contains("left_categories")) {
                    n.categorical_split = true;
                    n.left_categories.assign(jn.at("cardinality").get<std::size_t>(), 0);
                    for (int c : jn.at("left_categories").get<std::vector<int>>())
                        n.left_categories[static_cast<std::size_t>(c)] = 1;
                } else {
                    n.threshold = jn.at("threshold").get<double>();
                }
            } else {
                n.value = jn.at("value").get<double>();
            }
            tree.nodes.push_back(std::move(n));
        }
        m.trees.push_back(std::move(tree));
    }
    return m;
}

}  // namespace tabattack
