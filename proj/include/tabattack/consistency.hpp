#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "tabattack/preprocess.hpp"
#include "tabattack/schema.hpp"

namespace tabattack {

/// Support of one marginal in preprocessed space: a finite code set, an
/// affine integer grid (value = step*k + offset), or an interval.
struct FeatureSupport {
    enum class Kind { finite_set, grid, interval };
    Kind kind = Kind::interval;
    std::vector<double> values;  // finite_set, sorted ascending
    double step = 1.0, offset = 0.0;
    long k_min = 0, k_max = 0;  // grid bounds
    double lo = 0.0, hi = 1.0;  // interval

    double project(double v) const;
    bool contains(double v) const;

    nlohmann::json to_json() const;
    static FeatureSupport from_json(const nlohmann::json& j);
};

class Supports {
public:
    Supports() = default;

    /// Categorical: observed codes. Integer: observed integer range on the
    /// preprocessing grid. Continuous: observed [min, max] intersected with
    /// the declared range. Pass the preprocessor so integer grids land on
    /// the scaled lattice; without it raw units are assumed.
    static Supports fit(const Dataset& train, const Schema& schema,
                        const Preprocessor* preprocessor = nullptr);

    const FeatureSupport& feature(std::size_t i) const { return per_feature_[i]; }
    std::size_t dimension() const { return per_feature_.size(); }

    /// Nearest-point projection per coordinate; idempotent and identity on
    /// in-support vectors.
    std::vector<double> project(std::span<const double> x) const;
    bool in_support(std::span<const double> x) const;
    std::vector<std::size_t> violations(std::span<const double> x) const;

    nlohmann::json to_json() const;
    static Supports from_json(const nlohmann::json& j);

private:
    std::vector<FeatureSupport> per_feature_;
};

struct ConsistencyConfig {
    double penalty_weight = 0.5;       // Mahalanobis term
    double epsilon_percentile = 1.0;   // per-class training-score percentile
    std::size_t histogram_bins = 10;   // continuous marginals
    double covariance_regularizer = 1e-6;
    double laplace_alpha = 1.0;
    std::size_t regression_bins = 10;  // class conditioning for regression
};

/// Naive-marginal product with a class-conditional Mahalanobis penalty:
/// a monotone proxy for P(X = x | y). Pluggable default; unobserved
/// categorical codes keep probability exactly zero.
class ConsistencyEstimator {
public:
    static ConsistencyEstimator fit(const Dataset& train, const Schema& schema,
                                    const ConsistencyConfig& cfg);

    /// exp( sum_i log p_i(x_i | y) - w * Mahalanobis^2 ); 0 when any
    /// marginal probability is 0. Throws on an unseen class.
    double score(std::span<const double> x, double y) const;
    double log_score(std::span<const double> x, double y) const;

    /// Per-class ε at the configured percentile of training scores.
    double epsilon(double y) const;
    bool is_consistent(double score_value, double eps) const { return score_value > eps; }
    bool check(std::span<const double> x, double y) const {
        return log_score(x, y) > log_epsilon(y);
    }
    double log_epsilon(double y) const;

    nlohmann::json to_json() const;
    static ConsistencyEstimator from_json(const nlohmann::json& j);

private:
    struct ClassStats {
        std::size_t count = 0;
        // Per feature: categorical probabilities by code, or histogram.
        std::vector<std::vector<double>> cat_probs;
        std::vector<double> hist_lo, hist_hi;
        std::vector<std::vector<double>> hist_density;
        std::vector<double> mean;      // numeric block, standardized units
        std::vector<double> chol;      // lower Cholesky of regularized cov
        std::vector<double> log_score_percentiles;  // sorted training log-scores
    };
    int class_of(double y) const;
    double mahalanobis2(const ClassStats& cs, std::span<const double> x) const;

    ConsistencyConfig cfg_;
    std::vector<bool> is_categorical_;
    std::vector<std::size_t> numeric_indices_;
    std::vector<double> numeric_mu_, numeric_sd_;  // global standardization
    std::vector<double> bin_edges_;                // regression conditioning
    std::map<int, ClassStats> classes_;
};

struct ValidityReport {
    bool feasible = false;
    std::vector<std::size_t> support_violations;
    double consistency_score = 0.0;
    double epsilon = 0.0;
    bool consistent = false;
    bool valid = false;  // feasible AND consistent
};

ValidityReport validity_check(std::span<const double> x, std::span<const double> x_star,
                              double y, const ConsistencyEstimator& estimator,
                              const Supports& supports, const Schema& schema);

}  // namespace tabattack
