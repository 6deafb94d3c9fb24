#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace tabattack {

enum class FeatureKind { categorical, numeric };

enum class Task { binary_classification, regression };

/// Typed description of one column of the feature space.
struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::numeric;
    bool integer = false;
    bool positive = false;
    bool negative = false;
    bool normalized = false;
    bool immutable = false;
    std::optional<std::pair<double, double>> declared_range;
    std::vector<std::string> categories;  // categorical only, first-seen order
    std::optional<std::string> missing_sentinel;

    bool is_categorical() const { return kind == FeatureKind::categorical; }
    std::size_t cardinality() const { return categories.size(); }

    /// Throws std::invalid_argument on contradictory constraints.
    void validate() const;
};

struct LabelSpace {
    Task task = Task::binary_classification;
    int num_classes = 2;  // 1 for regression
};

/// Ordered feature list plus the immutable index set and label space.
/// Immutable after construction; safe for unrestricted concurrent reads.
class Schema {
public:
    Schema() = default;
    Schema(std::vector<FeatureSpec> features, LabelSpace labels);

    static Schema parse(const nlohmann::json& manifest);
    nlohmann::json to_json() const;

    const std::vector<FeatureSpec>& features() const { return features_; }
    const FeatureSpec& feature(std::size_t i) const { return features_[i]; }
    std::size_t dimension() const { return features_.size(); }
    const LabelSpace& labels() const { return labels_; }
    const std::vector<std::size_t>& immutable_set() const { return immutable_; }
    bool is_immutable(std::size_t i) const { return features_[i].immutable; }
    std::size_t mutable_count() const { return features_.size() - immutable_.size(); }
    std::size_t find(const std::string& name) const;  // npos if absent

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::vector<FeatureSpec> features_;
    std::vector<std::size_t> immutable_;
    LabelSpace labels_;
};

/// Eq.-style feasibility: exact equality on every immutable coordinate.
/// No tolerance; the attack enforces this by masking, so drift is a bug.
bool check_feasibility(std::span<const double> x, std::span<const double> x_star,
                       const Schema& schema);

/// Row-major numeric matrix with labels, in preprocessed space.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t n_features, std::vector<double> values, std::vector<double> labels);

    std::size_t size() const { return labels_.size(); }
    std::size_t n_features() const { return n_features_; }
    std::span<const double> row(std::size_t i) const {
        return {values_.data() + i * n_features_, n_features_};
    }
    std::span<double> row(std::size_t i) {
        return {values_.data() + i * n_features_, n_features_};
    }
    double label(std::size_t i) const { return labels_[i]; }
    const std::vector<double>& labels() const { return labels_; }
    const std::vector<double>& values() const { return values_; }

    void push_row(std::span<const double> x, double y);
    Dataset subset(const std::vector<std::size_t>& indices) const;

    /// Representational checks: categorical codes integral and in range,
    /// all values finite. Throws on violation.
    void validate_against(const Schema& schema) const;

private:
    std::size_t n_features_ = 0;
    std::vector<double> values_;
    std::vector<double> labels_;
};

}  // namespace tabattack
