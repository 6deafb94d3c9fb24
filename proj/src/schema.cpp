#include "tabattack/schema.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace tabattack {

void FeatureSpec::validate() const {
    if (name.empty()) throw std::invalid_argument("feature name must be non-empty");
    if (positive && negative)
        throw std::invalid_argument("feature '" + name + "' declared both positive and negative");
    if (kind == FeatureKind::categorical) {
        if (categories.empty())
            throw std::invalid_argument("categorical feature '" + name + "' has no categories");
        if (positive || negative || normalized)
            throw std::invalid_argument("categorical feature '" + name +
                                        "' carries a numeric constraint");
        std::set<std::string> seen(categories.begin(), categories.end());
        if (seen.size() != categories.size())
            throw std::invalid_argument("feature '" + name + "' has duplicate category labels");
    }
    if (normalized && declared_range) {
        if (declared_range->first != 0.0 || declared_range->second != 1.0)
            throw std::invalid_argument("normalized feature '" + name +
                                        "' must have range [0,1]");
    }
    if (declared_range && declared_range->first > declared_range->second)
        throw std::invalid_argument("feature '" + name + "' has inverted range");
}

Schema::Schema(std::vector<FeatureSpec> features, LabelSpace labels)
    : features_(std::move(features)), labels_(labels) {
    if (features_.empty()) throw std::invalid_argument("schema requires at least one feature");
    std::set<std::string> names;
    for (std::size_t i = 0; i < features_.size(); ++i) {
        features_[i].validate();
        if (!names.insert(features_[i].name).second)
            throw std::invalid_argument("duplicate feature name '" + features_[i].name + "'");
        if (features_[i].immutable) immutable_.push_back(i);
    }
    if (labels_.task == Task::binary_classification && labels_.num_classes != 2)
        throw std::invalid_argument("binary classification requires exactly 2 classes");
    if (labels_.task == Task::regression && labels_.num_classes != 1)
        throw std::invalid_argument("regression requires num_classes = 1");
}

std::size_t Schema::find(const std::string& name) const {
    for (std::size_t i = 0; i < features_.size(); ++i)
        if (features_[i].name == name) return i;
    return npos;
}

Schema Schema::parse(const nlohmann::json& manifest) {
    if (!manifest.contains("task") || !manifest.contains("features"))
        throw std::invalid_argument("manifest requires 'task' and 'features'");
    LabelSpace labels;
    const std::string task = manifest.at("task").get<std::string>();
    if (task == "binary_classification") {
        labels.task = Task::binary_classification;
        labels.num_classes = 2;
    } else if (task == "regression") {
        labels.task = Task::regression;
        labels.num_classes = 1;
    } else {
        throw std::invalid_argument("unknown task '" + task + "'");
    }

    std::vector<FeatureSpec> features;
    for (const auto& jf : manifest.at("features")) {
        FeatureSpec f;
        f.name = jf.at("name").get<std::string>();
        const std::string kind = jf.at("kind").get<std::string>();
        if (kind == "categorical")
            f.kind = FeatureKind::categorical;
        else if (kind == "numeric")
            f.kind = FeatureKind::numeric;
        else
            throw std::invalid_argument("feature '" + f.name + "': unknown kind '" + kind + "'");
        if (jf.contains("constraints")) {
            for (const auto& c : jf.at("constraints")) {
                const std::string s = c.get<std::string>();
                if (s == "integer")
                    f.integer = true;
                else if (s == "positive")
                    f.positive = true;
                else if (s == "negative")
                    f.negative = true;
                else if (s == "normalized")
                    f.normalized = true;
                else
                    throw std::invalid_argument("feature '" + f.name + "': unknown constraint '" +
                                                s + "'");
            }
        }
        f.immutable = jf.value("immutable", false);
        if (jf.contains("range")) {
            const auto& r = jf.at("range");
            f.declared_range = std::make_pair(r.at(0).get<double>(), r.at(1).get<double>());
        } else if (f.normalized) {
            f.declared_range = std::make_pair(0.0, 1.0);
        }
        if (jf.contains("categories"))
            f.categories = jf.at("categories").get<std::vector<std::string>>();
        if (jf.contains("missing_sentinel"))
            f.missing_sentinel = jf.at("missing_sentinel").get<std::string>();
        features.push_back(std::move(f));
    }
    return Schema(std::move(features), labels);
}

nlohmann::json Schema::to_json() const {
    nlohmann::json out;
    out["task"] =
        labels_.task == Task::binary_classification ? "binary_classification" : "regression";
    out["features"] = nlohmann::json::array();
    for (const auto& f : features_) {
        nlohmann::json jf;
        jf["name"] = f.name;
        jf["kind"] = f.is_categorical() ? "categorical" : "numeric";
        auto constraints = nlohmann::json::array();
        if (f.integer) constraints.push_back("integer");
        if (f.positive) constraints.push_back("positive");
        if (f.negative) constraints.push_back("negative");
        if (f.normalized) constraints.push_back("normalized");
        jf["constraints"] = constraints;
        jf["immutable"] = f.immutable;
        if (f.declared_range)
            jf["range"] = {f.declared_range->first, f.declared_range->second};
        if (!f.categories.empty()) jf["categories"] = f.categories;
        if (f.missing_sentinel) jf["missing_sentinel"] = *f.missing_sentinel;
        out["features"].push_back(std::move(jf));
    }
    return out;
}

bool check_feasibility(std::span<const double> x, std::span<const double> x_star,
                       const Schema& schema) {
    if (x.size() != x_star.size() || x.size() != schema.dimension())
        throw std::invalid_argument("check_feasibility: length mismatch");
    for (std::size_t i : schema.immutable_set())
        if (x[i] != x_star[i]) return false;
    return true;
}

Dataset::Dataset(std::size_t n_features, std::vector<double> values, std::vector<double> labels)
    : n_features_(n_features), values_(std::move(values)), labels_(std::move(labels)) {
    if (n_features_ == 0) throw std::invalid_argument("dataset requires n_features >= 1");
    if (values_.size() != labels_.size() * n_features_)
        throw std::invalid_argument("dataset value/label size mismatch");
}

void Dataset::push_row(std::span<const double> x, double y) {
    if (n_features_ == 0)
        n_features_ = x.size();
    else if (x.size() != n_features_)
        throw std::invalid_argument("push_row: width mismatch");
    values_.insert(values_.end(), x.begin(), x.end());
    labels_.push_back(y);
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
    Dataset out;
    out.n_features_ = n_features_;
    out.values_.reserve(indices.size() * n_features_);
    out.labels_.reserve(indices.size());
    for (std::size_t i : indices) out.push_row(row(i), labels_[i]);
    return out;
}

void Dataset::validate_against(const Schema& schema) const {
    if (n_features_ != schema.dimension())
        throw std::invalid_argument("dataset width does not match schema");
    for (std::size_t r = 0; r < size(); ++r) {
        auto x = row(r);
        for (std::size_t i = 0; i < n_features_; ++i) {
            const auto& f = schema.feature(i);
            if (!std::isfinite(x[i]))
                throw std::invalid_argument("non-finite value in feature '" + f.name + "'");
            if (f.is_categorical()) {
                if (x[i] != std::floor(x[i]) || x[i] < 0.0 ||
                    x[i] >= static_cast<double>(f.cardinality()))
                    throw std::invalid_argument("invalid categorical code in feature '" + f.name +
                                                "'");
            }
        }
    }
}

}  // namespace tabattack
