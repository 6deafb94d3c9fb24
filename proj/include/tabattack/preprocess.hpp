#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabattack/csv.hpp"
#include "tabattack/schema.hpp"

namespace tabattack {

enum class ScalerKind { minmax, standardize };
enum class ImputationKind { mode, mean, sentinel };
enum class UnseenCategoryPolicy { error, map_to_mode };

struct PreprocessConfig {
    std::string label_column = "target";
    double missing_drop_threshold = 0.75;
    double correlation_threshold = 0.95;
    ScalerKind default_scaler = ScalerKind::minmax;
    std::map<std::string, ScalerKind> scaler_overrides;
    std::map<std::string, ImputationKind> imputation_overrides;
    UnseenCategoryPolicy unseen_policy = UnseenCategoryPolicy::error;
    bool winsorize = false;
    double winsor_lo = 0.005;
    double winsor_hi = 0.995;
    std::uint64_t seed = 0;
};

struct DroppedFeature {
    std::string name;
    std::string reason;  // "missing>threshold" | "correlated"
};

struct Imputation {
    ImputationKind kind = ImputationKind::mean;
    double value = 0.0;         // mean or sentinel (numeric)
    std::string mode_label;     // categorical mode
};

struct Scaler {
    ScalerKind kind = ScalerKind::minmax;
    double lo = 0.0, hi = 1.0;  // minmax
    double mu = 0.0, sigma = 1.0;
    double clamp_lo = 0.0, clamp_hi = 0.0;
    bool clamped = false;  // winsorization bounds active

    double apply(double v) const;
    double invert(double v) const;
};

/// Fitted cleaning/imputation/encoding/scaling pipeline with exact inverses.
/// Immutable once fitted; transform is pure.
class Preprocessor {
public:
    static Preprocessor fit(const RawTable& raw, const Schema& schema,
                            const PreprocessConfig& config);

    Dataset transform(const RawTable& raw) const;
    /// Renders one preprocessed sample back into raw-space strings
    /// (schema order of surviving features).
    std::vector<std::string> inverse_transform(std::span<const double> sample) const;
    /// Forward-transforms a single already-clean raw record (surviving
    /// features, schema order); used for round-trip checks.
    std::vector<double> transform_record(const std::vector<std::string>& record) const;

    const Schema& processed_schema() const { return processed_schema_; }
    const std::vector<DroppedFeature>& dropped() const { return dropped_; }
    const Scaler* scaler_for(const std::string& name) const;

    nlohmann::json to_json() const;
    static Preprocessor from_json(const nlohmann::json& j);

private:
    Schema source_schema_;
    Schema processed_schema_;
    PreprocessConfig config_;
    std::vector<DroppedFeature> dropped_;
    std::vector<std::size_t> survivor_cols_;        // indices into source schema
    std::vector<Imputation> imputations_;           // per survivor
    std::vector<std::optional<Scaler>> scalers_;    // per survivor, numeric only
    std::string fitted_on_;                         // dataset fingerprint

    double encode_cell(std::size_t survivor, const std::string& cell) const;
};

struct SplitSpec {
    double train_fraction = 0.80;
    double validation_fraction = 0.20;
    std::size_t attack_set_size = 500;
    bool stratified = true;  // classification only
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> attack_set;
};

/// Attack set drawn first, then the train/validation split of the remainder.
/// Deterministic given the seed.
SplitResult split(const Dataset& data, const Schema& schema, const SplitSpec& spec);

/// Two-pass Pearson correlation over rows where both entries are present.
double pearson(std::span<const double> a, std::span<const double> b,
               std::span<const std::uint8_t> present_a, std::span<const std::uint8_t> present_b);

}  // namespace tabattack
