#include "tabattack/preprocess.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

namespace tabattack {

namespace {

double parse_number(const std::string& cell, const std::string& feature) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
        throw std::runtime_error("non-numeric content '" + cell + "' in numeric column '" +
                                 feature + "'");
    return v;
}

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool is_missing(const std::string& cell, const FeatureSpec& spec) {
    if (cell.empty()) return true;
    return spec.missing_sentinel && cell == *spec.missing_sentinel;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

double Scaler::apply(double v) const {
    if (clamped) v = std::clamp(v, clamp_lo, clamp_hi);
    if (kind == ScalerKind::minmax) {
        if (hi == lo) return 0.0;
        return (v - lo) / (hi - lo);
    }
    return (v - mu) / sigma;
}

double Scaler::invert(double v) const {
    if (kind == ScalerKind::minmax) {
        if (hi == lo) return lo;
        return lo + v * (hi - lo);
    }
    return mu + v * sigma;
}

double pearson(std::span<const double> a, std::span<const double> b,
               std::span<const std::uint8_t> present_a,
               std::span<const std::uint8_t> present_b) {
    double sum_a = 0, sum_b = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!present_a[i] || !present_b[i]) continue;
        sum_a += a[i];
        sum_b += b[i];
        ++n;
    }
    if (n < 2) return 0.0;
    const double mean_a = sum_a / static_cast<double>(n);
    const double mean_b = sum_b / static_cast<double>(n);
    double cov = 0, var_a = 0, var_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!present_a[i] || !present_b[i]) continue;
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) return 0.0;
    return cov / std::sqrt(var_a * var_b);
}

Preprocessor Preprocessor::fit(const RawTable& raw, const Schema& schema,
                               const PreprocessConfig& config) {
    Preprocessor p;
    p.source_schema_ = schema;
    p.config_ = config;

    const std::size_t n = raw.n_rows();
    if (n == 0) throw std::runtime_error("cannot fit on an empty table");

    // Map schema features onto raw columns.
    std::vector<std::size_t> col_of(schema.dimension());
    for (std::size_t f = 0; f < schema.dimension(); ++f)
        col_of[f] = raw.column_index(schema.feature(f).name);

    // Missing-rate drop.
    std::vector<bool> alive(schema.dimension(), true);
    for (std::size_t f = 0; f < schema.dimension(); ++f) {
        std::size_t missing = 0;
        for (const auto& row : raw.rows)
            if (is_missing(row[col_of[f]], schema.feature(f))) ++missing;
        if (static_cast<double>(missing) / static_cast<double>(n) >
            config.missing_drop_threshold) {
            alive[f] = false;
            p.dropped_.push_back({schema.feature(f).name, "missing>threshold"});
        }
    }

    // Correlation drop over surviving numeric columns, pairwise on observed pairs.
    std::vector<std::size_t> numeric_alive;
    for (std::size_t f = 0; f < schema.dimension(); ++f)
        if (alive[f] && !schema.feature(f).is_categorical()) numeric_alive.push_back(f);
    if (numeric_alive.size() >= 2) {
        std::vector<std::vector<double>> vals(numeric_alive.size(), std::vector<double>(n, 0.0));
        std::vector<std::vector<std::uint8_t>> present(numeric_alive.size(),
                                                       std::vector<std::uint8_t>(n, 0));
        for (std::size_t k = 0; k < numeric_alive.size(); ++k) {
            const std::size_t f = numeric_alive[k];
            for (std::size_t r = 0; r < n; ++r) {
                const auto& cell = raw.rows[r][col_of[f]];
                if (is_missing(cell, schema.feature(f))) continue;
                vals[k][r] = parse_number(cell, schema.feature(f).name);
                present[k][r] = 1;
            }
        }
        UnionFind uf(numeric_alive.size());
        for (std::size_t i = 0; i < numeric_alive.size(); ++i)
            for (std::size_t j = i + 1; j < numeric_alive.size(); ++j)
                if (std::abs(pearson(vals[i], vals[j], present[i], present[j])) >
                    config.correlation_threshold)
                    uf.unite(i, j);
        std::map<std::size_t, std::vector<std::size_t>> groups;
        for (std::size_t k = 0; k < numeric_alive.size(); ++k)
            groups[uf.find(k)].push_back(k);
        for (auto& [root, members] : groups) {
            if (members.size() < 2) continue;
            // Seeded representative, invariant to input column order: sort the
            // group's names and derive the pick from (seed, name-set hash).
            std::vector<std::string> names;
            for (std::size_t k : members) names.push_back(schema.feature(numeric_alive[k]).name);
            std::sort(names.begin(), names.end());
            std::uint64_t h = config.seed;
            for (const auto& nm : names)
                h = h * 1099511628211ULL + std::hash<std::string>{}(nm);
            std::mt19937_64 rng(h);
            const std::size_t keep =
                std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng);
            for (std::size_t k : members) {
                const std::string& nm = schema.feature(numeric_alive[k]).name;
                if (nm == names[keep]) continue;
                alive[numeric_alive[k]] = false;
                p.dropped_.push_back({nm, "correlated"});
            }
        }
    }

    std::vector<FeatureSpec> surviving;
    for (std::size_t f = 0; f < schema.dimension(); ++f) {
        if (!alive[f]) continue;
        p.survivor_cols_.push_back(f);
        surviving.push_back(schema.feature(f));
    }
    if (surviving.empty()) throw std::runtime_error("all features dropped during fit");
    p.processed_schema_ = Schema(std::move(surviving), schema.labels());

    // Imputation + scalers per survivor.
    for (std::size_t s = 0; s < p.survivor_cols_.size(); ++s) {
        const std::size_t f = p.survivor_cols_[s];
        const FeatureSpec& spec = schema.feature(f);
        Imputation imp;
        auto it = config.imputation_overrides.find(spec.name);
        if (spec.is_categorical()) {
            imp.kind = ImputationKind::mode;
            std::map<std::string, std::size_t> counts;
            for (const auto& row : raw.rows) {
                const auto& cell = row[col_of[f]];
                if (!is_missing(cell, spec)) ++counts[cell];
            }
            // Tie-break: schema category order.
            std::size_t best = 0;
            imp.mode_label = spec.categories.empty() ? "" : spec.categories.front();
            for (const auto& label : spec.categories) {
                auto c = counts.find(label);
                if (c != counts.end() && c->second > best) {
                    best = c->second;
                    imp.mode_label = label;
                }
            }
            p.imputations_.push_back(imp);
            p.scalers_.push_back(std::nullopt);
            continue;
        }
        std::vector<double> observed;
        observed.reserve(n);
        for (const auto& row : raw.rows) {
            const auto& cell = row[col_of[f]];
            if (!is_missing(cell, spec)) observed.push_back(parse_number(cell, spec.name));
        }
        if (observed.empty())
            throw std::runtime_error("feature '" + spec.name + "' has no observed values");
        const double mean =
            std::accumulate(observed.begin(), observed.end(), 0.0) /
            static_cast<double>(observed.size());
        const double min_obs = *std::min_element(observed.begin(), observed.end());
        imp.kind = (it != config.imputation_overrides.end()) ? it->second : ImputationKind::mean;
        if (imp.kind == ImputationKind::sentinel)
            imp.value = min_obs - 1.0;  // outside the legitimate range
        else
            imp.value = mean;
        p.imputations_.push_back(imp);

        std::vector<double> imputed = observed;
        const std::size_t n_missing = n - observed.size();
        for (std::size_t k = 0; k < n_missing; ++k) imputed.push_back(imp.value);

        Scaler sc;
        auto sit = config.scaler_overrides.find(spec.name);
        sc.kind = (sit != config.scaler_overrides.end()) ? sit->second : config.default_scaler;
        if (config.winsorize && !spec.integer) {
            std::vector<double> sorted = imputed;
            std::sort(sorted.begin(), sorted.end());
            sc.clamp_lo = quantile_sorted(sorted, config.winsor_lo);
            sc.clamp_hi = quantile_sorted(sorted, config.winsor_hi);
            sc.clamped = true;
            for (auto& v : imputed) v = std::clamp(v, sc.clamp_lo, sc.clamp_hi);
        }
        if (sc.kind == ScalerKind::minmax) {
            sc.lo = *std::min_element(imputed.begin(), imputed.end());
            sc.hi = *std::max_element(imputed.begin(), imputed.end());
        } else {
            double mu = std::accumulate(imputed.begin(), imputed.end(), 0.0) /
                        static_cast<double>(imputed.size());
            double var = 0.0;
            for (double v : imputed) var += (v - mu) * (v - mu);
            var /= static_cast<double>(imputed.size());
            sc.mu = mu;
            sc.sigma = std::sqrt(var);
            if (sc.sigma <= 0.0)
                throw std::runtime_error("feature '" + spec.name + "' has zero variance");
        }
        p.scalers_.push_back(sc);
    }

    // Fingerprint of the table the pipeline was fitted on.
    std::uint64_t h = 1469598103934665603ULL;
    h = h * 1099511628211ULL + n;
    h = h * 1099511628211ULL + raw.n_cols();
    for (const auto& name : raw.header) h = h * 1099511628211ULL + std::hash<std::string>{}(name);
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    p.fitted_on_ = buf;
    return p;
}

const Scaler* Preprocessor::scaler_for(const std::string& name) const {
    for (std::size_t s = 0; s < survivor_cols_.size(); ++s)
        if (processed_schema_.feature(s).name == name && scalers_[s])
            return &*scalers_[s];
    return nullptr;
}

double Preprocessor::encode_cell(std::size_t s, const std::string& cell) const {
    const FeatureSpec& spec = processed_schema_.feature(s);
    const Imputation& imp = imputations_[s];
    if (spec.is_categorical()) {
        const std::string& label = is_missing(cell, spec) ? imp.mode_label : cell;
        auto it = std::find(spec.categories.begin(), spec.categories.end(), label);
        if (it == spec.categories.end()) {
            if (config_.unseen_policy == UnseenCategoryPolicy::error)
                throw std::runtime_error("unseen category '" + label + "' in feature '" +
                                         spec.name + "'");
            it = std::find(spec.categories.begin(), spec.categories.end(), imp.mode_label);
        }
        return static_cast<double>(it - spec.categories.begin());
    }
    const double v = is_missing(cell, spec) ? imp.value : parse_number(cell, spec.name);
    return scalers_[s]->apply(v);
}

Dataset Preprocessor::transform(const RawTable& raw) const {
    const std::size_t label_col = raw.column_index(config_.label_column);
    std::vector<std::size_t> cols(survivor_cols_.size());
    for (std::size_t s = 0; s < survivor_cols_.size(); ++s)
        cols[s] = raw.column_index(source_schema_.feature(survivor_cols_[s]).name);

    Dataset out;
    std::vector<double> x(survivor_cols_.size());
    for (const auto& row : raw.rows) {
        for (std::size_t s = 0; s < survivor_cols_.size(); ++s)
            x[s] = encode_cell(s, row[cols[s]]);
        double y = parse_number(row[label_col], config_.label_column);
        if (source_schema_.labels().task == Task::binary_classification &&
            y != 0.0 && y != 1.0)
            throw std::runtime_error("binary label must be 0 or 1, got " + row[label_col]);
        out.push_row(x, y);
    }
    out.validate_against(processed_schema_);
    return out;
}

std::vector<std::string> Preprocessor::inverse_transform(std::span<const double> sample) const {
    if (sample.size() != processed_schema_.dimension())
        throw std::invalid_argument("inverse_transform: width mismatch");
    std::vector<std::string> out(sample.size());
    for (std::size_t s = 0; s < sample.size(); ++s) {
        const FeatureSpec& spec = processed_schema_.feature(s);
        if (spec.is_categorical()) {
            const auto code = static_cast<long long>(std::llround(sample[s]));
            if (sample[s] != std::floor(sample[s]) || code < 0 ||
                code >= static_cast<long long>(spec.cardinality()))
                throw std::runtime_error("categorical code out of range in feature '" +
                                         spec.name + "'");
            out[s] = spec.categories[static_cast<std::size_t>(code)];
        } else {
            double raw = scalers_[s]->invert(sample[s]);
            if (spec.integer) raw = std::round(raw);
            out[s] = format_number(raw);
        }
    }
    return out;
}

std::vector<double> Preprocessor::transform_record(const std::vector<std::string>& record) const {
    if (record.size() != processed_schema_.dimension())
        throw std::invalid_argument("transform_record: width mismatch");
    std::vector<double> out(record.size());
    for (std::size_t s = 0; s < record.size(); ++s) out[s] = encode_cell(s, record[s]);
    return out;
}

nlohmann::json Preprocessor::to_json() const {
    nlohmann::json j;
    j["source_schema"] = source_schema_.to_json();
    j["label_column"] = config_.label_column;
    j["unseen_policy"] =
        config_.unseen_policy == UnseenCategoryPolicy::error ? "error" : "map_to_mode";
    j["fitted_on"] = fitted_on_;
    j["dropped"] = nlohmann::json::array();
    for (const auto& d : dropped_) j["dropped"].push_back({{"name", d.name}, {"reason", d.reason}});
    j["survivors"] = nlohmann::json::array();
    for (std::size_t s = 0; s < survivor_cols_.size(); ++s) {
        nlohmann::json js;
        js["source_index"] = survivor_cols_[s];
        const Imputation& imp = imputations_[s];
        switch (imp.kind) {
            case ImputationKind::mode:
                js["imputation"] = {{"kind", "mode"}, {"label", imp.mode_label}};
                break;
            case ImputationKind::mean:
                js["imputation"] = {{"kind", "mean"}, {"value", imp.value}};
                break;
            case ImputationKind::sentinel:
                js["imputation"] = {{"kind", "sentinel"}, {"value", imp.value}};
                break;
        }
        if (scalers_[s]) {
            const Scaler& sc = *scalers_[s];
            js["scaler"] = {{"kind", sc.kind == ScalerKind::minmax ? "minmax" : "standardize"},
                            {"lo", sc.lo},
                            {"hi", sc.hi},
                            {"mu", sc.mu},
                            {"sigma", sc.sigma},
                            {"clamped", sc.clamped},
                            {"clamp_lo", sc.clamp_lo},
                            {"clamp_hi", sc.clamp_hi}};
        }
        j["survivors"].push_back(std::move(js));
    }
    return j;
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j) {
    Preprocessor p;
    p.source_schema_ = Schema::parse(j.at("source_schema"));
    p.config_.label_column = j.at("label_column").get<std::string>();
    p.config_.unseen_policy = j.at("unseen_policy").get<std::string>() == "error"
                                  ? UnseenCategoryPolicy::error
                                  : UnseenCategoryPolicy::map_to_mode;
    p.fitted_on_ = j.at("fitted_on").get<std::string>();
    for (const auto& d : j.at("dropped"))
        p.dropped_.push_back({d.at("name").get<std::string>(), d.at("reason").get<std::string>()});
    std::vector<FeatureSpec> surviving;
    for (const auto& js : j.at("survivors")) {
        const std::size_t src = js.at("source_index").get<std::size_t>();
        p.survivor_cols_.push_back(src);
        surviving.push_back(p.source_schema_.feature(src));
        Imputation imp;
        const auto& ji = js.at("imputation");
        const std::string kind = ji.at("kind").get<std::string>();
        if (kind == "mode") {
            imp.kind = ImputationKind::mode;
            imp.mode_label = ji.at("label").get<std::string>();
        } else {
            imp.kind = kind == "mean" ? ImputationKind::mean : ImputationKind::sentinel;
            imp.value = ji.at("value").get<double>();
        }
        p.imputations_.push_back(imp);
        if (js.contains("scaler")) {
            const auto& jsc = js.at("scaler");
            Scaler sc;
            sc.kind = jsc.at("kind").get<std::string>() == "minmax" ? ScalerKind::minmax
                                                                    : ScalerKind::standardize;
            sc.lo = jsc.at("lo").get<double>();
            sc.hi = jsc.at("hi").get<double>();
            sc.mu = jsc.at("mu").get<double>();
            sc.sigma = jsc.at("sigma").get<double>();
            sc.clamped = jsc.at("clamped").get<bool>();
            sc.clamp_lo = jsc.at("clamp_lo").get<double>();
            sc.clamp_hi = jsc.at("clamp_hi").get<double>();
            p.scalers_.push_back(sc);
        } else {
            p.scalers_.push_back(std::nullopt);
        }
    }
    p.processed_schema_ = Schema(std::move(surviving), p.source_schema_.labels());
    return p;
}

SplitResult split(const Dataset& data, const Schema& schema, const SplitSpec& spec) {
    if (spec.train_fraction + spec.validation_fraction != 1.0)
        throw std::invalid_argument("train and validation fractions must sum to 1");
    if (data.size() <= spec.attack_set_size)
        throw std::invalid_argument("dataset too small for the requested attack set");

    std::vector<std::size_t> indices(data.size());
    std::iota(indices.begin(), indices.end(), 0);
    std::mt19937_64 rng(spec.seed);
    std::shuffle(indices.begin(), indices.end(), rng);

    SplitResult out;
    out.attack_set.assign(indices.begin(),
                          indices.begin() + static_cast<std::ptrdiff_t>(spec.attack_set_size));
    std::vector<std::size_t> remainder(
        indices.begin() + static_cast<std::ptrdiff_t>(spec.attack_set_size), indices.end());

    const bool stratify =
        spec.stratified && schema.labels().task == Task::binary_classification;
    const auto train_target = static_cast<std::size_t>(
        std::llround(spec.train_fraction * static_cast<double>(remainder.size())));
    if (!stratify) {
        out.train.assign(remainder.begin(),
                         remainder.begin() + static_cast<std::ptrdiff_t>(train_target));
        out.validation.assign(remainder.begin() + static_cast<std::ptrdiff_t>(train_target),
                              remainder.end());
        return out;
    }

    std::vector<std::size_t> pos, neg;
    for (std::size_t i : remainder) (data.label(i) > 0.5 ? pos : neg).push_back(i);
    // Largest-remainder allocation so the totals land exactly on target.
    const double exact_pos = spec.train_fraction * static_cast<double>(pos.size());
    auto take_pos = static_cast<std::size_t>(std::floor(exact_pos));
    auto take_neg = static_cast<std::size_t>(std::floor(
        spec.train_fraction * static_cast<double>(neg.size())));
    while (take_pos + take_neg < train_target) {
        if (take_pos < pos.size() &&
            (exact_pos - std::floor(exact_pos) >= 0.5 || take_neg >= neg.size()))
            ++take_pos;
        else
            ++take_neg;
    }
    for (std::size_t k = 0; k < pos.size(); ++k)
        (k < take_pos ? out.train : out.validation).push_back(pos[k]);
    for (std::size_t k = 0; k < neg.size(); ++k)
        (k < take_neg ? out.train : out.validation).push_back(neg[k]);
    return out;
}

}  // namespace tabattack
