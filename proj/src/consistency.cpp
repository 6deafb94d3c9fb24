#include "tabattack/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tabattack/embedding.hpp"

namespace tabattack {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double FeatureSupport::project(double v) const {
    switch (kind) {
        case Kind::finite_set: {
            // Nearest value, lower on ties.
            double best = values.front();
            double best_dist = std::abs(v - best);
            for (double cand : values) {
                const double dist = std::abs(v - cand);
                if (dist < best_dist) {
                    best = cand;
                    best_dist = dist;
                }
            }
            return best;
        }
        case Kind::grid: {
            long k = std::lround((v - offset) / step);
            k = std::clamp(k, k_min, k_max);
            return step * static_cast<double>(k) + offset;
        }
        case Kind::interval:
            return std::clamp(v, lo, hi);
    }
    return v;
}

bool FeatureSupport::contains(double v) const {
    switch (kind) {
        case Kind::finite_set:
            return std::find(values.begin(), values.end(), v) != values.end();
        case Kind::grid:
            return project(v) == v;
        case Kind::interval:
            return v >= lo && v <= hi;
    }
    return false;
}

nlohmann::json FeatureSupport::to_json() const {
    switch (kind) {
        case Kind::finite_set:
            return {{"kind", "finite_set"}, {"values", values}};
        case Kind::grid:
            return {{"kind", "grid"}, {"step", step}, {"offset", offset},
                    {"k_min", k_min},  {"k_max", k_max}};
        case Kind::interval:
            return {{"kind", "interval"}, {"lo", lo}, {"hi", hi}};
    }
    return {};
}

FeatureSupport FeatureSupport::from_json(const nlohmann::json& j) {
    FeatureSupport s;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "finite_set") {
        s.kind = Kind::finite_set;
        s.values = j.at("values").get<std::vector<double>>();
    } else if (kind == "grid") {
        s.kind = Kind::grid;
        s.step = j.at("step").get<double>();
        s.offset = j.at("offset").get<double>();
        s.k_min = j.at("k_min").get<long>();
        s.k_max = j.at("k_max").get<long>();
    } else {
        s.kind = Kind::interval;
        s.lo = j.at("lo").get<double>();
        s.hi = j.at("hi").get<double>();
    }
    return s;
}

Supports Supports::fit(const Dataset& train, const Schema& schema,
                       const Preprocessor* preprocessor) {
    if (train.size() == 0) throw std::invalid_argument("fit_supports: empty training set");
    Supports out;
    for (std::size_t f = 0; f < schema.dimension(); ++f) {
        const FeatureSpec& spec = schema.feature(f);
        FeatureSupport s;
        double min_v = train.row(0)[f], max_v = train.row(0)[f];
        for (std::size_t r = 0; r < train.size(); ++r) {
            const double v = train.row(r)[f];
            min_v = std::min(min_v, v);
            max_v = std::max(max_v, v);
        }
        if (spec.is_categorical()) {
            s.kind = FeatureSupport::Kind::finite_set;
            std::vector<bool> seen(spec.cardinality(), false);
            for (std::size_t r = 0; r < train.size(); ++r)
                seen[static_cast<std::size_t>(std::llround(train.row(r)[f]))] = true;
            for (std::size_t c = 0; c < seen.size(); ++c)
                if (seen[c]) s.values.push_back(static_cast<double>(c));
        } else if (spec.integer) {
            s.kind = FeatureSupport::Kind::grid;
            const Scaler* scaler = preprocessor ? preprocessor->scaler_for(spec.name) : nullptr;
            if (scaler) {
                // Materialize the scaled lattice with the scaler itself so
                // grid points are bit-identical to transform outputs;
                // offset + k*step reconstruction drifts by an ulp.
                s.kind = FeatureSupport::Kind::finite_set;
                const long k_min = std::lround(scaler->invert(min_v));
                const long k_max = std::lround(scaler->invert(max_v));
                for (long k = k_min; k <= k_max; ++k)
                    s.values.push_back(scaler->apply(static_cast<double>(k)));
            } else {
                s.step = 1.0;
                s.offset = 0.0;
                s.k_min = std::lround(min_v);
                s.k_max = std::lround(max_v);
            }
        } else {
            s.kind = FeatureSupport::Kind::interval;
            s.lo = min_v;
            s.hi = max_v;
            if (spec.normalized) {
                s.lo = std::max(s.lo, 0.0);
                s.hi = std::min(s.hi, 1.0);
            }
        }
        out.per_feature_.push_back(std::move(s));
    }
    return out;
}

std::vector<double> Supports::project(std::span<const double> x) const {
    if (x.size() != per_feature_.size())
        throw std::invalid_argument("project: width mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = per_feature_[i].project(x[i]);
    return out;
}

bool Supports::in_support(std::span<const double> x) const {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!per_feature_[i].contains(x[i])) return false;
    return true;
}

std::vector<std::size_t> Supports::violations(std::span<const double> x) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!per_feature_[i].contains(x[i])) out.push_back(i);
    return out;
}

nlohmann::json Supports::to_json() const {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& s : per_feature_) features.push_back(s.to_json());
    return {{"features", std::move(features)}};
}

Supports Supports::from_json(const nlohmann::json& j) {
    Supports out;
    for (const auto& js : j.at("features"))
        out.per_feature_.push_back(FeatureSupport::from_json(js));
    return out;
}

int ConsistencyEstimator::class_of(double y) const {
    if (bin_edges_.empty()) {
        const int c = static_cast<int>(std::llround(y));
        if (classes_.find(c) == classes_.end())
            throw std::invalid_argument("class unseen at fit time");
        return c;
    }
    const auto it = std::upper_bound(bin_edges_.begin(), bin_edges_.end(), y);
    return static_cast<int>(it - bin_edges_.begin());
}

double ConsistencyEstimator::mahalanobis2(const ClassStats& cs,
                                          std::span<const double> x) const {
    const std::size_t m = numeric_indices_.size();
    if (m == 0) return 0.0;
    std::vector<double> diff(m);
    for (std::size_t k = 0; k < m; ++k) {
        const double z = (x[numeric_indices_[k]] - numeric_mu_[k]) / numeric_sd_[k];
        diff[k] = z - cs.mean[k];
    }
    // Forward substitution: solve L w = diff, then |w|^2.
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = diff[i];
        for (std::size_t j = 0; j < i; ++j) acc -= cs.chol[i * m + j] * w[j];
        w[i] = acc / cs.chol[i * m + i];
    }
    double s = 0.0;
    for (double v : w) s += v * v;
    return s;
}

ConsistencyEstimator ConsistencyEstimator::fit(const Dataset& train, const Schema& schema,
                                               const ConsistencyConfig& cfg) {
    ConsistencyEstimator est;
    est.cfg_ = cfg;
    const std::size_t d = schema.dimension();
    est.is_categorical_.resize(d);
    for (std::size_t f = 0; f < d; ++f) {
        est.is_categorical_[f] = schema.feature(f).is_categorical();
        if (!est.is_categorical_[f]) est.numeric_indices_.push_back(f);
    }

    // Global standardization of the numeric block.
    const std::size_t m = est.numeric_indices_.size();
    est.numeric_mu_.assign(m, 0.0);
    est.numeric_sd_.assign(m, 1.0);
    for (std::size_t k = 0; k < m; ++k) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t r = 0; r < train.size(); ++r) {
            const double v = train.row(r)[est.numeric_indices_[k]];
            sum += v;
            sq += v * v;
        }
        const double n = static_cast<double>(train.size());
        est.numeric_mu_[k] = sum / n;
        const double var = sq / n - est.numeric_mu_[k] * est.numeric_mu_[k];
        est.numeric_sd_[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }

    // Class assignment: labels for classification, quantile bins otherwise.
    std::vector<int> cls(train.size());
    if (schema.labels().task == Task::binary_classification) {
        for (std::size_t r = 0; r < train.size(); ++r)
            cls[r] = train.label(r) > 0.5 ? 1 : 0;
    } else {
        auto binning = equal_frequency_bins(train.labels(), cfg.regression_bins);
        cls = binning.labels;
        est.bin_edges_ = binning.bin_edges;
    }

    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t r = 0; r < train.size(); ++r) members[cls[r]].push_back(r);

    for (const auto& [c, rows] : members) {
        ClassStats cs;
        cs.count = rows.size();
        const double n_y = static_cast<double>(rows.size());

        cs.cat_probs.resize(d);
        cs.hist_lo.assign(d, 0.0);
        cs.hist_hi.assign(d, 0.0);
        cs.hist_density.resize(d);
        for (std::size_t f = 0; f < d; ++f) {
            if (est.is_categorical_[f]) {
                const std::size_t k = schema.feature(f).cardinality();
                std::vector<double> counts(k, 0.0);
                for (std::size_t r : rows)
                    counts[static_cast<std::size_t>(std::llround(train.row(r)[f]))] += 1.0;
                double k_obs = 0.0;
                for (double cnt : counts)
                    if (cnt > 0.0) k_obs += 1.0;
                cs.cat_probs[f].resize(k);
                for (std::size_t code = 0; code < k; ++code) {
                    // Unobserved stays exactly 0; observed gets smoothing.
                    cs.cat_probs[f][code] =
                        counts[code] == 0.0
                            ? 0.0
                            : (counts[code] + cfg.laplace_alpha) /
                                  (n_y + cfg.laplace_alpha * k_obs);
                }
            } else {
                double lo = train.row(rows.front())[f], hi = lo;
                for (std::size_t r : rows) {
                    lo = std::min(lo, train.row(r)[f]);
                    hi = std::max(hi, train.row(r)[f]);
                }
                cs.hist_lo[f] = lo;
                cs.hist_hi[f] = hi;
                const std::size_t bins = cfg.histogram_bins;
                std::vector<double> counts(bins, 0.0);
                const double width = (hi - lo) / static_cast<double>(bins);
                for (std::size_t r : rows) {
                    std::size_t b = width > 0.0
                                        ? std::min(bins - 1,
                                                   static_cast<std::size_t>(
                                                       (train.row(r)[f] - lo) / width))
                                        : 0;
                    counts[b] += 1.0;
                }
                cs.hist_density[f].resize(bins);
                for (std::size_t b = 0; b < bins; ++b)
                    cs.hist_density[f][b] =
                        width > 0.0
                            ? (counts[b] + 1.0) / ((n_y + static_cast<double>(bins)) * width)
                            : 1.0;
            }
        }

        // Class-conditional mean/covariance in standardized numeric space.
        cs.mean.assign(m, 0.0);
        for (std::size_t r : rows)
            for (std::size_t k = 0; k < m; ++k)
                cs.mean[k] += (train.row(r)[est.numeric_indices_[k]] - est.numeric_mu_[k]) /
                              est.numeric_sd_[k];
        for (auto& v : cs.mean) v /= n_y;
        std::vector<double> cov(m * m, 0.0);
        for (std::size_t r : rows) {
            std::vector<double> z(m);
            for (std::size_t k = 0; k < m; ++k)
                z[k] = (train.row(r)[est.numeric_indices_[k]] - est.numeric_mu_[k]) /
                           est.numeric_sd_[k] -
                       cs.mean[k];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j <= i; ++j) cov[i * m + j] += z[i] * z[j];
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                cov[i * m + j] /= n_y;
                cov[j * m + i] = cov[i * m + j];
            }
            cov[i * m + i] += cfg.covariance_regularizer;
        }
        // Cholesky factorization.
        cs.chol.assign(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                double acc = cov[i * m + j];
                for (std::size_t k = 0; k < j; ++k)
                    acc -= cs.chol[i * m + k] * cs.chol[j * m + k];
                if (i == j) {
                    if (acc <= 0.0)
                        throw std::runtime_error(
                            "covariance not positive definite after regularization");
                    cs.chol[i * m + i] = std::sqrt(acc);
                } else {
                    cs.chol[i * m + j] = acc / cs.chol[j * m + j];
                }
            }
        }
        est.classes_[c] = std::move(cs);
    }

    // Percentile table of training log-scores per class.
    for (auto& [c, cs] : est.classes_) {
        std::vector<double> scores;
        for (std::size_t r : members[c])
            scores.push_back(est.log_score(train.row(r),
                                           est.bin_edges_.empty()
                                               ? static_cast<double>(c)
                                               : train.label(r)));
        std::sort(scores.begin(), scores.end());
        cs.log_score_percentiles = std::move(scores);
    }
    return est;
}

double ConsistencyEstimator::log_score(std::span<const double> x, double y) const {
    const auto it = classes_.find(class_of(y));
    if (it == classes_.end()) throw std::invalid_argument("class unseen at fit time");
    const ClassStats& cs = it->second;
    double log_p = 0.0;
    for (std::size_t f = 0; f < is_categorical_.size(); ++f) {
        if (is_categorical_[f]) {
            const auto code = static_cast<std::size_t>(std::llround(x[f]));
            const double p = code < cs.cat_probs[f].size() ? cs.cat_probs[f][code] : 0.0;
            if (p == 0.0) return kNegInf;
            log_p += std::log(p);
        } else {
            const double lo = cs.hist_lo[f], hi = cs.hist_hi[f];
            if (x[f] < lo || x[f] > hi) {
                if (hi > lo || x[f] != lo) return kNegInf;
            }
            if (hi > lo) {
                const double width = (hi - lo) / static_cast<double>(cfg_.histogram_bins);
                const std::size_t b = std::min(cfg_.histogram_bins - 1,
                                               static_cast<std::size_t>((x[f] - lo) / width));
                log_p += std::log(cs.hist_density[f][b]);
            }
        }
    }
    return log_p - cfg_.penalty_weight * mahalanobis2(cs, x);
}

double ConsistencyEstimator::score(std::span<const double> x, double y) const {
    const double ls = log_score(x, y);
    return ls == kNegInf ? 0.0 : std::exp(ls);
}

double ConsistencyEstimator::log_epsilon(double y) const {
    const auto it = classes_.find(class_of(y));
    if (it == classes_.end()) throw std::invalid_argument("class unseen at fit time");
    const auto& sorted = it->second.log_score_percentiles;
    if (sorted.empty()) return kNegInf;
    const double pos = cfg_.epsilon_percentile / 100.0 *
                       static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - std::floor(pos);
    const double a = sorted[lo], b = sorted[hi];
    if (a == kNegInf || b == kNegInf) return kNegInf;
    return a * (1.0 - frac) + b * frac;
}

double ConsistencyEstimator::epsilon(double y) const {
    const double le = log_epsilon(y);
    return le == kNegInf ? 0.0 : std::exp(le);
}

nlohmann::json ConsistencyEstimator::to_json() const {
    nlohmann::json j;
    j["config"] = {{"penalty_weight", cfg_.penalty_weight},
                   {"epsilon_percentile", cfg_.epsilon_percentile},
                   {"histogram_bins", cfg_.histogram_bins},
                   {"covariance_regularizer", cfg_.covariance_regularizer},
                   {"laplace_alpha", cfg_.laplace_alpha},
                   {"regression_bins", cfg_.regression_bins}};
    j["is_categorical"] = std::vector<int>(is_categorical_.begin(), is_categorical_.end());
    j["numeric_indices"] = numeric_indices_;
    j["numeric_mu"] = numeric_mu_;
    j["numeric_sd"] = numeric_sd_;
    j["bin_edges"] = bin_edges_;
    j["classes"] = nlohmann::json::array();
    for (const auto& [c, cs] : classes_) {
        j["classes"].push_back({{"class", c},
                                {"count", cs.count},
                                {"cat_probs", cs.cat_probs},
                                {"hist_lo", cs.hist_lo},
                                {"hist_hi", cs.hist_hi},
                                {"hist_density", cs.hist_density},
                                {"mean", cs.mean},
                                {"chol", cs.chol},
                                {"log_score_percentiles", cs.log_score_percentiles}});
    }
    return j;
}

ConsistencyEstimator ConsistencyEstimator::from_json(const nlohmann::json& j) {
    ConsistencyEstimator est;
    const auto& jc = j.at("config");
    est.cfg_.penalty_weight = jc.at("penalty_weight").get<double>();
    est.cfg_.epsilon_percentile = jc.at("epsilon_percentile").get<double>();
    est.cfg_.histogram_bins = jc.at("histogram_bins").get<std::size_t>();
    est.cfg_.covariance_regularizer = jc.at("covariance_regularizer").get<double>();
    est.cfg_.laplace_alpha = jc.at("laplace_alpha").get<double>();
    est.cfg_.regression_bins = jc.at("regression_bins").get<std::size_t>();
    for (int b : j.at("is_categorical").get<std::vector<int>>())
        est.is_categorical_.push_back(b != 0);
    est.numeric_indices_ = j.at("numeric_indices").get<std::vector<std::size_t>>();
    est.numeric_mu_ = j.at("numeric_mu").get<std::vector<double>>();
    est.numeric_sd_ = j.at("numeric_sd").get<std::vector<double>>();
    est.bin_edges_ = j.at("bin_edges").get<std::vector<double>>();
    for (const auto& js : j.at("classes")) {
        ClassStats cs;
        cs.count = js.at("count").get<std::size_t>();
        cs.cat_probs = js.at("cat_probs").get<std::vector<std::vector<double>>>();
        cs.hist_lo = js.at("hist_lo").get<std::vector<double>>();
        cs.hist_hi = js.at("hist_hi").get<std::vector<double>>();
        cs.hist_density = js.at("hist_density").get<std::vector<std::vector<double>>>();
        cs.mean = js.at("mean").get<std::vector<double>>();
        cs.chol = js.at("chol").get<std::vector<double>>();
        cs.log_score_percentiles =
            js.at("log_score_percentiles").get<std::vector<double>>();
        est.classes_[js.at("class").get<int>()] = std::move(cs);
    }
    return est;
}

ValidityReport validity_check(std::span<const double> x, std::span<const double> x_star,
                              double y, const ConsistencyEstimator& estimator,
                              const Supports& supports, const Schema& schema) {
    ValidityReport report;
    report.feasible = check_feasibility(x, x_star, schema);
    report.support_violations = supports.violations(x_star);
    report.consistency_score = estimator.score(x_star, y);
    report.epsilon = estimator.epsilon(y);
    report.consistent = estimator.check(x_star, y);
    report.valid = report.feasible && report.consistent;
    return report;
}

}  // namespace tabattack
