#include "tabattack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace tabattack {

namespace {
constexpr double kContinuousTol = 1e-9;

bool coordinate_changed(const FeatureSpec& spec, double delta) {
    if (spec.is_categorical() || spec.integer) return delta != 0.0;
    return std::abs(delta) > kContinuousTol;
}
}  // namespace

PerturbationMetrics perturbation_metrics(std::span<const double> x,
                                         std::span<const double> x_star,
                                         const Schema& schema) {
    if (x.size() != x_star.size() || x.size() != schema.dimension())
        throw std::invalid_argument("perturbation_metrics: length mismatch");
    PerturbationMetrics m;
    std::size_t n_categorical = 0, n_numeric = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const FeatureSpec& spec = schema.feature(i);
        const double delta = x_star[i] - x[i];
        if (spec.is_categorical()) {
            ++n_categorical;
            if (coordinate_changed(spec, delta)) ++m.l0_categorical;
        } else {
            ++n_numeric;
            if (coordinate_changed(spec, delta)) ++m.l0_numeric;
            m.l1_numeric += std::abs(delta);
        }
    }
    m.l0_total = m.l0_categorical + m.l0_numeric;
    if (n_categorical > 0)
        m.pct_categorical =
            static_cast<double>(m.l0_categorical) / static_cast<double>(n_categorical) * 100.0;
    if (n_numeric > 0)
        m.pct_numeric =
            static_cast<double>(m.l0_numeric) / static_cast<double>(n_numeric) * 100.0;
    m.pct_total = static_cast<double>(m.l0_total) / static_cast<double>(x.size()) * 100.0;
    return m;
}

AttackSummary attack_summary(const std::vector<AttackResult>& results, const Schema& schema) {
    if (results.empty()) throw std::invalid_argument("attack_summary: no results");
    AttackSummary s;
    s.n_total = results.size();
    double l0c = 0, pc = 0, l1 = 0, l0n = 0, pn = 0, l0t = 0, pt = 0;
    for (const auto& r : results) {
        if (!r.succeeded) continue;
        ++s.n_success;
        std::vector<double> x(r.x_star.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = r.x_star[i] - r.delta[i];
        const auto m = perturbation_metrics(x, r.x_star, schema);
        l0c += static_cast<double>(m.l0_categorical);
        pc += m.pct_categorical;
        l1 += m.l1_numeric;
        l0n += static_cast<double>(m.l0_numeric);
        pn += m.pct_numeric;
        l0t += static_cast<double>(m.l0_total);
        pt += m.pct_total;
    }
    s.success_pct = static_cast<double>(s.n_success) / static_cast<double>(s.n_total) * 100.0;
    if (s.n_success > 0) {
        const double n = static_cast<double>(s.n_success);
        s.avg_l0_categorical = l0c / n;
        s.avg_pct_categorical = pc / n;
        s.avg_l1_numeric = l1 / n;
        s.avg_l0_numeric = l0n / n;
        s.avg_pct_numeric = pn / n;
        s.avg_l0_total = l0t / n;
        s.avg_pct_total = pt / n;
    }
    return s;
}

double transfer_rate(const std::vector<AttackResult>& results, const TreeModel& target,
                     double tau) {
    std::size_t eligible = 0, transferred = 0;
    for (const auto& r : results) {
        if (!r.succeeded) continue;
        ++eligible;
        if (target.task == Task::binary_classification) {
            if (target.predict_label(r.x_star) != (r.label > 0.5 ? 1 : 0)) ++transferred;
        } else {
            if (std::abs(target.predict_score(r.x_star) - r.label) > tau) ++transferred;
        }
    }
    if (eligible == 0) throw std::invalid_argument("transfer_rate: no successful inputs");
    return static_cast<double>(transferred) / static_cast<double>(eligible) * 100.0;
}

std::map<std::size_t, std::size_t> l0_histogram(const std::vector<AttackResult>& results,
                                                const Schema& schema) {
    std::map<std::size_t, std::size_t> hist;
    for (const auto& r : results) {
        if (!r.succeeded) continue;
        std::vector<double> x(r.x_star.size());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = r.x_star[i] - r.delta[i];
        ++hist[perturbation_metrics(x, r.x_star, schema).l0_total];
    }
    return hist;
}

SynthSpec SynthSpec::reference(Task task, std::uint64_t seed) {
    SynthSpec spec;
    spec.task = task;
    spec.seed = seed;
    spec.n_samples = 12000;
    // 20 features: 8 categorical, 12 numeric, 5 immutable (mixed kinds).
    const std::size_t cards[8] = {2, 3, 4, 5, 2, 3, 6, 4};
    for (std::size_t i = 0; i < 8; ++i) {
        SynthFeature f;
        f.name = "cat_" + std::to_string(i);
        f.categorical = true;
        f.cardinality = cards[i];
        f.immutable = i < 2;  // 2 immutable categoricals
        f.signal = f.immutable ? 0.5 : 0.3;
        spec.features.push_back(f);
    }
    for (std::size_t i = 0; i < 12; ++i) {
        SynthFeature f;
        f.name = "num_" + std::to_string(i);
        f.integer = i % 4 == 0;
        f.positive = i % 4 == 1;
        f.negative = i % 4 == 2;
        f.normalized = i % 4 == 3;
        f.immutable = i < 3;  // 3 immutable numerics
        f.signal = f.immutable ? 0.8 : 1.2;
        spec.features.push_back(f);
    }
    return spec;
}

nlohmann::json SynthSpec::to_json() const {
    nlohmann::json jf = nlohmann::json::array();
    for (const auto& f : features) {
        jf.push_back({{"name", f.name},
                      {"categorical", f.categorical},
                      {"cardinality", f.cardinality},
                      {"integer", f.integer},
                      {"positive", f.positive},
                      {"negative", f.negative},
                      {"normalized", f.normalized},
                      {"immutable", f.immutable},
                      {"signal", f.signal}});
    }
    return {{"n_samples", n_samples},
            {"features", jf},
            {"task", task == Task::binary_classification ? "binary_classification"
                                                         : "regression"},
            {"class_separation", class_separation},
            {"latent_rank", latent_rank},
            {"noise_scale", noise_scale},
            {"missing_rate", missing_rate},
            {"monotone_pair", monotone_pair},
            {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.n_samples = j.value("n_samples", s.n_samples);
    if (j.contains("features")) {
        for (const auto& jf : j.at("features")) {
            SynthFeature f;
            f.name = jf.at("name").get<std::string>();
            f.categorical = jf.value("categorical", false);
            f.cardinality = jf.value("cardinality", std::size_t{0});
            f.integer = jf.value("integer", false);
            f.positive = jf.value("positive", false);
            f.negative = jf.value("negative", false);
            f.normalized = jf.value("normalized", false);
            f.immutable = jf.value("immutable", false);
            f.signal = jf.value("signal", 1.0);
            s.features.push_back(f);
        }
    }
    if (j.contains("task"))
        s.task = j.at("task").get<std::string>() == "regression" ? Task::regression
                                                                 : Task::binary_classification;
    s.class_separation = j.value("class_separation", s.class_separation);
    s.latent_rank = j.value("latent_rank", s.latent_rank);
    s.noise_scale = j.value("noise_scale", s.noise_scale);
    s.missing_rate = j.value("missing_rate", s.missing_rate);
    s.monotone_pair = j.value("monotone_pair", s.monotone_pair);
    s.seed = j.value("seed", s.seed);
    if (s.features.empty()) s.features = SynthSpec::reference(s.task, s.seed).features;
    return s;
}

SynthData synth_generate(const SynthSpec& spec) {
    if (spec.features.empty()) throw std::invalid_argument("synth spec has no features");
    for (const auto& f : spec.features) {
        if (f.categorical && f.cardinality < 2)
            throw std::invalid_argument("categorical cardinality must be >= 2");
        if (f.positive && f.negative)
            throw std::invalid_argument("contradictory synth constraints");
    }

    std::vector<SynthFeature> features = spec.features;
    std::size_t pair_lower = 0, pair_upper = 0;
    if (spec.monotone_pair) {
        SynthFeature lower, upper;
        lower.name = "pair_lower";
        upper.name = "pair_upper";
        upper.immutable = true;  // inverting the pair takes perturbing the lower
        pair_lower = features.size();
        pair_upper = features.size() + 1;
        features.push_back(lower);
        features.push_back(upper);
    }

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    const std::size_t r = spec.latent_rank;
    // The label rides the first latent factor; each feature's loading on it
    // is set by its signal coefficient, the rest stays random correlation
    // structure.
    std::vector<std::vector<double>> loadings(features.size(), std::vector<double>(r));
    for (std::size_t f = 0; f < features.size(); ++f) {
        const double sign = uniform(rng) < 0.5 ? -1.0 : 1.0;
        loadings[f][0] = features[f].signal * sign * (0.75 + 0.5 * uniform(rng));
        for (std::size_t k = 1; k < r; ++k) loadings[f][k] = 0.7 * normal(rng);
    }
    // Category cut points per categorical feature (standard-normal quantiles).
    std::vector<std::vector<double>> cuts(features.size());
    for (std::size_t f = 0; f < features.size(); ++f) {
        if (!features[f].categorical) continue;
        const std::size_t k = features[f].cardinality;
        for (std::size_t c = 1; c < k; ++c) {
            const double q = static_cast<double>(c) / static_cast<double>(k);
            // Inverse-normal approximation is unnecessary: cut in score
            // space via the logistic quantile, close enough for balance.
            cuts[f].push_back(std::log(q / (1.0 - q)) * 0.6);
        }
    }

    RawTable table;
    for (const auto& f : features) table.header.push_back(f.name);
    table.header.push_back("target");

    char buf[40];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.10g", v);
        return std::string(buf);
    };

    for (std::size_t row = 0; row < spec.n_samples; ++row) {
        std::vector<double> z(r);
        for (auto& v : z) v = normal(rng);

        std::vector<std::string> cells;
        cells.reserve(features.size() + 1);
        double pair_lower_value = 0.0;
        for (std::size_t f = 0; f < features.size(); ++f) {
            const SynthFeature& sf = features[f];
            if (spec.monotone_pair && f == pair_lower) {
                // Strongly tied to the label signal so the attack moves it.
                pair_lower_value = z[0] + 0.1 * spec.noise_scale * normal(rng);
                cells.push_back(fmt(pair_lower_value));
                continue;
            }
            if (spec.monotone_pair && f == pair_upper) {
                cells.push_back(fmt(pair_lower_value + 0.05 +
                                    0.05 * std::abs(normal(rng))));
                continue;
            }
            double u = 0.0;
            for (std::size_t k = 0; k < r; ++k) u += loadings[f][k] * z[k];
            u /= std::sqrt(static_cast<double>(r));
            u += spec.noise_scale * normal(rng);
            if (sf.categorical) {
                std::size_t code = 0;
                for (double cut : cuts[f])
                    if (u > cut) ++code;
                cells.push_back("c" + std::to_string(code));
            } else if (sf.integer) {
                cells.push_back(std::to_string(std::llround(u * 5.0 + 10.0)));
            } else if (sf.positive) {
                cells.push_back(fmt(std::exp(0.5 * u) * 5.0));
            } else if (sf.negative) {
                cells.push_back(fmt(-std::exp(0.5 * u) * 5.0));
            } else if (sf.normalized) {
                cells.push_back(fmt(1.0 / (1.0 + std::exp(-u))));
            } else {
                cells.push_back(fmt(u * 10.0 + 5.0));
            }
        }

        const double signal = z[0];
        if (spec.task == Task::binary_classification) {
            const double p = 1.0 / (1.0 + std::exp(-spec.class_separation * signal));
            cells.push_back(uniform(rng) < p ? "1" : "0");
        } else {
            cells.push_back(fmt(spec.class_separation * signal +
                                0.3 * spec.noise_scale * normal(rng)));
        }

        // Missing cells are injected after the label so it stays complete.
        if (spec.missing_rate > 0.0)
            for (std::size_t f = 0; f < features.size(); ++f)
                if (uniform(rng) < spec.missing_rate) cells[f].clear();

        table.rows.push_back(std::move(cells));
    }

    // Schema manifest.
    nlohmann::json manifest;
    manifest["task"] =
        spec.task == Task::binary_classification ? "binary_classification" : "regression";
    manifest["features"] = nlohmann::json::array();
    for (std::size_t f = 0; f < features.size(); ++f) {
        const SynthFeature& sf = features[f];
        nlohmann::json jf;
        jf["name"] = sf.name;
        jf["kind"] = sf.categorical ? "categorical" : "numeric";
        auto constraints = nlohmann::json::array();
        if (sf.integer) constraints.push_back("integer");
        if (sf.positive) constraints.push_back("positive");
        if (sf.negative) constraints.push_back("negative");
        if (sf.normalized) constraints.push_back("normalized");
        jf["constraints"] = constraints;
        jf["immutable"] = sf.immutable;
        if (sf.normalized) jf["range"] = {0.0, 1.0};
        if (sf.categorical) {
            auto cats = nlohmann::json::array();
            for (std::size_t c = 0; c < sf.cardinality; ++c)
                cats.push_back("c" + std::to_string(c));
            jf["categories"] = cats;
        }
        manifest["features"].push_back(std::move(jf));
    }
    return {std::move(table), std::move(manifest)};
}

}  // namespace tabattack
