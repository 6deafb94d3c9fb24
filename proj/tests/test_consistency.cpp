#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "tabattack/consistency.hpp"

using namespace tabattack;
using nlohmann::json;

namespace {

Schema mixed_schema() {
    json m{{"task", "binary_classification"},
           {"features",
            {json{{"name", "cat"}, {"kind", "categorical"}, {"categories", {"a", "b", "d"}}},
             json{{"name", "count"}, {"kind", "numeric"}, {"constraints", {"integer"}}},
             json{{"name", "pos"}, {"kind", "numeric"}, {"constraints", {"positive"}}},
             json{{"name", "unit"},
                  {"kind", "numeric"},
                  {"constraints", {"normalized"}}}}}};
    return Schema::parse(m);
}

// Fraction of per-class training log-scores strictly below `value`.
double percentile_of(const ConsistencyEstimator& est, const Dataset& train, double y,
                     double value) {
    std::size_t below = 0, total = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.label(i) != y) continue;
        below += est.log_score(train.row(i), y) < value;
        ++total;
    }
    return static_cast<double>(below) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("supports derived from observed data and declared constraints") {
    const Schema s = mixed_schema();
    Dataset train;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        train.push_row(std::vector<double>{double(rng() % 3), double(3 + rng() % 5),
                                           0.2 + std::uniform_real_distribution<double>(0, 1)(rng),
                                           std::uniform_real_distribution<double>(0, 1)(rng)},
                       double(i % 2));
    }
    const Supports sup = Supports::fit(train, s);

    SUBCASE("categorical support is the observed code set") {
        CHECK(sup.feature(0).kind == FeatureSupport::Kind::finite_set);
        CHECK(sup.feature(0).values == std::vector<double>{0.0, 1.0, 2.0});
    }
    SUBCASE("integer support is a grid over the observed range") {
        CHECK(sup.feature(1).kind == FeatureSupport::Kind::grid);
        CHECK(sup.feature(1).project(4.4) == 4.0);
        CHECK(sup.feature(1).project(100.0) == 7.0);  // clamped to observed max
    }
    SUBCASE("positive-constrained interval starts at the observed minimum") {
        CHECK(sup.feature(2).kind == FeatureSupport::Kind::interval);
        CHECK(sup.feature(2).lo >= 0.2);
        CHECK(sup.feature(2).contains(sup.feature(2).lo));
    }
    SUBCASE("normalized support stays inside the unit interval") {
        CHECK(sup.feature(3).lo >= 0.0);
        CHECK(sup.feature(3).hi <= 1.0);
    }
    SUBCASE("projection is idempotent and fixes in-support points") {
        std::mt19937_64 probe(2);
        for (int rep = 0; rep < 200; ++rep) {
            std::vector<double> x(4);
            for (auto& v : x) v = std::normal_distribution<double>(0.5, 2.0)(probe);
            const auto p1 = sup.project(x);
            CHECK(sup.project(p1) == p1);
            CHECK(sup.in_support(p1));
        }
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto row = train.row(i);
            const auto p = sup.project(row);
            CHECK(std::equal(row.begin(), row.end(), p.begin()));
        }
    }
    SUBCASE("json round-trip preserves projection behavior") {
        const Supports loaded = Supports::from_json(sup.to_json());
        std::vector<double> x{1.4, 4.6, -3.0, 2.0};
        CHECK(loaded.project(x) == sup.project(x));
    }
}

TEST_CASE("nearest-point projection on a finite set") {
    FeatureSupport f;
    f.kind = FeatureSupport::Kind::finite_set;
    f.values = {0.0, 1.0, 2.0};
    CHECK(f.project(1.4) == 1.0);
    CHECK(f.project(-5.0) == 0.0);
    CHECK(f.project(1.0) == 1.0);
    CHECK_FALSE(f.contains(0.5));
}

TEST_CASE("integer rounding on a grid") {
    FeatureSupport f;
    f.kind = FeatureSupport::Kind::grid;
    f.step = 1.0;
    f.offset = 0.0;
    f.k_min = 0;
    f.k_max = 5;
    CHECK(f.project(2.6) == 3.0);
    CHECK(f.project(9.0) == 5.0);
}

TEST_CASE("unobserved categorical code scores exactly zero") {
    json m{{"task", "binary_classification"},
           {"features",
            {json{{"name", "c"}, {"kind", "categorical"}, {"categories", {"a", "b", "d"}}},
             json{{"name", "x"}, {"kind", "numeric"}}}}};
    const Schema s = Schema::parse(m);
    Dataset train;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 300; ++i)
        // Code 2 never appears under either class.
        train.push_row(std::vector<double>{double(rng() % 2),
                                           std::uniform_real_distribution<double>(0, 1)(rng)},
                       double(i % 2));
    const ConsistencyEstimator est = ConsistencyEstimator::fit(train, s, {});
    CHECK(est.score(std::vector<double>{2.0, 0.5}, 1.0) == 0.0);
    CHECK_FALSE(est.is_consistent(0.0, est.epsilon(1.0)));
    CHECK(est.score(std::vector<double>{0.0, 0.5}, 1.0) > 0.0);
    CHECK_THROWS(est.score(std::vector<double>{0.0, 0.5}, 7.0));  // unseen class
}

TEST_CASE("class centroid scores above the 90th percentile") {
    json m{{"task", "binary_classification"},
           {"features",
            {json{{"name", "x"}, {"kind", "numeric"}},
             json{{"name", "y"}, {"kind", "numeric"}}}}};
    const Schema s = Schema::parse(m);
    Dataset train;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.1);
    for (int i = 0; i < 1000; ++i) {
        const double cls = i % 2;
        train.push_row(std::vector<double>{(cls ? 0.7 : 0.3) + g(rng),
                                           (cls ? 0.2 : 0.8) + g(rng)}, cls);
    }
    const ConsistencyEstimator est = ConsistencyEstimator::fit(train, s, {});
    double mx = 0, my = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.label(i) != 1.0) continue;
        mx += train.row(i)[0];
        my += train.row(i)[1];
        ++n;
    }
    const std::vector<double> centroid{mx / n, my / n};
    const double ls = est.log_score(centroid, 1.0);
    CHECK(percentile_of(est, train, 1.0, ls) > 0.90);
}

TEST_CASE("inverted monotone pair drops below the 5th percentile") {
    json m{{"task", "binary_classification"},
           {"features",
            {json{{"name", "lower"}, {"kind", "numeric"}},
             json{{"name", "upper"}, {"kind", "numeric"}}}}};
    const Schema s = Schema::parse(m);
    Dataset train;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 1500; ++i) {
        const double lo = std::uniform_real_distribution<double>(0.0, 0.4)(rng);
        const double hi = lo + 0.3 + std::normal_distribution<double>(0.0, 0.02)(rng);
        train.push_row(std::vector<double>{lo, hi}, double(i % 2));
    }
    const ConsistencyEstimator est = ConsistencyEstimator::fit(train, s, {});
    // Marginally plausible values in inverted order.
    const std::vector<double> inverted{0.39, 0.05};
    CHECK(percentile_of(est, train, 1.0, est.log_score(inverted, 1.0)) < 0.05);
    // A typical ordered pair stays well inside the distribution.
    const std::vector<double> ordered{0.2, 0.5};
    CHECK(percentile_of(est, train, 1.0, est.log_score(ordered, 1.0)) > 0.05);
}

TEST_CASE("swapping a categorical coordinate to a rarer value never raises the score") {
    json m{{"task", "binary_classification"},
           {"features",
            {json{{"name", "c"}, {"kind", "categorical"}, {"categories", {"a", "b"}}},
             json{{"name", "x"}, {"kind", "numeric"}}}}};
    const Schema s = Schema::parse(m);
    Dataset train;
    std::mt19937_64 rng(9);
    for (int i = 0; i < 500; ++i)
        train.push_row(std::vector<double>{rng() % 10 < 8 ? 0.0 : 1.0,
                                           std::uniform_real_distribution<double>(0, 1)(rng)},
                       double(i % 2));
    const ConsistencyEstimator est = ConsistencyEstimator::fit(train, s, {});
    for (int rep = 0; rep < 50; ++rep) {
        const double x = std::uniform_real_distribution<double>(0, 1)(rng);
        CHECK(est.score(std::vector<double>{0.0, x}, 1.0) >=
              est.score(std::vector<double>{1.0, x}, 1.0));
    }
}

TEST_CASE("estimator json round-trip preserves scores and epsilon") {
    const Schema s = mixed_schema();
    Dataset train;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 300; ++i)
        train.push_row(std::vector<double>{double(rng() % 3), double(rng() % 4),
                                           0.1 + std::uniform_real_distribution<double>(0, 1)(rng),
                                           std::uniform_real_distribution<double>(0, 1)(rng)},
                       double(i % 2));
    const ConsistencyEstimator est = ConsistencyEstimator::fit(train, s, {});
    const ConsistencyEstimator loaded = ConsistencyEstimator::from_json(est.to_json());
    CHECK(loaded.epsilon(0.0) == est.epsilon(0.0));
    CHECK(loaded.epsilon(1.0) == est.epsilon(1.0));
    for (std::size_t i = 0; i < 50; ++i)
        CHECK(loaded.log_score(train.row(i), train.label(i)) ==
              est.log_score(train.row(i), train.label(i)));
}

TEST_CASE("validity is the conjunction of feasibility and consistency") {
    json m{{"task", "binary_classification"},
           {"features",
            {json{{"name", "frozen"}, {"kind", "numeric"}, {"immutable", true}},
             json{{"name", "free"}, {"kind", "numeric"}}}}};
    const Schema s = Schema::parse(m);
    Dataset train;
    std::mt19937_64 rng(13);
    for (int i = 0; i < 400; ++i)
        train.push_row(std::vector<double>{std::uniform_real_distribution<double>(0, 1)(rng),
                                           std::uniform_real_distribution<double>(0, 1)(rng)},
                       double(i % 2));
    const ConsistencyEstimator est = ConsistencyEstimator::fit(train, s, {});
    const Supports sup = Supports::fit(train, s);

    const std::vector<double> x{0.5, 0.5};

    SUBCASE("identity perturbation is feasible") {
        const auto r = validity_check(x, x, 1.0, est, sup, s);
        CHECK(r.feasible);
        CHECK(r.support_violations.empty());
        CHECK(r.valid == (r.feasible && r.consistent));
    }
    SUBCASE("touching an immutable coordinate invalidates regardless of score") {
        std::vector<double> x_star = x;
        x_star[0] += 1e-9;
        const auto r = validity_check(x, x_star, 1.0, est, sup, s);
        CHECK_FALSE(r.feasible);
        CHECK_FALSE(r.valid);
    }
    SUBCASE("support violations are listed") {
        std::vector<double> x_star = x;
        x_star[1] = 50.0;  // far outside the observed interval
        const auto r = validity_check(x, x_star, 1.0, est, sup, s);
        CHECK(r.support_violations == std::vector<std::size_t>{1});
    }
}
