#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "tabattack/schema.hpp"

using namespace tabattack;
using nlohmann::json;

namespace {

json feature(const std::string& name, const std::string& kind, bool immutable = false) {
    json f{{"name", name}, {"kind", kind}, {"immutable", immutable}};
    if (kind == "categorical") f["categories"] = {"a", "b"};
    return f;
}

json manifest(std::size_t n_features, std::size_t n_categorical, std::size_t n_immutable) {
    json m{{"task", "binary_classification"}, {"features", json::array()}};
    for (std::size_t i = 0; i < n_features; ++i)
        m["features"].push_back(
            feature("f" + std::to_string(i), i < n_categorical ? "categorical" : "numeric",
                    i < n_immutable));
    return m;
}

}  // namespace

TEST_CASE("parse_schema counts features and immutables") {
    // Credit-dataset shape: 52 features, 21 categorical, 22 immutable.
    const Schema s = Schema::parse(manifest(52, 21, 22));
    CHECK(s.dimension() == 52);
    CHECK(s.immutable_set().size() == 22);
    CHECK(s.mutable_count() == 30);
}

TEST_CASE("parse_schema minimal single numeric feature") {
    const Schema s = Schema::parse(manifest(1, 0, 0));
    CHECK(s.dimension() == 1);
    CHECK(s.immutable_set().empty());
    CHECK(s.mutable_count() == 1);
}

TEST_CASE("mutable_count arithmetic on larger shapes") {
    CHECK(Schema::parse(manifest(126, 0, 81)).mutable_count() == 45);
    CHECK(Schema::parse(manifest(7, 2, 0)).mutable_count() == 7);
}

TEST_CASE("contradictory constraints rejected") {
    json m = manifest(1, 0, 0);
    m["features"][0]["constraints"] = {"positive", "negative"};
    CHECK_THROWS_AS(Schema::parse(m), std::invalid_argument);
}

TEST_CASE("duplicate names rejected") {
    json m = manifest(2, 0, 0);
    m["features"][1]["name"] = "f0";
    CHECK_THROWS_AS(Schema::parse(m), std::invalid_argument);
}

TEST_CASE("categorical with numeric constraint rejected") {
    json m = manifest(1, 1, 0);
    m["features"][0]["constraints"] = {"positive"};
    CHECK_THROWS_AS(Schema::parse(m), std::invalid_argument);
}

TEST_CASE("empty feature list rejected") {
    CHECK_THROWS_AS(Schema::parse(json{{"task", "binary_classification"},
                                       {"features", json::array()}}),
                    std::invalid_argument);
}

TEST_CASE("schema json round-trip") {
    json m = manifest(5, 2, 1);
    m["features"][3]["constraints"] = {"integer", "positive"};
    m["features"][4]["range"] = {-2.0, 7.5};
    const Schema s = Schema::parse(m);
    const Schema s2 = Schema::parse(s.to_json());
    CHECK(s2.to_json() == s.to_json());
}

TEST_CASE("check_feasibility reflexive and symmetric") {
    const Schema s = Schema::parse(manifest(4, 1, 2));
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> x(4), y(4);
        for (auto& v : x) v = u(rng);
        for (auto& v : y) v = u(rng);
        CHECK(check_feasibility(x, x, s));
        CHECK(check_feasibility(x, y, s) == check_feasibility(y, x, s));
    }
}

TEST_CASE("check_feasibility is exact, no tolerance") {
    const Schema s = Schema::parse(manifest(3, 0, 1));
    std::vector<double> x{0.5, 0.5, 0.5};
    std::vector<double> y = x;
    y[0] += 1e-12;  // immutable coordinate
    CHECK_FALSE(check_feasibility(x, y, s));
    y[0] = x[0];
    y[2] += 100.0;  // mutable coordinate, arbitrary change is fine
    CHECK(check_feasibility(x, y, s));
}

TEST_CASE("check_feasibility vacuous when no immutables") {
    const Schema s = Schema::parse(manifest(3, 0, 0));
    CHECK(check_feasibility(std::vector<double>{0, 0, 0}, std::vector<double>{9, 9, 9}, s));
}

TEST_CASE("check_feasibility length mismatch throws") {
    const Schema s = Schema::parse(manifest(3, 0, 0));
    CHECK_THROWS_AS(check_feasibility(std::vector<double>{0, 0}, std::vector<double>{0, 0}, s),
                    std::invalid_argument);
}

TEST_CASE("dataset validation catches bad categorical codes") {
    const Schema s = Schema::parse(manifest(2, 1, 0));
    Dataset ok;
    ok.push_row(std::vector<double>{1.0, 0.3}, 1.0);
    CHECK_NOTHROW(ok.validate_against(s));

    Dataset fractional;
    fractional.push_row(std::vector<double>{0.5, 0.3}, 1.0);
    CHECK_THROWS_AS(fractional.validate_against(s), std::invalid_argument);

    Dataset out_of_range;
    out_of_range.push_row(std::vector<double>{2.0, 0.3}, 1.0);
    CHECK_THROWS_AS(out_of_range.validate_against(s), std::invalid_argument);

    Dataset non_finite;
    non_finite.push_row(std::vector<double>{0.0, std::numeric_limits<double>::infinity()}, 1.0);
    CHECK_THROWS_AS(non_finite.validate_against(s), std::invalid_argument);
}

TEST_CASE("dataset subset preserves rows") {
    Dataset d;
    d.push_row(std::vector<double>{1, 2}, 0.0);
    d.push_row(std::vector<double>{3, 4}, 1.0);
    d.push_row(std::vector<double>{5, 6}, 0.0);
    const Dataset sub = d.subset({2, 0});
    CHECK(sub.size() == 2);
    CHECK(sub.row(0)[0] == 5);
    CHECK(sub.label(1) == 0.0);
}
