#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tabattack/surrogate.hpp"
#include "tabattack/trees.hpp"

using namespace tabattack;

namespace {

Schema numeric_schema(std::size_t d, Task task = Task::binary_classification) {
    nlohmann::json m{{"task", task == Task::regression ? "regression" : "binary_classification"},
                     {"features", nlohmann::json::array()}};
    for (std::size_t i = 0; i < d; ++i)
        m["features"].push_back({{"name", "f" + std::to_string(i)}, {"kind", "numeric"}});
    return Schema::parse(m);
}

Dataset two_clusters(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset data;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = i % 2;
        std::vector<double> x(d);
        for (auto& v : x)
            v = std::normal_distribution<double>(y ? 0.7 : 0.3, 0.08)(rng);
        data.push_row(x, y);
    }
    return data;
}

SurrogateModel trained_surrogate(const Dataset& train, const Schema& schema,
                                 std::uint64_t seed) {
    TripletConfig tcfg;
    tcfg.epochs = 20;
    tcfg.optimizer.lr = 0.1;
    tcfg.seed = seed;
    SurrogateModel m;
    m.embedding = train_embedding(train, schema, tcfg, 4);
    SolverConfig scfg;
    scfg.epochs = 40;
    scfg.seed = seed;
    m.solver = train_solver(m.embedding, train, nullptr, Task::binary_classification, scfg);
    m.task = Task::binary_classification;
    return m;
}

}  // namespace

TEST_CASE("solver training leaves the embedding byte-identical") {
    const Schema schema = numeric_schema(4);
    const Dataset train = two_clusters(256, 4, 1);
    TripletConfig tcfg;
    tcfg.epochs = 5;
    tcfg.seed = 3;
    const EmbeddingModel embedding = train_embedding(train, schema, tcfg, 4);
    const std::string before = embedding.to_json().dump();
    SolverConfig scfg;
    scfg.epochs = 30;
    train_solver(embedding, train, nullptr, Task::binary_classification, scfg);
    CHECK(embedding.to_json().dump() == before);
}

TEST_CASE("separable clusters reach training AUC >= 0.95") {
    const Schema schema = numeric_schema(4);
    const Dataset train = two_clusters(400, 4, 7);
    const SurrogateModel m = trained_surrogate(train, schema, 7);
    std::vector<double> scores(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) scores[i] = m.predict_score(train.row(i));
    CHECK(auc_score(scores, train.labels()) >= 0.95);
}

TEST_CASE("prediction is compositional: solver over standardized embedding") {
    const Schema schema = numeric_schema(3);
    const Dataset train = two_clusters(128, 3, 11);
    const SurrogateModel m = trained_surrogate(train, schema, 11);
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 40; ++rep) {
        std::vector<double> x(3);
        for (auto& v : x) v = std::uniform_real_distribution<double>(0, 1)(rng);
        const double direct = m.predict_score(x);
        const double recomposed =
            m.solver.graph.forward(m.solver.standardize(m.embedding.embed(x)))[0];
        CHECK(direct == recomposed);
        CHECK(direct >= 0.0);
        CHECK(direct <= 1.0);
        CHECK(m.predict_score(x) == direct);  // deterministic
    }
}

TEST_CASE("training-set samples get the correct label on the separable task") {
    const Schema schema = numeric_schema(4);
    const Dataset train = two_clusters(300, 4, 23);
    const SurrogateModel m = trained_surrogate(train, schema, 23);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < train.size(); ++i)
        correct += m.predict_label(train.row(i)) == (train.label(i) > 0.5 ? 1 : 0);
    CHECK(static_cast<double>(correct) / static_cast<double>(train.size()) >= 0.95);
}

TEST_CASE("untrained solver stays near 0.5 on balanced data") {
    const Schema schema = numeric_schema(4);
    const Dataset train = two_clusters(200, 4, 2);
    TripletConfig tcfg;
    tcfg.epochs = 0;
    const EmbeddingModel embedding = train_embedding(train, schema, tcfg, 4);
    SolverConfig scfg;
    scfg.epochs = 0;
    const TaskSolver solver =
        train_solver(embedding, train, nullptr, Task::binary_classification, scfg);
    double mean = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i)
        mean += solver.graph.forward(solver.standardize(embedding.embed(train.row(i))))[0];
    mean /= static_cast<double>(train.size());
    CHECK(mean > 0.3);
    CHECK(mean < 0.7);
}

TEST_CASE("input gradient matches central finite differences") {
    const Schema schema = numeric_schema(3);
    const Dataset train = two_clusters(160, 3, 31);
    SurrogateModel m;
    // Smooth embedding net so finite differences are valid everywhere.
    m.embedding.graph =
        Network::make({3, 10, 4}, {Activation::sigmoid, Activation::identity}, 31);
    m.embedding.dim = 4;
    SolverConfig scfg;
    scfg.epochs = 20;
    m.solver = train_solver(m.embedding, train, nullptr, Task::binary_classification, scfg);
    m.task = Task::binary_classification;

    std::mt19937_64 rng(6);
    const double h = 1e-5;
    for (int rep = 0; rep < 15; ++rep) {
        std::vector<double> x(3);
        for (auto& v : x) v = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
        const double y = rep % 2;
        const auto grad = m.input_gradient(x, y);
        for (std::size_t i = 0; i < x.size(); ++i) {
            auto loss_at = [&](double xi) {
                std::vector<double> xp = x;
                xp[i] = xi;
                const std::vector<double> pred{m.predict_score(xp)}, target{y};
                return loss_value(LossKind::bce, pred, target);
            };
            const double fd = (loss_at(x[i] + h) - loss_at(x[i] - h)) / (2 * h);
            CHECK(std::abs(grad[i] - fd) /
                      std::max({std::abs(grad[i]), std::abs(fd), 1e-3}) < 1e-4);
        }
    }
}

TEST_CASE("standardize and unstandardize_grad are consistent") {
    TaskSolver s;
    s.input_mu = {1.0, -2.0, 0.5};
    s.input_sd = {2.0, 0.5, 1.0};
    const std::vector<double> e{3.0, -1.0, 0.5};
    const auto z = s.standardize(e);
    CHECK(z == std::vector<double>{1.0, 2.0, 0.0});
    // d(z_i)/d(e_i) = 1/sd_i, so pulling a gradient back multiplies by it.
    const auto g = s.unstandardize_grad(std::vector<double>{1.0, 1.0, 1.0});
    CHECK(g == std::vector<double>{0.5, 2.0, 1.0});

    TaskSolver identity;  // empty mu/sd means identity mapping
    CHECK(identity.standardize(e) == std::vector<double>(e.begin(), e.end()));
}

TEST_CASE("surrogate json round-trip preserves predictions") {
    const Schema schema = numeric_schema(3);
    const Dataset train = two_clusters(128, 3, 17);
    const SurrogateModel m = trained_surrogate(train, schema, 17);
    const SurrogateModel loaded = SurrogateModel::from_json(m.to_json());
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> x(3);
        for (auto& v : x) v = std::uniform_real_distribution<double>(0, 1)(rng);
        CHECK(loaded.predict_score(x) == m.predict_score(x));
    }
    nlohmann::json bad = m.to_json();
    bad["manifest_version"] = 99;
    CHECK_THROWS(SurrogateModel::from_json(bad));
}

TEST_CASE("non-finite input rejected") {
    const Schema schema = numeric_schema(3);
    const Dataset train = two_clusters(96, 3, 5);
    const SurrogateModel m = trained_surrogate(train, schema, 5);
    std::vector<double> x{0.5, std::numeric_limits<double>::quiet_NaN(), 0.5};
    CHECK_THROWS(m.predict_score(x));
}
