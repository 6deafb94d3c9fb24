// Compares the serial reference path (1 thread) against the OpenMP path
// on the training and attack kernels, and checks the outputs match.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "tabattack/attack.hpp"
#include "tabattack/eval.hpp"
#include "tabattack/parallel.hpp"
#include "tabattack/pipeline.hpp"
#include "tabattack/preprocess.hpp"
#include "tabattack/trees.hpp"

using namespace tabattack;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Fixture {
    Schema schema;
    Dataset train, attack_set;
    SurrogateModel surrogate;
    Supports supports;
    ConsistencyEstimator estimator;
    AttackConfig attack_cfg;
};

Fixture make_fixture() {
    SynthSpec spec = SynthSpec::reference(Task::binary_classification, 7);
    spec.n_samples = 4000;
    const SynthData data = synth_generate(spec);
    const Schema schema = Schema::parse(data.schema_manifest);

    PreprocessConfig pc;
    const Preprocessor prep = Preprocessor::fit(data.table, schema, pc);
    const Dataset all = prep.transform(data.table);

    SplitSpec sp;
    sp.attack_set_size = 100;
    sp.seed = 7;
    const SplitResult parts = split(all, prep.processed_schema(), sp);

    Fixture fx;
    fx.schema = prep.processed_schema();
    fx.train = all.subset(parts.train);
    fx.attack_set = all.subset(parts.attack_set);
    fx.supports = Supports::fit(fx.train, fx.schema, &prep);
    fx.estimator = ConsistencyEstimator::fit(fx.train, fx.schema, ConsistencyConfig{});

    TripletConfig tc;
    tc.epochs = 3;
    tc.seed = 7;
    fx.surrogate.task = Task::binary_classification;
    fx.surrogate.embedding = train_embedding(fx.train, fx.schema, tc, 4);
    SolverConfig sc;
    sc.epochs = 10;
    sc.seed = 7;
    fx.surrogate.solver =
        train_solver(fx.surrogate.embedding, fx.train, nullptr, fx.surrogate.task, sc);
    return fx;
}

template <typename F>
double timed(const char* name, int threads, F&& body) {
    set_max_threads(threads);
    const auto t0 = clock_type::now();
    body();
    const double dt = seconds_since(t0);
    std::printf("%-28s %d thread(s): %8.3fs\n", name, max_threads(), dt);
    return dt;
}

bool same_forest(const TreeModel& a, const TreeModel& b) {
    return a.to_json() == b.to_json();
}

bool same_results(const AttackArtifacts& a, const AttackArtifacts& b) {
    if (a.results.size() != b.results.size()) return false;
    for (std::size_t i = 0; i < a.results.size(); ++i) {
        if (a.results[i].x_star != b.results[i].x_star) return false;
        if (a.results[i].selected != b.results[i].selected) return false;
        if (a.results[i].succeeded != b.results[i].succeeded) return false;
    }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    const int threads = argc > 1 ? std::stoi(argv[1]) : 0;
    std::printf("building fixture...\n");
    set_max_threads(1);
    const Fixture fx = make_fixture();

    TreeHyperparams hp;
    hp.n_trees = 40;
    hp.max_depth = 6;

    TreeModel forest_serial, forest_parallel;
    timed("random forest (serial)", 1, [&] {
        forest_serial = train_tree_model(TreeKind::random_forest, fx.train, fx.schema, hp, 7);
    });
    timed("random forest (parallel)", threads, [&] {
        forest_parallel =
            train_tree_model(TreeKind::random_forest, fx.train, fx.schema, hp, 7);
    });

    AttackArtifacts attacks_serial, attacks_parallel;
    timed("attack pass (serial)", 1, [&] {
        attacks_serial = run_attack_pass(fx.surrogate, nullptr, fx.attack_set, fx.attack_cfg,
                                         fx.supports, fx.schema, fx.estimator);
    });
    timed("attack pass (parallel)", threads, [&] {
        attacks_parallel = run_attack_pass(fx.surrogate, nullptr, fx.attack_set,
                                           fx.attack_cfg, fx.supports, fx.schema,
                                           fx.estimator);
    });

    const bool forest_ok = same_forest(forest_serial, forest_parallel);
    const bool attack_ok = same_results(attacks_serial, attacks_parallel);
    std::printf("forest outputs identical: %s\n", forest_ok ? "yes" : "NO");
    std::printf("attack outputs identical: %s\n", attack_ok ? "yes" : "NO");
    return forest_ok && attack_ok ? 0 : 1;
}
