// tabattack: validity-preserving sparse adversarial examples for tabular
// models. Subcommands map 1:1 onto pipeline stages; `run` chains them all.
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tabattack/parallel.hpp"
#include "tabattack/pipeline.hpp"

using namespace tabattack;

namespace {

RunConfig load_config(const std::string& config_path, const std::string& out_dir,
                      std::uint64_t seed, bool seed_given, int jobs) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (config_path.empty())
        if (const char* env = std::getenv("TABATTACK_SEED"))
            cfg.seed = std::strtoull(env, nullptr, 10);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed_given) cfg.seed = seed;
    if (jobs >= 0) cfg.jobs = jobs;
    if (cfg.jobs > 0) set_max_threads(cfg.jobs);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"surrogate-embedding l0 attacks on tabular models"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_csv, schema_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int jobs = -1;
    bool monotone_pair = false, regression = false, write_traces = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "run configuration JSON");
        sub->add_option("-o,--out", out_dir, "artifact directory");
        sub->add_option("--seed", seed, "override the config seed")
            ->each([&](const std::string&) { seed_given = true; });
        sub->add_option("-j,--jobs", jobs, "thread cap (1 = serial reference)");
        return sub;
    };

    auto* synth = add_common(app.add_subcommand("synth", "generate synthetic data"));
    synth->add_flag("--monotone-pair", monotone_pair,
                    "append a constructed x_upper >= x_lower feature pair");
    synth->add_flag("--regression", regression, "regression task instead of binary");

    auto* preprocess =
        add_common(app.add_subcommand("preprocess", "clean, encode, scale, split"));
    preprocess->add_option("--data", data_csv, "raw csv (defaults to <out>/data.csv)");
    preprocess->add_option("--schema", schema_path, "schema manifest json");

    add_common(app.add_subcommand("train-embedding", "triplet-loss embedding"));
    add_common(app.add_subcommand("train-surrogate", "task solver on the frozen embedding"));
    add_common(app.add_subcommand("train-targets", "tree-based target models"));
    auto* attack = add_common(
        app.add_subcommand("attack", "base and importance-adjusted attack passes"));
    attack->add_flag("--traces", write_traces, "write per-sample iteration traces");
    add_common(app.add_subcommand("report", "summary/transfer/validity reports"));
    auto* runcmd = add_common(app.add_subcommand("run", "full pipeline"));
    runcmd->add_flag("--traces", write_traces, "write per-sample iteration traces");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path, out_dir, seed, seed_given, jobs);
        if (monotone_pair) cfg.synth.monotone_pair = true;
        if (regression) cfg.synth.task = Task::regression;
        if (write_traces) cfg.write_traces = true;
        if (!data_csv.empty()) {
            cfg.data_csv = data_csv;
            cfg.do_synth = false;
        }
        if (!schema_path.empty()) cfg.schema_path = schema_path;

        if (app.got_subcommand("run")) return run(cfg);
        if (app.got_subcommand("synth")) stage_synth(cfg);
        if (app.got_subcommand("preprocess")) stage_preprocess(cfg);
        if (app.got_subcommand("train-embedding")) stage_train_embedding(cfg);
        if (app.got_subcommand("train-surrogate")) stage_train_surrogate(cfg);
        if (app.got_subcommand("train-targets")) stage_train_targets(cfg);
        if (app.got_subcommand("attack")) stage_attack(cfg);
        if (app.got_subcommand("report")) stage_report(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
