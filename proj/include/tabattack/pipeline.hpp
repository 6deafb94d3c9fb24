#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabattack/attack.hpp"
#include "tabattack/consistency.hpp"
#include "tabattack/embedding.hpp"
#include "tabattack/eval.hpp"
#include "tabattack/preprocess.hpp"
#include "tabattack/surrogate.hpp"
#include "tabattack/trees.hpp"

namespace tabattack {

/// Full-pipeline configuration; every artifact records its hash and the
/// stage-derived seed. TABATTACK_SEED overrides the config seed.
struct RunConfig {
    std::string out_dir = "out";
    std::string data_csv;     // empty when the synth stage provides data
    std::string schema_path;  // ditto
    bool do_synth = true;

    SynthSpec synth;
    PreprocessConfig preprocess;
    SplitSpec split;
    // Run-level training defaults; the library-default lr 0.001 stalls on the
    // synthetic reference task (angular collapse), 0.1 escapes it.
    TripletConfig triplet{.optimizer = {OptimizerKind::adagrad, 0.1, 0.9, 0.999, 1e-8}};
    std::size_t embedding_dim = 8;
    SolverConfig solver;
    TreeHyperparams trees;
    std::vector<TreeKind> targets{TreeKind::decision_tree, TreeKind::random_forest,
                                  TreeKind::gbm};
    AttackConfig attack;
    ConsistencyConfig consistency;
    bool write_traces = false;
    std::uint64_t seed = 0;
    int jobs = 0;  // 0 = default

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);  // applies TABATTACK_SEED
    std::string config_hash() const;
    std::uint64_t stage_seed(const std::string& stage) const;
};

// Stage entry points; each reads its declared inputs from `cfg.out_dir`
// and writes its artifacts there.
void stage_synth(const RunConfig& cfg);
void stage_preprocess(const RunConfig& cfg);
void stage_train_embedding(const RunConfig& cfg);
void stage_train_surrogate(const RunConfig& cfg);
void stage_train_targets(const RunConfig& cfg);
/// Base gradient-mode attack plus one importance-adjusted run per target.
void stage_attack(const RunConfig& cfg);
void stage_report(const RunConfig& cfg);

/// All stages in dependency order. Returns 0 on success.
int run(const RunConfig& cfg);

// Shared artifact helpers.
void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);
nlohmann::json read_json(const std::string& path);
void write_json_artifact(const std::string& path, nlohmann::json j, const RunConfig& cfg,
                         const std::string& stage);

Dataset read_dataset_csv(const std::string& path, const Schema& schema);
void write_dataset_csv(const std::string& path, const Dataset& data, const Schema& schema,
                       const std::string& meta_comment);

struct AttackArtifacts {
    std::vector<AttackResult> results;
    std::vector<ValidityReport> validity;
};

/// Runs one attack pass over the attack set; mode "gradient" or the
/// name of a target for importance-adjusted selection.
AttackArtifacts run_attack_pass(const SurrogateModel& surrogate, const TreeModel* target,
                                const Dataset& attack_set, const AttackConfig& cfg,
                                const Supports& supports, const Schema& schema,
                                const ConsistencyEstimator& estimator);

void write_results_csv(const std::string& dir, const AttackArtifacts& artifacts,
                       const Schema& schema, const std::string& meta_comment,
                       bool write_traces);
AttackArtifacts read_results_csv(const std::string& dir, const Schema& schema);

}  // namespace tabattack
