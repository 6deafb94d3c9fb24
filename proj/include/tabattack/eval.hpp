#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabattack/attack.hpp"
#include "tabattack/csv.hpp"
#include "tabattack/schema.hpp"
#include "tabattack/trees.hpp"

namespace tabattack {

/// Perturbation norms split by feature type. Counts use exact inequality
/// for categorical/integer coordinates and a 1e-9 tolerance for
/// continuous ones (projection makes the former exact).
struct PerturbationMetrics {
    std::size_t l0_categorical = 0;
    std::size_t l0_numeric = 0;
    std::size_t l0_total = 0;
    double pct_categorical = 0.0;
    double pct_numeric = 0.0;
    double pct_total = 0.0;
    double l1_numeric = 0.0;  // preprocessed units
};

PerturbationMetrics perturbation_metrics(std::span<const double> x,
                                         std::span<const double> x_star, const Schema& schema);

struct AttackSummary {
    std::size_t n_total = 0;
    std::size_t n_success = 0;
    double success_pct = 0.0;  // relative to the full attack set
    // Averages over successful results only; absent when none succeeded.
    std::optional<double> avg_l0_categorical, avg_pct_categorical;
    std::optional<double> avg_l1_numeric;
    std::optional<double> avg_l0_numeric, avg_pct_numeric;
    std::optional<double> avg_l0_total, avg_pct_total;
};

AttackSummary attack_summary(const std::vector<AttackResult>& results, const Schema& schema);

/// Fraction of surrogate-successful results whose perturbed sample also
/// meets the attack goal on the target model, in percent.
double transfer_rate(const std::vector<AttackResult>& results, const TreeModel& target,
                     double tau);

/// Integer-binned counts of total l0 over successful results.
std::map<std::size_t, std::size_t> l0_histogram(const std::vector<AttackResult>& results,
                                                const Schema& schema);

struct SynthFeature {
    std::string name;
    bool categorical = false;
    std::size_t cardinality = 0;  // categorical
    bool integer = false, positive = false, negative = false, normalized = false;
    bool immutable = false;
    double signal = 1.0;  // loading on the label-driving latent factor
};

/// Recipe for deterministic heterogeneous synthetic data with a low-rank
/// latent correlation structure and a learnable label signal.
struct SynthSpec {
    std::size_t n_samples = 12000;
    std::vector<SynthFeature> features;
    Task task = Task::binary_classification;
    double class_separation = 8.0;
    std::size_t latent_rank = 3;
    double noise_scale = 0.2;
    double missing_rate = 0.0;
    bool monotone_pair = false;  // appends a constructed x_j >= x_i pair
    std::uint64_t seed = 0;

    /// The reference layout: 8 categorical + 12 numeric features, 5
    /// immutable.
    static SynthSpec reference(Task task, std::uint64_t seed);

    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthData {
    RawTable table;                // includes the "target" label column
    nlohmann::json schema_manifest;
};

SynthData synth_generate(const SynthSpec& spec);

}  // namespace tabattack
