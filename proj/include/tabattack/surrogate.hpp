#pragma once

#include <cstdint>
#include <span>

#include <json.hpp>

#include "tabattack/embedding.hpp"
#include "tabattack/net.hpp"
#include "tabattack/schema.hpp"

namespace tabattack {

struct SolverConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer{OptimizerKind::adam, 0.001, 0.9, 0.999, 1e-8};
    std::size_t early_stop_patience = 10;  // 0 disables early stopping
    std::uint64_t seed = 0;
};

/// Single dense layer on top of the frozen embedding: one neuron,
/// sigmoid for classification, identity for regression. Embedding
/// coordinates are standardized first — triplet-trained embeddings can
/// concentrate in a narrow cone, and the head needs unit-scale inputs to
/// converge.
struct TaskSolver {
    Network graph;
    LossKind loss = LossKind::bce;
    std::vector<double> input_mu, input_sd;  // empty = identity

    std::vector<double> standardize(std::span<const double> e) const;
    /// Maps dL/d(standardized) back to dL/d(embedding).
    std::vector<double> unstandardize_grad(std::span<const double> g) const;

    nlohmann::json to_json() const;
    static TaskSolver from_json(const nlohmann::json& j);
};

/// M = C o f. The embedding is frozen; predict and input_gradient are
/// pure and safe for concurrent use.
struct SurrogateModel {
    EmbeddingModel embedding;
    TaskSolver solver;
    Task task = Task::binary_classification;

    double predict_score(std::span<const double> x) const;
    /// Classification label under the 0.5 threshold.
    int predict_label(std::span<const double> x) const;

    /// Gradient of the task loss with respect to the input coordinates,
    /// flowing through solver and embedding. Immutable coordinates are
    /// still computed; masking is the attack engine's concern.
    std::vector<double> input_gradient(std::span<const double> x, double y) const;

    nlohmann::json to_json() const;
    static SurrogateModel from_json(const nlohmann::json& j);
};

TaskSolver train_solver(const EmbeddingModel& embedding, const Dataset& train,
                        const Dataset* validation, Task task, const SolverConfig& cfg);

}  // namespace tabattack
