#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "tabattack/net.hpp"
#include "tabattack/schema.hpp"

namespace tabattack {

/// 1 - cos(a, b), in [0, 2]. Throws on a zero-norm vector.
double cosine_distance(std::span<const double> a, std::span<const double> b);

struct BinningResult {
    std::vector<int> labels;        // per input, 0..effective_bins-1
    std::vector<double> bin_edges;  // strictly increasing interior edges
    std::size_t effective_bins = 0;
    bool reduced = false;  // requested bin count was degenerate
};

/// Quantile classes over a regression target. The first (n mod B) bins
/// hold one extra element.
BinningResult equal_frequency_bins(const std::vector<double>& targets, std::size_t bins);

struct TripletBatchStats {
    std::size_t anchors_used = 0;
    std::size_t anchors_skipped = 0;  // single-member classes
};

/// Batch-hard formulation under cosine distance: per anchor, the hardest
/// in-batch positive and negative. `grad_out`, when given, receives
/// dLoss/dEmbedding with the same shape as `embeddings`.
double batch_hard_triplet_loss(const std::vector<std::vector<double>>& embeddings,
                               const std::vector<int>& labels, double margin,
                               std::vector<std::vector<double>>* grad_out = nullptr,
                               bool soft_margin = false,
                               TripletBatchStats* stats = nullptr);

struct TripletConfig {
    double margin = 0.3;
    bool soft_margin = false;
    std::size_t classes_per_batch = 2;   // P
    std::size_t samples_per_class = 16;  // K; P*K is the mini-batch size
    std::size_t epochs = 50;
    std::size_t regression_bins = 10;
    OptimizerConfig optimizer{OptimizerKind::adagrad, 0.001, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 0;
};

/// Structure-preserving embedding f: R^d -> R^e, compared via cosine
/// distance. The map ends in L2 normalization so downstream consumers see
/// the angular structure the triplet loss shapes; training itself runs on
/// the raw network output (cosine distance is scale-invariant).
/// Immutable once trained.
struct EmbeddingModel {
    Network graph;
    std::size_t dim = 0;            // e
    std::vector<double> bin_edges;  // present for regression tasks

    /// graph.forward followed by L2 normalization (identity on a zero vector).
    std::vector<double> embed(std::span<const double> x) const;

    struct EmbedTrace {
        Network::Trace trace;
        std::vector<double> normalized;
        double norm = 0.0;
        const std::vector<double>& output() const { return normalized; }
    };
    EmbedTrace embed_trace(std::span<const double> x) const;
    /// Backpropagates dL/d(normalized embedding) to the input coordinates.
    std::vector<double> backward(const EmbedTrace& t, std::span<const double> d_norm,
                                 Gradients* grads = nullptr) const;

    nlohmann::json to_json() const;
    static EmbeddingModel from_json(const nlohmann::json& j);
};

EmbeddingModel train_embedding(const Dataset& train, const Schema& schema,
                               const TripletConfig& cfg, std::size_t embedding_dim);

}  // namespace tabattack
