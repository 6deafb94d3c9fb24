#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace tabattack {

enum class Activation { identity, relu, sigmoid, softmax };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& s);

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weights;  // row-major, out x in
    std::vector<double> bias;     // out
    Activation act = Activation::identity;
};

struct LayerGrads {
    std::vector<double> weights;
    std::vector<double> bias;
};
using Gradients = std::vector<LayerGrads>;

void accumulate(Gradients& into, const Gradients& from);
void scale(Gradients& g, double s);

/// Chain of dense layers, 64-bit floats throughout. Deterministic under
/// seed. Frozen networks are concurrent-read safe.
class Network {
public:
    Network() = default;
    static Network make(const std::vector<std::size_t>& dims,
                        const std::vector<Activation>& acts, std::uint64_t seed);

    std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
    std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }
    std::size_t param_count() const;

    std::vector<double> forward(std::span<const double> x) const;

    struct Trace {
        std::vector<double> input;
        std::vector<std::vector<double>> post;  // per-layer post-activation
        const std::vector<double>& output() const { return post.back(); }
    };
    Trace trace(std::span<const double> x) const;

    /// Backpropagates dL/d(output) through the trace. When
    /// `dout_is_preactivation` is set the final activation is treated as
    /// fused into the loss (sigmoid+BCE, softmax+CE). `grads` may be null
    /// when only the input gradient is needed.
    std::vector<double> backward(const Trace& t, std::span<const double> dout,
                                 bool dout_is_preactivation, Gradients* grads) const;

    Gradients zero_grads() const;

    nlohmann::json to_json() const;
    static Network from_json(const nlohmann::json& j);
    std::uint64_t checksum() const;

private:
    std::vector<DenseLayer> layers_;
    std::uint64_t seed_ = 0;
};

enum class LossKind { mse, bce, softmax_ce };

double loss_value(LossKind kind, std::span<const double> pred, std::span<const double> target);

/// Gradient of the loss; `pre` reports whether the result is with respect
/// to the final pre-activation (fused) or the prediction itself.
std::vector<double> loss_gradient(LossKind kind, std::span<const double> pred,
                                  std::span<const double> target, bool& pre);

enum class OptimizerKind { adam, adagrad };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Optimizer {
public:
    Optimizer(const Network& net, OptimizerConfig cfg);
    /// Applies one update; a non-finite gradient skips the step and
    /// returns false.
    bool apply(Network& net, const Gradients& grads);
    long step() const { return step_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    Gradients m_;
    Gradients v_;
    long step_ = 0;
};

}  // namespace tabattack
