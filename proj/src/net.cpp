#include "tabattack/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

namespace tabattack {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax: return "softmax";
    }
    return "identity";
}

Activation activation_from_name(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "softmax") return Activation::softmax;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

void accumulate(Gradients& into, const Gradients& from) {
    for (std::size_t l = 0; l < into.size(); ++l) {
        for (std::size_t i = 0; i < into[l].weights.size(); ++i)
            into[l].weights[i] += from[l].weights[i];
        for (std::size_t i = 0; i < into[l].bias.size(); ++i)
            into[l].bias[i] += from[l].bias[i];
    }
}

void scale(Gradients& g, double s) {
    for (auto& lg : g) {
        for (auto& w : lg.weights) w *= s;
        for (auto& b : lg.bias) b *= s;
    }
}

namespace {

void apply_activation(Activation act, std::vector<double>& v) {
    switch (act) {
        case Activation::identity:
            break;
        case Activation::relu:
            for (auto& x : v) x = x > 0.0 ? x : 0.0;
            break;
        case Activation::sigmoid:
            for (auto& x : v) x = 1.0 / (1.0 + std::exp(-x));
            break;
        case Activation::softmax: {
            const double m = *std::max_element(v.begin(), v.end());
            double sum = 0.0;
            for (auto& x : v) {
                x = std::exp(x - m);
                sum += x;
            }
            for (auto& x : v) x /= sum;
            break;
        }
    }
}

// dL/dpost -> dL/dpre, given post-activation values.
std::vector<double> backprop_activation(Activation act, const std::vector<double>& post,
                                        std::span<const double> dpost) {
    std::vector<double> dpre(dpost.begin(), dpost.end());
    switch (act) {
        case Activation::identity:
            break;
        case Activation::relu:
            for (std::size_t i = 0; i < dpre.size(); ++i)
                if (post[i] <= 0.0) dpre[i] = 0.0;
            break;
        case Activation::sigmoid:
            for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= post[i] * (1.0 - post[i]);
            break;
        case Activation::softmax: {
            double dot = 0.0;
            for (std::size_t i = 0; i < dpre.size(); ++i) dot += dpost[i] * post[i];
            for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] = post[i] * (dpost[i] - dot);
            break;
        }
    }
    return dpre;
}

}  // namespace

Network Network::make(const std::vector<std::size_t>& dims,
                      const std::vector<Activation>& acts, std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("network needs at least one layer");
    if (acts.size() != dims.size() - 1)
        throw std::invalid_argument("one activation per layer required");
    for (std::size_t l = 0; l + 1 < acts.size(); ++l)
        if (acts[l] == Activation::softmax)
            throw std::invalid_argument("softmax only allowed as the final activation");

    Network net;
    net.seed_ = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.in = dims[l];
        layer.out = dims[l + 1];
        layer.act = acts[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        std::uniform_real_distribution<double> u(-bound, bound);
        layer.weights.resize(layer.in * layer.out);
        for (auto& w : layer.weights) w = u(rng);
        layer.bias.assign(layer.out, 0.0);
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
}

Network::Trace Network::trace(std::span<const double> x) const {
    if (x.size() != input_dim()) throw std::invalid_argument("forward: input width mismatch");
    Trace t;
    t.input.assign(x.begin(), x.end());
    const std::vector<double>* cur = &t.input;
    for (const auto& layer : layers_) {
        std::vector<double> z(layer.out);
        for (std::size_t o = 0; o < layer.out; ++o) {
            double acc = layer.bias[o];
            const double* w = layer.weights.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * (*cur)[i];
            z[o] = acc;
        }
        apply_activation(layer.act, z);
        t.post.push_back(std::move(z));
        cur = &t.post.back();
    }
    return t;
}

std::vector<double> Network::forward(std::span<const double> x) const {
    return trace(x).post.back();
}

std::vector<double> Network::backward(const Trace& t, std::span<const double> dout,
                                      bool dout_is_preactivation, Gradients* grads) const {
    if (dout.size() != output_dim()) throw std::invalid_argument("backward: dout width mismatch");
    std::vector<double> delta;  // dL/dpre of the current layer
    if (dout_is_preactivation)
        delta.assign(dout.begin(), dout.end());
    else
        delta = backprop_activation(layers_.back().act, t.post.back(), dout);

    for (std::size_t li = layers_.size(); li-- > 0;) {
        const DenseLayer& layer = layers_[li];
        const std::vector<double>& input = li == 0 ? t.input : t.post[li - 1];
        if (grads) {
            LayerGrads& lg = (*grads)[li];
            for (std::size_t o = 0; o < layer.out; ++o) {
                double* gw = lg.weights.data() + o * layer.in;
                for (std::size_t i = 0; i < layer.in; ++i) gw[i] += delta[o] * input[i];
                lg.bias[o] += delta[o];
            }
        }
        std::vector<double> dinput(layer.in, 0.0);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* w = layer.weights.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) dinput[i] += w[i] * delta[o];
        }
        if (li == 0) return dinput;
        delta = backprop_activation(layers_[li - 1].act, t.post[li - 1], dinput);
    }
    return {};
}

Gradients Network::zero_grads() const {
    Gradients g(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        g[l].weights.assign(layers_[l].weights.size(), 0.0);
        g[l].bias.assign(layers_[l].bias.size(), 0.0);
    }
    return g;
}

nlohmann::json Network::to_json() const {
    nlohmann::json j;
    j["seed"] = seed_;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers_) {
        j["layers"].push_back({{"in", l.in},
                               {"out", l.out},
                               {"activation", activation_name(l.act)},
                               {"weights", l.weights},
                               {"bias", l.bias}});
    }
    return j;
}

Network Network::from_json(const nlohmann::json& j) {
    Network net;
    net.seed_ = j.at("seed").get<std::uint64_t>();
    for (const auto& jl : j.at("layers")) {
        DenseLayer l;
        l.in = jl.at("in").get<std::size_t>();
        l.out = jl.at("out").get<std::size_t>();
        l.act = activation_from_name(jl.at("activation").get<std::string>());
        l.weights = jl.at("weights").get<std::vector<double>>();
        l.bias = jl.at("bias").get<std::vector<double>>();
        if (l.weights.size() != l.in * l.out || l.bias.size() != l.out)
            throw std::invalid_argument("inconsistent layer shapes in artifact");
        net.layers_.push_back(std::move(l));
    }
    for (std::size_t li = 1; li < net.layers_.size(); ++li)
        if (net.layers_[li].in != net.layers_[li - 1].out)
            throw std::invalid_argument("layer chain shape mismatch in artifact");
    return net;
}

std::uint64_t Network::checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        h = (h ^ bits) * 1099511628211ULL;
    };
    for (const auto& l : layers_) {
        for (double w : l.weights) mix(w);
        for (double b : l.bias) mix(b);
    }
    return h;
}

double loss_value(LossKind kind, std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw std::invalid_argument("loss: size mismatch");
    switch (kind) {
        case LossKind::mse: {
            double s = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double d = pred[i] - target[i];
                s += d * d;
            }
            return s / static_cast<double>(pred.size());
        }
        case LossKind::bce: {
            double s = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const double p = std::clamp(pred[i], 1e-12, 1.0 - 1e-12);
                s += -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
            }
            return s / static_cast<double>(pred.size());
        }
        case LossKind::softmax_ce: {
            double s = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i)
                if (target[i] != 0.0) s += -target[i] * std::log(std::max(pred[i], 1e-300));
            return s;
        }
    }
    return 0.0;
}

std::vector<double> loss_gradient(LossKind kind, std::span<const double> pred,
                                  std::span<const double> target, bool& pre) {
    if (pred.size() != target.size()) throw std::invalid_argument("loss: size mismatch");
    std::vector<double> g(pred.size());
    switch (kind) {
        case LossKind::mse:
            pre = false;
            for (std::size_t i = 0; i < pred.size(); ++i)
                g[i] = 2.0 * (pred[i] - target[i]) / static_cast<double>(pred.size());
            break;
        case LossKind::bce:
            // Fused with the final sigmoid: dL/dpre = p - y.
            pre = true;
            for (std::size_t i = 0; i < pred.size(); ++i)
                g[i] = (pred[i] - target[i]) / static_cast<double>(pred.size());
            break;
        case LossKind::softmax_ce:
            pre = true;
            for (std::size_t i = 0; i < pred.size(); ++i) g[i] = pred[i] - target[i];
            break;
    }
    return g;
}

Optimizer::Optimizer(const Network& net, OptimizerConfig cfg)
    : cfg_(cfg), m_(net.zero_grads()), v_(net.zero_grads()) {}

bool Optimizer::apply(Network& net, const Gradients& grads) {
    for (const auto& lg : grads) {
        for (double g : lg.weights)
            if (!std::isfinite(g)) return false;
        for (double g : lg.bias)
            if (!std::isfinite(g)) return false;
    }
    ++step_;
    auto update = [this](double& p, double g, double& m, double& v) {
        if (cfg_.kind == OptimizerKind::adagrad) {
            v += g * g;
            p -= cfg_.lr * g / std::sqrt(v + cfg_.eps);
        } else {
            m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
            v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
            const double mh = m / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
            const double vh = v / (1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
            p -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    };
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].weights.size(); ++i)
            update(layers[l].weights[i], grads[l].weights[i], m_[l].weights[i], v_[l].weights[i]);
        for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
            update(layers[l].bias[i], grads[l].bias[i], m_[l].bias[i], v_[l].bias[i]);
    }
    return true;
}

}  // namespace tabattack
