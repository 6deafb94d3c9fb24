#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tabattack/net.hpp"

using namespace tabattack;

namespace {

// Scalar loss wrapper used as the finite-difference target.
double loss_of(const Network& net, LossKind kind, const std::vector<double>& x,
               const std::vector<double>& target) {
    return loss_value(kind, net.forward(x), target);
}

struct GradCheck {
    double max_rel_err = 0.0;
};

double rel_err(double a, double f) {
    // Central differences at h=1e-5 carry ~1e-10 absolute noise; the floor
    // keeps near-zero gradients from inflating the ratio.
    return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-3});
}

// Mirror of the library's activation application, for the kink probe only.
void apply_activation_for_test(Activation act, std::vector<double>& v);

// Returns false when a relu preactivation sits within `margin` of its kink,
// where finite differences are invalid.
bool away_from_kinks(const Network& net, const std::vector<double>& x, double margin) {
    std::vector<double> cur = x;
    for (const auto& layer : net.layers()) {
        std::vector<double> pre(layer.out, 0.0);
        for (std::size_t o = 0; o < layer.out; ++o) {
            pre[o] = layer.bias[o];
            for (std::size_t i = 0; i < layer.in; ++i)
                pre[o] += layer.weights[o * layer.in + i] * cur[i];
        }
        if (layer.act == Activation::relu)
            for (double p : pre)
                if (std::abs(p) < margin) return false;
        cur = pre;
        apply_activation_for_test(layer.act, cur);
    }
    return true;
}

void apply_activation_for_test(Activation act, std::vector<double>& v) {
    switch (act) {
        case Activation::identity:
            break;
        case Activation::relu:
            for (double& x : v) x = std::max(0.0, x);
            break;
        case Activation::sigmoid:
            for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
            break;
        case Activation::softmax: {
            double mx = v[0];
            for (double x : v) mx = std::max(mx, x);
            double sum = 0.0;
            for (double& x : v) sum += (x = std::exp(x - mx));
            for (double& x : v) x /= sum;
            break;
        }
    }
}

GradCheck gradcheck_one(Network& net, LossKind kind, const std::vector<double>& x,
                        const std::vector<double>& target) {
    const double h = 1e-5;
    GradCheck out;

    auto trace = net.trace(x);
    bool pre = false;
    const auto dout = loss_gradient(kind, trace.output(), target, pre);
    Gradients grads = net.zero_grads();
    const auto input_grad = net.backward(trace, dout, pre, &grads);

    std::vector<double> xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double up = loss_of(net, kind, xp, target);
        xp[i] = x[i] - h;
        const double dn = loss_of(net, kind, xp, target);
        xp[i] = x[i];
        out.max_rel_err = std::max(out.max_rel_err, rel_err(input_grad[i], (up - dn) / (2 * h)));
    }
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto probe = [&](std::vector<double>& params, const std::vector<double>& analytic) {
            for (std::size_t k = 0; k < params.size(); ++k) {
                const double orig = params[k];
                params[k] = orig + h;
                const double up = loss_of(net, kind, x, target);
                params[k] = orig - h;
                const double dn = loss_of(net, kind, x, target);
                params[k] = orig;
                out.max_rel_err =
                    std::max(out.max_rel_err, rel_err(analytic[k], (up - dn) / (2 * h)));
            }
        };
        probe(net.layers()[l].weights, grads[l].weights);
        probe(net.layers()[l].bias, grads[l].bias);
    }
    return out;
}

}  // namespace

TEST_CASE("forward: dot product and sigmoid basics") {
    Network net = Network::make({2, 1}, {Activation::identity}, 0);
    net.layers()[0].weights = {1.0, 1.0};
    net.layers()[0].bias = {0.0};
    CHECK(net.forward(std::vector<double>{2.0, 3.0})[0] == 5.0);

    net.layers()[0].act = Activation::sigmoid;
    net.layers()[0].weights = {0.0, 0.0};
    CHECK(net.forward(std::vector<double>{7.0, -1.0})[0] == 0.5);
}

TEST_CASE("forward: identity weight matrix passes input through") {
    Network net = Network::make({3, 3}, {Activation::identity}, 0);
    std::fill(net.layers()[0].weights.begin(), net.layers()[0].weights.end(), 0.0);
    for (int i = 0; i < 3; ++i) net.layers()[0].weights[i * 3 + i] = 1.0;
    net.layers()[0].bias = {0.0, 0.0, 0.0};
    const std::vector<double> x{0.1, -2.0, 4.5};
    CHECK(net.forward(x) == x);
}

TEST_CASE("softmax rows sum to 1") {
    Network net = Network::make({4, 3}, {Activation::softmax}, 5);
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x(4);
        for (auto& v : x) v = std::normal_distribution<double>(0, 3)(rng);
        const auto out = net.forward(x);
        double sum = 0.0;
        for (double v : out) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("mse at the minimum has zero gradient") {
    Network net = Network::make({2, 1}, {Activation::identity}, 3);
    const std::vector<double> x{0.4, -0.2};
    const std::vector<double> target = net.forward(x);  // prediction == target
    auto trace = net.trace(x);
    bool pre = false;
    const auto dout = loss_gradient(LossKind::mse, trace.output(), target, pre);
    Gradients grads = net.zero_grads();
    const auto gin = net.backward(trace, dout, pre, &grads);
    for (double g : gin) CHECK(g == 0.0);
    for (const auto& lg : grads)
        for (double g : lg.weights) CHECK(g == 0.0);
}

TEST_CASE("softmax cross-entropy fused gradient is p - y") {
    Network net = Network::make({3, 4}, {Activation::softmax}, 7);
    const std::vector<double> x{0.3, -1.0, 0.8};
    const auto p = net.forward(x);
    const std::vector<double> y{0.0, 1.0, 0.0, 0.0};
    bool pre = false;
    const auto dout = loss_gradient(LossKind::softmax_ce, p, y, pre);
    CHECK(pre);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(dout[i] == doctest::Approx(p[i] - y[i]).epsilon(1e-12));
}

TEST_CASE("gradient check against central finite differences") {
    std::mt19937_64 rng(17);
    double worst = 0.0;
    int done = 0;
    while (done < 30) {
        const std::size_t d_in = 2 + rng() % 5;
        const std::size_t hidden = 2 + rng() % 6;
        const std::size_t d_out = 1 + rng() % 3;
        const Activation hid_act =
            std::vector<Activation>{Activation::relu, Activation::sigmoid,
                                    Activation::identity}[rng() % 3];
        const bool classify = d_out == 1 && rng() % 2;
        Network net = Network::make(
            {d_in, hidden, d_out},
            {hid_act, classify ? Activation::sigmoid : Activation::identity}, rng());
        std::vector<double> x(d_in), target(d_out);
        for (auto& v : x) v = std::normal_distribution<double>(0, 1)(rng);
        if (!away_from_kinks(net, x, 1e-3)) continue;  // resample near relu kinks
        for (auto& v : target)
            v = classify ? double(rng() % 2) : std::normal_distribution<double>(0, 1)(rng);
        const LossKind kind = classify ? LossKind::bce : LossKind::mse;
        worst = std::max(worst, gradcheck_one(net, kind, x, target).max_rel_err);
        ++done;
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("adagrad first step matches the closed form") {
    Network net = Network::make({1, 1}, {Activation::identity}, 0);
    const double w0 = net.layers()[0].weights[0];
    const double g = 0.37;
    Optimizer opt(net, {OptimizerKind::adagrad, 0.001, 0.9, 0.999, 1e-8});
    Gradients grads = net.zero_grads();
    grads[0].weights[0] = g;
    CHECK(opt.apply(net, grads));
    const double expected = -0.001 * g / std::sqrt(g * g + 1e-8);
    CHECK(net.layers()[0].weights[0] - w0 == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam first step with unit gradient moves by about -lr") {
    Network net = Network::make({1, 1}, {Activation::identity}, 0);
    const double w0 = net.layers()[0].weights[0];
    Optimizer opt(net, {OptimizerKind::adam, 0.001, 0.9, 0.999, 1e-8});
    Gradients grads = net.zero_grads();
    grads[0].weights[0] = 1.0;
    opt.apply(net, grads);
    // Bias correction makes mh = 1, vh = 1 on step one: update = -lr/(1+eps).
    CHECK(net.layers()[0].weights[0] - w0 == doctest::Approx(-0.001).epsilon(1e-6));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
    Network net = Network::make({3, 2}, {Activation::sigmoid}, 4);
    const auto before = net.to_json();
    Optimizer opt(net, {});
    opt.apply(net, net.zero_grads());
    CHECK(net.to_json() == before);
}

TEST_CASE("non-finite gradient skips the step") {
    Network net = Network::make({1, 1}, {Activation::identity}, 0);
    const auto before = net.to_json();
    Optimizer opt(net, {});
    Gradients grads = net.zero_grads();
    grads[0].weights[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(opt.apply(net, grads));
    CHECK(net.to_json() == before);
}

TEST_CASE("initialization deterministic under seed") {
    const Network a = Network::make({5, 8, 2}, {Activation::relu, Activation::identity}, 99);
    const Network b = Network::make({5, 8, 2}, {Activation::relu, Activation::identity}, 99);
    const Network c = Network::make({5, 8, 2}, {Activation::relu, Activation::identity}, 100);
    CHECK(a.to_json() == b.to_json());
    CHECK(a.to_json() != c.to_json());
    CHECK(a.checksum() == b.checksum());
}

TEST_CASE("json round-trip preserves forward outputs") {
    Network net = Network::make({4, 6, 1}, {Activation::relu, Activation::sigmoid}, 21);
    const Network loaded = Network::from_json(net.to_json());
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x(4);
        for (auto& v : x) v = std::normal_distribution<double>(0, 1)(rng);
        CHECK(net.forward(x) == loaded.forward(x));
    }
}

TEST_CASE("training on separable data decreases running mean loss") {
    std::mt19937_64 rng(31);
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (int i = 0; i < 200; ++i) {
        const double y = i % 2;
        xs.push_back({std::normal_distribution<double>(y ? 2.0 : -2.0, 0.5)(rng)});
        ys.push_back(y);
    }
    Network net = Network::make({1, 1}, {Activation::sigmoid}, 13);
    Optimizer opt(net, {OptimizerKind::adam, 0.01, 0.9, 0.999, 1e-8});
    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < 10; ++epoch) {
        double total = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto trace = net.trace(xs[i]);
            const std::vector<double> target{ys[i]};
            total += loss_value(LossKind::bce, trace.output(), target);
            bool pre = false;
            const auto dout = loss_gradient(LossKind::bce, trace.output(), target, pre);
            Gradients grads = net.zero_grads();
            net.backward(trace, dout, pre, &grads);
            opt.apply(net, grads);
        }
        epoch_loss.push_back(total / static_cast<double>(xs.size()));
    }
    double running = epoch_loss[0];
    for (std::size_t e = 1; e < epoch_loss.size(); ++e) {
        const double next = (running * static_cast<double>(e) + epoch_loss[e]) /
                            static_cast<double>(e + 1);
        CHECK(next < running);
        running = next;
    }
}
