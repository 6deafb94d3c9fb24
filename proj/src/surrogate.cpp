#include "tabattack/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace tabattack {

std::vector<double> TaskSolver::standardize(std::span<const double> e) const {
    std::vector<double> z(e.begin(), e.end());
    if (input_mu.empty()) return z;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = (z[i] - input_mu[i]) / input_sd[i];
    return z;
}

std::vector<double> TaskSolver::unstandardize_grad(std::span<const double> g) const {
    std::vector<double> out(g.begin(), g.end());
    if (input_sd.empty()) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= input_sd[i];
    return out;
}

nlohmann::json TaskSolver::to_json() const {
    return {{"graph", graph.to_json()},
            {"loss", loss == LossKind::bce ? "bce" : "mse"},
            {"input_mu", input_mu},
            {"input_sd", input_sd}};
}

TaskSolver TaskSolver::from_json(const nlohmann::json& j) {
    TaskSolver s;
    s.graph = Network::from_json(j.at("graph"));
    s.loss = j.at("loss").get<std::string>() == "bce" ? LossKind::bce : LossKind::mse;
    s.input_mu = j.value("input_mu", std::vector<double>{});
    s.input_sd = j.value("input_sd", std::vector<double>{});
    return s;
}

double SurrogateModel::predict_score(std::span<const double> x) const {
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("predict: non-finite input");
    return solver.graph.forward(solver.standardize(embedding.embed(x)))[0];
}

int SurrogateModel::predict_label(std::span<const double> x) const {
    return predict_score(x) >= 0.5 ? 1 : 0;
}

std::vector<double> SurrogateModel::input_gradient(std::span<const double> x, double y) const {
    const auto emb_trace = embedding.embed_trace(x);
    const auto solver_trace = solver.graph.trace(solver.standardize(emb_trace.output()));
    const std::vector<double> target{y};
    bool pre = false;
    const auto dout = loss_gradient(solver.loss, solver_trace.output(), target, pre);
    const auto dz = solver.graph.backward(solver_trace, dout, pre, nullptr);
    return embedding.backward(emb_trace, solver.unstandardize_grad(dz));
}

nlohmann::json SurrogateModel::to_json() const {
    return {{"manifest_version", 1},
            {"task", task == Task::binary_classification ? "binary_classification"
                                                         : "regression"},
            {"embedding", embedding.to_json()},
            {"solver", solver.to_json()}};
}

SurrogateModel SurrogateModel::from_json(const nlohmann::json& j) {
    if (j.value("manifest_version", 0) != 1)
        throw std::invalid_argument("unsupported surrogate manifest version");
    SurrogateModel m;
    m.task = j.at("task").get<std::string>() == "regression" ? Task::regression
                                                             : Task::binary_classification;
    m.embedding = EmbeddingModel::from_json(j.at("embedding"));
    m.solver = TaskSolver::from_json(j.at("solver"));
    return m;
}

TaskSolver train_solver(const EmbeddingModel& embedding, const Dataset& train,
                        const Dataset* validation, Task task, const SolverConfig& cfg) {
    const bool classification = task == Task::binary_classification;
    TaskSolver solver;
    solver.loss = classification ? LossKind::bce : LossKind::mse;
    solver.graph = Network::make(
        {embedding.dim, 1},
        {classification ? Activation::sigmoid : Activation::identity}, cfg.seed);

    const std::uint64_t freeze_check = embedding.graph.checksum();

    // The embedding is frozen, so embed once up front.
    std::vector<std::vector<double>> embedded(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) embedded[i] = embedding.embed(train.row(i));

    solver.input_mu.assign(embedding.dim, 0.0);
    solver.input_sd.assign(embedding.dim, 0.0);
    for (const auto& e : embedded)
        for (std::size_t k = 0; k < embedding.dim; ++k) solver.input_mu[k] += e[k];
    for (double& m : solver.input_mu) m /= static_cast<double>(embedded.size());
    for (const auto& e : embedded)
        for (std::size_t k = 0; k < embedding.dim; ++k) {
            const double d = e[k] - solver.input_mu[k];
            solver.input_sd[k] += d * d;
        }
    for (double& s : solver.input_sd)
        s = std::max(std::sqrt(s / static_cast<double>(embedded.size())), 1e-12);
    for (auto& e : embedded) e = solver.standardize(e);

    std::vector<std::vector<double>> val_embedded;
    if (validation)
        for (std::size_t i = 0; i < validation->size(); ++i)
            val_embedded.push_back(solver.standardize(embedding.embed(validation->row(i))));

    auto validation_loss = [&]() {
        double total = 0.0;
        for (std::size_t i = 0; i < val_embedded.size(); ++i) {
            const auto out = solver.graph.forward(val_embedded[i]);
            const std::vector<double> target{validation->label(i)};
            total += loss_value(solver.loss, out, target);
        }
        return total / static_cast<double>(std::max<std::size_t>(1, val_embedded.size()));
    };

    Optimizer opt(solver.graph, cfg.optimizer);
    std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    double best_val = std::numeric_limits<double>::infinity();
    Network best_graph = solver.graph;
    std::size_t stale = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            Gradients grads = solver.graph.zero_grads();
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                auto trace = solver.graph.trace(embedded[i]);
                const std::vector<double> target{train.label(i)};
                bool pre = false;
                auto dout = loss_gradient(solver.loss, trace.output(), target, pre);
                solver.graph.backward(trace, dout, pre, &grads);
            }
            scale(grads, 1.0 / static_cast<double>(end - start));
            opt.apply(solver.graph, grads);
        }
        if (validation && cfg.early_stop_patience > 0) {
            const double vl = validation_loss();
            if (vl < best_val) {
                best_val = vl;
                best_graph = solver.graph;
                stale = 0;
            } else if (++stale >= cfg.early_stop_patience) {
                solver.graph = best_graph;
                break;
            }
        }
    }
    if (validation && cfg.early_stop_patience > 0 && best_val < validation_loss())
        solver.graph = best_graph;

    if (embedding.graph.checksum() != freeze_check)
        throw std::logic_error("embedding parameters changed during solver training");
    return solver;
}

}  // namespace tabattack
