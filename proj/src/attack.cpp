#include "tabattack/attack.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace tabattack {

nlohmann::json AttackConfig::to_json() const {
    return {{"lambda", lambda},
            {"tau", tau},
            {"tau_margin_pad", tau_margin_pad},
            {"inner_steps", inner_steps},
            {"step_lr", step_lr},
            {"max_outer_iterations", max_outer_iterations},
            {"selection_mode", selection_mode == SelectionMode::surrogate_gradient
                                   ? "surrogate_gradient"
                                   : "target_importance"},
            {"signed_gradient_selection", signed_gradient_selection},
            {"spatial_weight", spatial_weight}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
    AttackConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.tau = j.value("tau", c.tau);
    c.tau_margin_pad = j.value("tau_margin_pad", c.tau_margin_pad);
    c.inner_steps = j.value("inner_steps", c.inner_steps);
    c.step_lr = j.value("step_lr", c.step_lr);
    c.max_outer_iterations = j.value("max_outer_iterations", c.max_outer_iterations);
    if (j.contains("selection_mode"))
        c.selection_mode = j.at("selection_mode").get<std::string>() == "target_importance"
                               ? SelectionMode::target_importance
                               : SelectionMode::surrogate_gradient;
    c.signed_gradient_selection = j.value("signed_gradient_selection", c.signed_gradient_selection);
    c.spatial_weight = j.value("spatial_weight", c.spatial_weight);
    return c;
}

std::size_t select_feature(std::span<const double> scores,
                           const std::vector<std::size_t>& selected, const Schema& schema,
                           bool use_magnitude) {
    std::size_t best = Schema::npos;
    double best_score = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (schema.is_immutable(i)) continue;
        if (std::find(selected.begin(), selected.end(), i) != selected.end()) continue;
        const double s = use_magnitude ? std::abs(scores[i]) : scores[i];
        if (best == Schema::npos || s > best_score) {  // lowest-index tie-break
            best = i;
            best_score = s;
        }
    }
    return best;
}

AttackObjective::AttackObjective(const SurrogateModel& surrogate,
                                 std::span<const double> x_origin, double y,
                                 const AttackConfig& cfg)
    : surrogate_(surrogate),
      origin_embedding_(surrogate.embedding.embed(x_origin)),
      y_(y),
      cfg_(cfg) {}

double AttackObjective::value(std::span<const double> x_star) const {
    const auto emb = surrogate_.embedding.embed(x_star);
    const double p = surrogate_.solver.graph.forward(surrogate_.solver.standardize(emb))[0];
    double l_adv;
    if (surrogate_.task == Task::binary_classification) {
        const std::vector<double> pred{p}, target{y_};
        l_adv = -loss_value(LossKind::bce, pred, target);
    } else {
        l_adv = std::max(0.0, cfg_.tau + cfg_.tau_margin_pad - std::abs(p - y_));
    }
    double dist2 = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const double d = emb[i] - origin_embedding_[i];
        dist2 += d * d;
    }
    return l_adv + cfg_.spatial_weight * std::sqrt(dist2);
}

std::vector<double> AttackObjective::gradient(std::span<const double> x_star) const {
    const auto emb_trace = surrogate_.embedding.embed_trace(x_star);
    const auto& emb = emb_trace.output();
    const auto solver_trace =
        surrogate_.solver.graph.trace(surrogate_.solver.standardize(emb));
    const double p = solver_trace.output()[0];

    // Adversarial term backpropped through the solver.
    std::vector<double> dz;
    if (surrogate_.task == Task::binary_classification) {
        // L_adv = -BCE; fused sigmoid gradient is p - y, negated.
        const std::vector<double> dout{y_ - p};
        dz = surrogate_.solver.graph.backward(solver_trace, dout, true, nullptr);
    } else {
        const double margin = cfg_.tau + cfg_.tau_margin_pad - std::abs(p - y_);
        double dadv = 0.0;
        if (margin > 0.0) dadv = p >= y_ ? -1.0 : 1.0;
        const std::vector<double> dout{dadv};
        dz = surrogate_.solver.graph.backward(solver_trace, dout, false, nullptr);
    }
    std::vector<double> demb = surrogate_.solver.unstandardize_grad(dz);

    // Spatial term: w * ||f(x) - f(x*)||_2.
    double dist2 = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        const double d = emb[i] - origin_embedding_[i];
        dist2 += d * d;
    }
    const double dist = std::sqrt(dist2);
    if (dist > 0.0)
        for (std::size_t i = 0; i < emb.size(); ++i)
            demb[i] += cfg_.spatial_weight * (emb[i] - origin_embedding_[i]) / dist;

    return surrogate_.embedding.backward(emb_trace, demb);
}

void CoordinateAdam::ensure(std::size_t d) {
    if (m.size() < d) {
        m.resize(d, 0.0);
        v.resize(d, 0.0);
        t.resize(d, 0);
    }
}

double CoordinateAdam::update(std::size_t i, double grad) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad;
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad * grad;
    const double mh = m[i] / (1.0 - std::pow(beta1, static_cast<double>(t[i])));
    const double vh = v[i] / (1.0 - std::pow(beta2, static_cast<double>(t[i])));
    return -lr * mh / (std::sqrt(vh) + eps);
}

std::vector<double> compute_step(std::span<const double> x_star,
                                 const AttackObjective& objective,
                                 const std::vector<std::size_t>& selected,
                                 CoordinateAdam& optimizer, std::size_t inner_steps) {
    optimizer.ensure(x_star.size());
    std::vector<double> current(x_star.begin(), x_star.end());
    for (std::size_t step = 0; step < inner_steps; ++step) {
        const auto grad = objective.gradient(current);
        for (std::size_t i : selected) current[i] += optimizer.update(i, grad[i]);
    }
    std::vector<double> alpha(x_star.size(), 0.0);
    for (std::size_t i : selected) alpha[i] = current[i] - x_star[i];
    return alpha;
}

bool attack_goal_met(const SurrogateModel& surrogate, std::span<const double> x_star, double y,
                     const AttackConfig& cfg) {
    if (surrogate.task == Task::binary_classification)
        return surrogate.predict_label(x_star) != (y > 0.5 ? 1 : 0);
    return std::abs(surrogate.predict_score(x_star) - y) > cfg.tau;
}

namespace {

AttackResult run_attack(const SurrogateModel& surrogate, const std::vector<double>* importance,
                        std::span<const double> x, double y, const AttackConfig& cfg,
                        const Supports& supports, const Schema& schema) {
    if (x.size() != schema.dimension())
        throw std::invalid_argument("attack: sample width mismatch");

    AttackResult result;
    result.label = y;
    result.x_star.assign(x.begin(), x.end());
    const std::size_t lambda =
        cfg.lambda == 0 ? schema.mutable_count()
                        : std::min(cfg.lambda, schema.mutable_count());

    AttackObjective objective(surrogate, x, y, cfg);
    CoordinateAdam adam;
    adam.lr = cfg.step_lr;

    while (result.iterations < cfg.max_outer_iterations &&
           !attack_goal_met(surrogate, result.x_star, y, cfg) &&
           result.selected.size() < lambda) {
        std::size_t pick;
        if (importance) {
            pick = select_feature(*importance, result.selected, schema, true);
        } else {
            const auto grad = surrogate.input_gradient(result.x_star, y);
            pick = select_feature(grad, result.selected, schema,
                                  !cfg.signed_gradient_selection);
        }
        if (pick == Schema::npos) break;
        result.selected.push_back(pick);

        const auto alpha =
            compute_step(result.x_star, objective, result.selected, adam, cfg.inner_steps);
        for (std::size_t i : result.selected) result.x_star[i] += alpha[i];
        result.x_star = supports.project(result.x_star);
        // Feasibility mask: immutable coordinates stay bit-identical.
        for (std::size_t i : schema.immutable_set()) result.x_star[i] = x[i];

        const double obj = objective.value(result.x_star);
        if (!std::isfinite(obj)) {
            result.aborted = true;
            break;
        }
        result.trace.push_back({pick, obj});
        ++result.iterations;
    }

    // Success is re-verified, never trusted from loop state.
    result.succeeded = !result.aborted && attack_goal_met(surrogate, result.x_star, y, cfg);
    result.delta.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) result.delta[i] = result.x_star[i] - x[i];
    return result;
}

}  // namespace

AttackResult craft(const SurrogateModel& surrogate, std::span<const double> x, double y,
                   const AttackConfig& cfg, const Supports& supports, const Schema& schema) {
    return run_attack(surrogate, nullptr, x, y, cfg, supports, schema);
}

AttackResult craft_adjusted(const SurrogateModel& surrogate, const TreeModel& target,
                            std::span<const double> x, double y, const AttackConfig& cfg,
                            const Supports& supports, const Schema& schema) {
    const auto& importance = target.importance;
    const bool all_zero =
        std::all_of(importance.begin(), importance.end(), [](double v) { return v == 0.0; });
    if (all_zero) {
        std::cerr << "warning: target importance is all-zero; "
                     "falling back to gradient ranking\n";
        return run_attack(surrogate, nullptr, x, y, cfg, supports, schema);
    }
    return run_attack(surrogate, &importance, x, y, cfg, supports, schema);
}

}  // namespace tabattack
