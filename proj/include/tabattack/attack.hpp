#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "tabattack/consistency.hpp"
#include "tabattack/schema.hpp"
#include "tabattack/surrogate.hpp"
#include "tabattack/trees.hpp"

namespace tabattack {

enum class SelectionMode { surrogate_gradient, target_importance };

struct AttackConfig {
    std::size_t lambda = 0;  // max selected features; 0 = mutable count
    double tau = 0.75;       // regression success threshold
    double tau_margin_pad = 0.05;
    std::size_t inner_steps = 20;
    double step_lr = 0.05;
    std::size_t max_outer_iterations = 10000;
    SelectionMode selection_mode = SelectionMode::surrogate_gradient;
    bool signed_gradient_selection = false;  // raw G_i instead of |G_i|
    double spatial_weight = 1.0;

    nlohmann::json to_json() const;
    static AttackConfig from_json(const nlohmann::json& j);
};

struct IterationRecord {
    std::size_t selected_feature = 0;
    double objective = 0.0;
};

struct AttackResult {
    double label = 0.0;  // y of the attacked sample
    std::vector<double> x_star;
    std::vector<double> delta;
    std::vector<std::size_t> selected;  // ordered S
    bool succeeded = false;
    bool aborted = false;  // non-finite objective
    std::size_t iterations = 0;
    std::vector<IterationRecord> trace;
    std::optional<ValidityReport> validity;
};

/// Argmax of |G_i| (or raw G_i, or an importance vector) over indices
/// outside S and I; lowest index breaks ties. Returns npos when no
/// eligible index remains.
std::size_t select_feature(std::span<const double> scores,
                           const std::vector<std::size_t>& selected, const Schema& schema,
                           bool use_magnitude);

/// Combined adversarial objective L* = L_adv + w * ||f(x) - f(x*)||_2.
class AttackObjective {
public:
    AttackObjective(const SurrogateModel& surrogate, std::span<const double> x_origin,
                    double y, const AttackConfig& cfg);
    double value(std::span<const double> x_star) const;
    std::vector<double> gradient(std::span<const double> x_star) const;

private:
    const SurrogateModel& surrogate_;
    std::vector<double> origin_embedding_;
    double y_;
    const AttackConfig& cfg_;
};

/// Per-coordinate Adam used by ComputeStep; state persists across outer
/// iterations for already-selected coordinates.
struct CoordinateAdam {
    double lr = 0.05;
    std::vector<double> m, v;
    std::vector<long> t;
    void ensure(std::size_t d);
    double update(std::size_t i, double grad);
};

/// Cumulative step of `inner_steps` Adam iterations minimizing the
/// objective with coordinates outside S frozen. Nonzero only on S.
std::vector<double> compute_step(std::span<const double> x_star, const AttackObjective& objective,
                                 const std::vector<std::size_t>& selected,
                                 CoordinateAdam& optimizer, std::size_t inner_steps);

AttackResult craft(const SurrogateModel& surrogate, std::span<const double> x, double y,
                   const AttackConfig& cfg, const Supports& supports, const Schema& schema);

/// Same loop with feature selection driven by the target's information
/// gain; steps still come from surrogate gradients. All-zero importance
/// falls back to gradient ranking.
AttackResult craft_adjusted(const SurrogateModel& surrogate, const TreeModel& target,
                            std::span<const double> x, double y, const AttackConfig& cfg,
                            const Supports& supports, const Schema& schema);

/// Exit condition of the outer loop: label flip for classification,
/// |M(x*) - y| > tau for regression.
bool attack_goal_met(const SurrogateModel& surrogate, std::span<const double> x_star, double y,
                     const AttackConfig& cfg);

}  // namespace tabattack
