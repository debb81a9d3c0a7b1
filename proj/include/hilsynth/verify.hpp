#ifndef HILSYNTH_VERIFY_HPP
#define HILSYNTH_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hilsynth/cloning.hpp"
#include "hilsynth/gridworld.hpp"
#include "hilsynth/io.hpp"
#include "hilsynth/model.hpp"

namespace hilsynth {

enum class SolverMethod { GaussSeidel, Jacobi };

struct SolverOptions {
    SolverMethod method = SolverMethod::GaussSeidel;
    double tolerance = 1e-10;  // absolute, max-norm change per sweep
    std::size_t max_iterations = 1'000'000;
    std::function<void(std::span<const double>)> on_sweep;  // observes every iterate
};

enum class Verdict { Sat, Unsat };

inline const char* verdict_name(Verdict v) { return v == Verdict::Sat ? "SAT" : "UNSAT"; }

struct CheckResult {
    std::vector<double> per_state_prob;
    double value_at_initial = 0.0;
    std::optional<double> conditional_expected_cost;  // nullopt: goal unreachable from the initial state
    std::optional<Verdict> verdict;
    double residual = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

/// Uniform view over Mc rows and Mdp choices so one solver serves both.
struct McView {
    const Mc& mc;
    std::size_t num_states() const { return mc.num_states(); }
    template <typename F>
    void for_choices(std::size_t s, F&& f) const {
        f(mc.rows[s]);
    }
};

struct MdpView {
    const Mdp& mdp;
    std::size_t num_states() const { return mdp.num_states(); }
    template <typename F>
    void for_choices(std::size_t s, F&& f) const {
        for (const auto& c : mdp.choices[s]) f(c.successors);
    }
};

template <typename View>
std::vector<std::vector<std::size_t>> predecessors(const View& view) {
    std::vector<std::vector<std::size_t>> pred(view.num_states());
    for (std::size_t s = 0; s < view.num_states(); ++s)
        view.for_choices(s, [&](const Distribution& d) {
            for (const auto& [t, p] : d.entries())
                if (p > 0.0 && (pred[t].empty() || pred[t].back() != s)) pred[t].push_back(s);
        });
    return pred;
}

struct Precomputation {
    std::vector<char> can_reach;         // some path reaches goal avoiding bad
    std::vector<char> sure;              // probability one (under some choice for MDPs)
    std::vector<std::size_t> bfs_order;  // states by backward distance from goal
};

/// Graph analysis before numerics: states that cannot reach the goal (value 0)
/// and states that reach it almost surely (value 1, maximizing over choices).
template <typename View>
Precomputation precompute(const View& view, const StateSet& bad, const StateSet& goal) {
    const auto n = view.num_states();
    const auto pred = predecessors(view);
    Precomputation pc;
    pc.can_reach.assign(n, 0);
    std::deque<std::size_t> queue;
    for (std::size_t s = 0; s < n; ++s)
        if (goal.contains(s)) {
            pc.can_reach[s] = 1;
            queue.push_back(s);
            pc.bfs_order.push_back(s);
        }
    while (!queue.empty()) {
        const auto t = queue.front();
        queue.pop_front();
        for (auto p : pred[t]) {
            if (pc.can_reach[p] || bad.contains(p)) continue;
            pc.can_reach[p] = 1;
            queue.push_back(p);
            pc.bfs_order.push_back(p);
        }
    }

    // Greatest fixpoint: shrink `keep` to the states that can reach the goal
    // via choices whose whole support stays inside `keep`.
    std::vector<char> keep = pc.can_reach;
    for (;;) {
        std::vector<char> reached(n, 0);
        for (std::size_t s = 0; s < n; ++s)
            if (goal.contains(s) && keep[s]) {
                reached[s] = 1;
                queue.push_back(s);
            }
        while (!queue.empty()) {
            const auto t = queue.front();
            queue.pop_front();
            for (auto p : pred[t]) {
                if (reached[p] || !keep[p] || bad.contains(p)) continue;
                bool ok = false;
                view.for_choices(p, [&](const Distribution& d) {
                    if (ok) return;
                    bool inside = true;
                    bool hits = false;
                    for (const auto& [u, prob] : d.entries()) {
                        if (prob <= 0.0) continue;
                        if (!keep[u]) inside = false;
                        if (reached[u]) hits = true;
                    }
                    ok = inside && hits;
                });
                if (ok) {
                    reached[p] = 1;
                    queue.push_back(p);
                }
            }
        }
        if (reached == keep) break;
        keep = std::move(reached);
    }
    pc.sure = std::move(keep);
    return pc;
}

/// Least fixed point x(s) = max over choices of sum P(s,t) x(t) on the undecided states.
template <typename View>
CheckResult solve_reach(const View& view, const StateSet& bad, const StateSet& goal, const SolverOptions& options) {
    if (bad.intersects(goal)) throw Error(Errc::InvalidSpec, "bad and goal sets overlap");
    const auto n = view.num_states();
    const auto pc = precompute(view, bad, goal);
    std::vector<double> x(n, 0.0);
    std::vector<std::size_t> maybe;
    for (std::size_t s = 0; s < n; ++s)
        if (pc.sure[s]) x[s] = 1.0;
    for (auto s : pc.bfs_order)
        if (!pc.sure[s] && !goal.contains(s)) maybe.push_back(s);

    CheckResult result;
    if (!maybe.empty()) {
        std::vector<double> next;
        if (options.method == SolverMethod::Jacobi) next = x;
        for (;;) {
            double residual = 0.0;
            const auto& src = x;
            auto& dst = options.method == SolverMethod::Jacobi ? next : x;
            for (auto s : maybe) {
                double best = 0.0;
                view.for_choices(s, [&](const Distribution& d) {
                    double v = 0.0;
                    for (const auto& [t, p] : d.entries()) v += p * src[t];
                    best = std::max(best, v);
                });
                residual = std::max(residual, std::abs(best - src[s]));
                dst[s] = best;
            }
            if (options.method == SolverMethod::Jacobi) x = next;
            ++result.iterations;
            result.residual = residual;
            if (options.on_sweep) options.on_sweep(x);
            if (residual <= options.tolerance) break;
            if (result.iterations >= options.max_iterations) throw NoConvergenceError(residual, result.iterations);
        }
    }
    result.per_state_prob = std::move(x);
    return result;
}

} // namespace detail

/// Probability of reaching goal while avoiding bad, for every state of the chain.
inline CheckResult reach_avoid_prob(const Mc& mc, const StateSet& bad, const StateSet& goal,
                                    const SolverOptions& options = {}) {
    auto result = detail::solve_reach(detail::McView{mc}, bad, goal, options);
    result.value_at_initial = result.per_state_prob.at(mc.initial);
    return result;
}

/// Maximal reach-avoid probabilities over all strategies of the fully observable MDP.
inline CheckResult mdp_max_reach(const Mdp& mdp, const StateSet& bad, const StateSet& goal,
                                 const SolverOptions& options = {}) {
    auto result = detail::solve_reach(detail::MdpView{mdp}, bad, goal, options);
    result.value_at_initial = result.per_state_prob.at(mdp.initial);
    return result;
}

struct CostResult {
    std::optional<double> value;  // expected steps to goal given the goal is reached safely
    double success_probability = 0.0;
    std::vector<double> per_state;  // conditional cost; NaN where success probability is 0
    double residual = 0.0;
    std::size_t iterations = 0;
};

/**
 * Unit step cost, conditioned on success. With w the reach-avoid
 * probabilities, solves z(s) = sum P(s,t) (w(t) + z(t)) over states with
 * w > 0 outside the goal; the conditional cost is z(s) / w(s).
 */
inline CostResult conditional_expected_cost(const Mc& mc, const StateSet& bad, const StateSet& goal,
                                            const SolverOptions& options = {},
                                            const CheckResult* reach = nullptr) {
    CheckResult own;
    if (reach == nullptr) {
        own = reach_avoid_prob(mc, bad, goal, options);
        reach = &own;
    }
    const auto& w = reach->per_state_prob;
    const auto n = mc.num_states();
    std::vector<char> active(n, 0);
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < n; ++s)
        if (w[s] > 0.0 && !goal.contains(s) && !bad.contains(s)) {
            active[s] = 1;
            order.push_back(s);
        }

    CostResult result;
    std::vector<double> z(n, 0.0);
    std::vector<double> next;
    if (!order.empty()) {
        if (options.method == SolverMethod::Jacobi) next = z;
        for (;;) {
            double residual = 0.0;
            const auto& src = z;
            auto& dst = options.method == SolverMethod::Jacobi ? next : z;
            for (auto s : order) {
                double v = 0.0;
                for (const auto& [t, p] : mc.rows[s].entries()) v += p * (w[t] + (active[t] ? src[t] : 0.0));
                residual = std::max(residual, std::abs(v - src[s]));
                dst[s] = v;
            }
            if (options.method == SolverMethod::Jacobi) z = next;
            ++result.iterations;
            result.residual = residual;
            if (residual <= options.tolerance) break;
            if (result.iterations >= options.max_iterations) throw NoConvergenceError(residual, result.iterations);
        }
    }
    result.per_state.assign(n, std::nan(""));
    for (std::size_t s = 0; s < n; ++s) {
        if (goal.contains(s)) result.per_state[s] = 0.0;
        else if (active[s]) result.per_state[s] = z[s] / w[s];
    }
    result.success_probability = w[mc.initial];
    const double at_initial = result.per_state[mc.initial];
    if (!std::isnan(at_initial)) result.value = at_initial;
    return result;
}

/// Reach-avoid check plus the conditional cost, with a verdict against the spec's threshold.
inline CheckResult check_spec(const Mc& mc, const Spec& spec, const SolverOptions& options = {}) {
    require_valid_spec(spec);
    auto result = reach_avoid_prob(mc, spec.bad, spec.goal, options);
    const auto cost = conditional_expected_cost(mc, spec.bad, spec.goal, options, &result);
    result.conditional_expected_cost = cost.value;
    if (spec.kind == SpecKind::ReachAvoidProb)
        result.verdict = result.value_at_initial >= spec.threshold ? Verdict::Sat : Verdict::Unsat;
    else
        result.verdict = (cost.value && *cost.value <= spec.threshold) ? Verdict::Sat : Verdict::Unsat;
    return result;
}

// ---------------------------------------------------------------------------
// Heatmap over start cells

struct Heatmap {
    int width = 0;
    int height = 0;
    std::vector<std::optional<double>> cells;  // row-major, y * width + x; empty for non-start cells

    std::optional<double> at(Position p) const { return cells[static_cast<std::size_t>(p.y * width + p.x)]; }

    /// Top row (largest y) first so the file reads like the map.
    std::string to_csv() const {
        std::string out;
        for (int y = height - 1; y >= 0; --y) {
            for (int x = 0; x < width; ++x) {
                if (x) out += ",";
                if (auto v = at({x, y})) out += format_decimal(*v);
            }
            out += "\n";
        }
        return out;
    }

    json to_json() const {
        json rows = json::array();
        for (int y = height - 1; y >= 0; --y) {
            json row = json::array();
            for (int x = 0; x < width; ++x) {
                auto v = at({x, y});
                row.push_back(v ? json(*v) : json(nullptr));
            }
            rows.push_back(std::move(row));
        }
        return rows;
    }
};

/// Value of the induced chain from every free start cell, obstacle at its configured start.
inline Heatmap heatmap(const GridModel& model, const ObservationStrategy& strategy, const SolverOptions& options = {}) {
    const auto mc = induce_mc(model.pomdp, strategy);
    const auto reach = reach_avoid_prob(mc, model.spec.bad, model.spec.goal, options);
    const auto& grid = model.grid;
    Heatmap h{grid.width(), grid.height(), std::vector<std::optional<double>>(grid.num_cells())};
    for (auto p : grid.free_cells())
        h.cells[grid.cell(p)] = reach.per_state_prob[model.state_id({p, grid.config().obstacle_start})];
    return h;
}

// ---------------------------------------------------------------------------
// Export

inline json result_to_json(const CheckResult& r, bool per_state = false) {
    json j;
    j["v"] = kSchemaVersion;
    j["value_at_initial"] = r.value_at_initial;
    j["residual"] = r.residual;
    j["iterations"] = r.iterations;
    j["conditional_expected_cost"] = r.conditional_expected_cost ? json(*r.conditional_expected_cost) : json("undefined");
    if (r.verdict) j["verdict"] = verdict_name(*r.verdict);
    if (per_state) j["per_state"] = r.per_state_prob;
    return j;
}

} // namespace hilsynth

#endif // HILSYNTH_VERIFY_HPP
