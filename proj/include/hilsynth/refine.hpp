#ifndef HILSYNTH_REFINE_HPP
#define HILSYNTH_REFINE_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hilsynth/cloning.hpp"
#include "hilsynth/gridworld.hpp"
#include "hilsynth/training.hpp"
#include "hilsynth/verify.hpp"

namespace hilsynth {

/// Floor on the weight denominator; caps a single weight at 1000.
inline constexpr double kWeightFloor = 1e-3;

struct Counterexample {
    std::vector<std::size_t> critical_states;  // most critical first
    std::map<std::size_t, double> scores;
    std::string strategy_snapshot;
};

/**
 * Expected number of visits to each state from the initial state, counting
 * a state that is absorbing for the reach-avoid problem (bad, goal, or
 * probability zero) only on entry.
 */
inline std::vector<double> occupancy(const Mc& mc, const std::vector<double>& prob, const StateSet& bad,
                                     const StateSet& goal, double tolerance = 1e-12,
                                     std::size_t max_iterations = 1'000'000) {
    const auto n = mc.num_states();
    std::vector<char> transient(n, 0);
    for (std::size_t s = 0; s < n; ++s) transient[s] = !bad.contains(s) && !goal.contains(s) && prob[s] > 0.0;

    // incoming weighted edges from transient states
    std::vector<std::vector<std::pair<std::size_t, double>>> incoming(n);
    for (std::size_t s = 0; s < n; ++s) {
        if (!transient[s]) continue;
        for (const auto& [t, p] : mc.rows[s].entries())
            if (p > 0.0) incoming[t].emplace_back(s, p);
    }

    std::vector<double> visits(n, 0.0);
    std::vector<std::size_t> order;
    for (std::size_t s = 0; s < n; ++s)
        if (transient[s]) order.push_back(s);
    if (!order.empty()) {
        for (std::size_t it = 0;; ++it) {
            double residual = 0.0;
            for (auto s : order) {
                double v = s == mc.initial ? 1.0 : 0.0;
                for (const auto& [p, w] : incoming[s]) v += visits[p] * w;
                residual = std::max(residual, std::abs(v - visits[s]) / std::max(1.0, v));
                visits[s] = v;
            }
            if (residual <= tolerance) break;
            if (it + 1 >= max_iterations) throw NoConvergenceError(residual, it + 1);
        }
    }
    for (std::size_t s = 0; s < n; ++s) {
        if (transient[s]) continue;
        double v = s == mc.initial ? 1.0 : 0.0;
        for (const auto& [p, w] : incoming[s]) v += visits[p] * w;
        visits[s] = v;
    }
    return visits;
}

/**
 * Ranks reachable states outside bad and goal by the probability mass the
 * chain loses in one step from them: occupancy(s) times the probability of
 * moving into a state with value zero. Ties go to the lower value, then the
 * lower id. Returns at most k states.
 */
inline Counterexample critical_states(const Mc& mc, const CheckResult& check, const Spec& spec, std::size_t k) {
    if (!check.verdict) throw Error(Errc::InvalidParams, "check result carries no verdict");
    if (*check.verdict == Verdict::Sat) throw Error(Errc::NoCounterexampleNeeded, "specification is satisfied");
    const auto& prob = check.per_state_prob;
    const auto occ = occupancy(mc, prob, spec.bad, spec.goal);

    struct Candidate {
        std::size_t state;
        double score;
        double prob;
    };
    std::vector<Candidate> candidates;
    for (std::size_t s = 0; s < mc.num_states(); ++s) {
        if (spec.bad.contains(s) || spec.goal.contains(s) || !(occ[s] > 0.0)) continue;
        double loss = 0.0;
        for (const auto& [t, p] : mc.rows[s].entries())
            if (prob[t] <= 0.0) loss += p;
        candidates.push_back({s, occ[s] * loss, prob[s]});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.prob != b.prob) return a.prob < b.prob;
        return a.state < b.state;
    });
    Counterexample cex;
    for (std::size_t i = 0; i < candidates.size() && i < k; ++i) {
        cex.critical_states.push_back(candidates[i].state);
        cex.scores[candidates[i].state] = candidates[i].score;
    }
    return cex;
}

/// Weight 1 / max(floor, sum_s Pr(s|z) Pr_reach(s)) for the chosen action, 1 for the rest.
inline std::vector<double> refinement_weight(const Pomdp& pomdp, std::size_t observation, std::size_t chosen,
                                             const std::vector<double>& reach_prob) {
    const auto prior = observation_prior(pomdp, observation);
    double expected = 0.0;
    for (const auto& [s, p] : prior.entries()) expected += p * reach_prob.at(s);
    std::vector<double> weights(pomdp.mdp.num_actions(), 1.0);
    weights.at(chosen) = 1.0 / std::max(kWeightFloor, expected);
    return weights;
}

/// Row z scaled entrywise by the weights and renormalized; other rows untouched.
inline ObservationStrategy bayes_update(ObservationStrategy strategy, std::size_t observation,
                                        const std::vector<double>& weights) {
    auto& row = strategy.choice.at(observation);
    if (row.empty()) throw Error(Errc::StrategyIncomplete, "no row for observation " + std::to_string(observation));
    std::vector<Distribution::Entry> scaled;
    for (const auto& [a, p] : row.entries()) scaled.emplace_back(a, p * weights.at(a));
    row = Distribution::from_weights(std::move(scaled));
    return strategy;
}

inline std::optional<std::size_t> observation_id(const Pomdp& pomdp, const std::string& name) {
    auto it = std::find(pomdp.observation_names.begin(), pomdp.observation_names.end(), name);
    if (it == pomdp.observation_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - pomdp.observation_names.begin());
}

/// Applies one update per distinct observation of the session, using the action chosen at its last visit.
inline ObservationStrategy apply_session(const GridModel& model, ObservationStrategy strategy,
                                         const Trajectory& session, const std::vector<double>& reach_prob) {
    std::vector<std::pair<std::string, Action>> last;
    for (const auto& st : session.steps) {
        const auto name = st.obs.str();
        auto it = std::find_if(last.begin(), last.end(), [&](const auto& e) { return e.first == name; });
        if (it == last.end()) last.emplace_back(name, st.action);
        else it->second = st.action;
    }
    for (const auto& [name, action] : last) {
        const auto z = observation_id(model.pomdp, name);
        if (!z) continue;  // unreachable in this scenario's state space
        strategy = bayes_update(std::move(strategy), *z,
                                refinement_weight(model.pomdp, *z, index_of(action), reach_prob));
    }
    return strategy;
}

// ---------------------------------------------------------------------------
// Outer loop

struct RefineOptions {
    std::size_t max_iters = 10;
    std::size_t k = 10;  // sessions per iteration
    double plateau = 1e-3;
    std::uint64_t seed = 0;
    std::size_t max_session_steps = 0;  // 0: four times the cell count
    SolverOptions solver;
};

struct IterationRecord {
    std::size_t iter = 0;
    double prob = 0.0;
    std::optional<double> cost;
    std::string strategy_hash;
    std::size_t num_sessions = 0;
    std::vector<std::size_t> critical_states;
    Verdict verdict = Verdict::Unsat;
};

enum class StopReason { Sat, MaxIters, Plateau, Aborted };

inline const char* stop_reason_name(StopReason r) {
    switch (r) {
        case StopReason::Sat: return "sat";
        case StopReason::MaxIters: return "max_iters";
        case StopReason::Plateau: return "plateau";
        case StopReason::Aborted: return "aborted";
    }
    return "?";
}

struct RefineResult {
    ObservationStrategy strategy;
    std::vector<IterationRecord> history;
    std::vector<ObservationStrategy> snapshots;  // strategy checked at each history entry
    StopReason stop = StopReason::MaxIters;
    std::string error;
};

inline std::string hash_of(const Pomdp& pomdp, const ObservationStrategy& strategy) {
    return strategy_hash(to_table(pomdp, strategy));
}

/// The session seed for critical state j of iteration i.
inline std::uint64_t session_seed(std::uint64_t seed, std::size_t iter, std::size_t j) {
    return mix_seed(mix_seed(seed, iter), j);
}

/**
 * Check; if refuted, immerse the demonstrator at the k critical states and
 * fold its choices into the strategy; repeat. Stops when the spec holds,
 * after max_iters refinement rounds, or when the value moves by less than
 * `plateau` between consecutive checks.
 */
inline RefineResult refine_loop(const GridModel& model, const ObservationStrategy& initial,
                                const Demonstrator& demonstrator, const RefineOptions& options) {
    RefineResult result;
    result.strategy = initial;
    const std::size_t cap = options.max_session_steps ? options.max_session_steps : default_step_cap(model.grid);
    for (std::size_t iter = 0;; ++iter) {
        const auto mc = induce_mc(model.pomdp, result.strategy);
        const auto check = check_spec(mc, model.spec, options.solver);
        IterationRecord rec;
        rec.iter = iter;
        rec.prob = check.value_at_initial;
        rec.cost = check.conditional_expected_cost;
        rec.strategy_hash = hash_of(model.pomdp, result.strategy);
        rec.verdict = *check.verdict;
        result.history.push_back(rec);
        result.snapshots.push_back(result.strategy);

        if (*check.verdict == Verdict::Sat) {
            result.stop = StopReason::Sat;
            break;
        }
        if (iter > 0 && std::abs(rec.prob - result.history[iter - 1].prob) < options.plateau) {
            result.stop = StopReason::Plateau;
            break;
        }
        if (iter >= options.max_iters) {
            result.stop = StopReason::MaxIters;
            break;
        }

        const auto cex = critical_states(mc, check, model.spec, options.k);
        auto& current = result.history.back();
        current.critical_states = cex.critical_states;
        try {
            for (std::size_t j = 0; j < cex.critical_states.size(); ++j) {
                const auto start = model.grid_state(cex.critical_states[j]);
                if (!start) continue;
                const auto session = run_episode(model.grid, *start, demonstrator, session_seed(options.seed, iter, j),
                                                 cap, "refine-" + std::to_string(iter) + "-" + std::to_string(j));
                result.strategy = apply_session(model, std::move(result.strategy), session, check.per_state_prob);
                ++current.num_sessions;
            }
        } catch (const Error& e) {
            result.stop = StopReason::Aborted;
            result.error = e.what();
            break;
        }
    }
    return result;
}

inline json iteration_to_json(const IterationRecord& r) {
    return {{"iter", r.iter},
            {"prob", r.prob},
            {"cost", r.cost ? json(*r.cost) : json(nullptr)},
            {"strategy_hash", r.strategy_hash},
            {"num_sessions", r.num_sessions},
            {"critical_states", r.critical_states},
            {"verdict", verdict_name(r.verdict)}};
}

} // namespace hilsynth

#endif // HILSYNTH_REFINE_HPP
