#ifndef HILSYNTH_MODEL_HPP
#define HILSYNTH_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hilsynth/distribution.hpp"
#include "hilsynth/errors.hpp"

namespace hilsynth {

/// Dense set of state ids over a fixed universe.
class StateSet {
public:
    StateSet() = default;
    explicit StateSet(std::size_t universe) : member_(universe, 0) {}
    StateSet(std::size_t universe, std::initializer_list<std::size_t> ids) : member_(universe, 0) {
        for (auto id : ids) insert(id);
    }

    void insert(std::size_t id) {
        if (id >= member_.size()) throw Error(Errc::InvalidModel, "state id out of range: " + std::to_string(id));
        member_[id] = 1;
    }
    bool contains(std::size_t id) const noexcept { return id < member_.size() && member_[id] != 0; }
    std::size_t universe() const noexcept { return member_.size(); }

    std::size_t count() const noexcept {
        return static_cast<std::size_t>(std::count(member_.begin(), member_.end(), char{1}));
    }

    std::vector<std::size_t> ids() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < member_.size(); ++i)
            if (member_[i]) out.push_back(i);
        return out;
    }

    bool intersects(const StateSet& other) const noexcept {
        const auto n = std::min(member_.size(), other.member_.size());
        for (std::size_t i = 0; i < n; ++i)
            if (member_[i] && other.member_[i]) return true;
        return false;
    }

    friend bool operator==(const StateSet&, const StateSet&) = default;

private:
    std::vector<char> member_;
};

struct Choice {
    std::size_t action = 0;
    Distribution successors;

    friend bool operator==(const Choice&, const Choice&) = default;
};

/// Explicit-state MDP. choices[s] lists the enabled actions of s sorted by action id.
struct Mdp {
    std::vector<std::string> state_names;
    std::vector<std::string> action_names;
    std::size_t initial = 0;
    std::vector<std::vector<Choice>> choices;

    std::size_t num_states() const noexcept { return choices.size(); }
    std::size_t num_actions() const noexcept { return action_names.size(); }

    const Distribution* row(std::size_t state, std::size_t action) const noexcept {
        const auto& cs = choices[state];
        auto it = std::lower_bound(cs.begin(), cs.end(), action,
                                   [](const Choice& c, std::size_t a) { return c.action < a; });
        return (it != cs.end() && it->action == action) ? &it->successors : nullptr;
    }

    std::vector<std::size_t> enabled_actions(std::size_t state) const {
        std::vector<std::size_t> out;
        out.reserve(choices[state].size());
        for (const auto& c : choices[state]) out.push_back(c.action);
        return out;
    }

    std::size_t num_transitions() const noexcept {
        std::size_t n = 0;
        for (const auto& cs : choices)
            for (const auto& c : cs) n += c.successors.size();
        return n;
    }

    friend bool operator==(const Mdp&, const Mdp&) = default;
};

/// Markov chain: one row per state, action identity erased.
struct Mc {
    std::vector<std::string> state_names;
    std::size_t initial = 0;
    std::vector<Distribution> rows;

    std::size_t num_states() const noexcept { return rows.size(); }

    friend bool operator==(const Mc&, const Mc&) = default;
};

struct Pomdp {
    Mdp mdp;
    std::vector<std::string> observation_names;
    std::vector<std::size_t> observation_of;  // state -> observation

    std::size_t num_observations() const noexcept { return observation_names.size(); }

    std::vector<std::size_t> states_with(std::size_t observation) const {
        std::vector<std::size_t> out;
        for (std::size_t s = 0; s < observation_of.size(); ++s)
            if (observation_of[s] == observation) out.push_back(s);
        return out;
    }

    /// Enabled actions shared by all states carrying the observation.
    std::vector<std::size_t> actions_at(std::size_t observation) const {
        for (std::size_t s = 0; s < observation_of.size(); ++s)
            if (observation_of[s] == observation) return mdp.enabled_actions(s);
        throw Error(Errc::UnknownObservation, "observation " + std::to_string(observation) + " has no states");
    }

    friend bool operator==(const Pomdp&, const Pomdp&) = default;
};

/// Memoryless randomized observation-based strategy: one action distribution per observation.
struct ObservationStrategy {
    std::vector<Distribution> choice;

    friend bool operator==(const ObservationStrategy&, const ObservationStrategy&) = default;
};

enum class SpecKind { ReachAvoidProb, ExpectedCost };

/// P>=threshold(!bad U goal) or EC<=threshold(!bad U goal).
struct Spec {
    SpecKind kind = SpecKind::ReachAvoidProb;
    StateSet bad;
    StateSet goal;
    double threshold = 0.0;
};

inline void require_valid_spec(const Spec& spec) {
    if (spec.bad.intersects(spec.goal)) throw Error(Errc::InvalidSpec, "bad and goal sets overlap");
    if (spec.kind == SpecKind::ReachAvoidProb && !(spec.threshold >= 0.0 && spec.threshold <= 1.0))
        throw Error(Errc::InvalidSpec, "probability threshold outside [0,1]");
    if (spec.kind == SpecKind::ExpectedCost && !(spec.threshold >= 0.0))
        throw Error(Errc::InvalidSpec, "cost threshold must be non-negative");
}

// ---------------------------------------------------------------------------
// Validation

enum class Rule {
    RowSumViolation,
    NegativeProbability,
    TargetOutOfRange,
    Deadlock,
    InitialOutOfRange,
    ActionOutOfRange,
    ObservationOutOfRange,
    ObservationConsistency,
    UnusedObservation,
    MissingObservation,
    IllegalSupport,
};

inline const char* to_string(Rule r) {
    switch (r) {
        case Rule::RowSumViolation: return "RowSumViolation";
        case Rule::NegativeProbability: return "NegativeProbability";
        case Rule::TargetOutOfRange: return "TargetOutOfRange";
        case Rule::Deadlock: return "Deadlock";
        case Rule::InitialOutOfRange: return "InitialOutOfRange";
        case Rule::ActionOutOfRange: return "ActionOutOfRange";
        case Rule::ObservationOutOfRange: return "ObservationOutOfRange";
        case Rule::ObservationConsistency: return "ObservationConsistency";
        case Rule::UnusedObservation: return "UnusedObservation";
        case Rule::MissingObservation: return "MissingObservation";
        case Rule::IllegalSupport: return "IllegalSupport";
    }
    return "Unknown";
}

/// One broken invariant. `subject` is a state or observation id depending on the rule;
/// `other` is the second state for consistency violations or the action otherwise.
struct Violation {
    Rule rule;
    std::size_t subject = 0;
    std::size_t other = 0;
    double value = 0.0;

    std::string describe() const {
        return std::string(to_string(rule)) + "(" + std::to_string(subject) + ", " + std::to_string(other) +
               ", " + std::to_string(value) + ")";
    }

    friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {

inline void check_row(const Distribution& row, std::size_t state, std::size_t action, std::size_t num_targets,
                      std::vector<Violation>& out) {
    double total = 0.0;
    for (const auto& [target, p] : row.entries()) {
        if (!(p >= 0.0)) out.push_back({Rule::NegativeProbability, state, action, p});
        if (target >= num_targets) out.push_back({Rule::TargetOutOfRange, state, target, p});
        total += p;
    }
    if (std::abs(total - 1.0) > kProbabilityTolerance) out.push_back({Rule::RowSumViolation, state, action, total});
}

} // namespace detail

inline std::vector<Violation> validate(const Mdp& mdp) {
    std::vector<Violation> out;
    const auto n = mdp.num_states();
    if (mdp.initial >= n) out.push_back({Rule::InitialOutOfRange, mdp.initial, 0, 0.0});
    for (std::size_t s = 0; s < n; ++s) {
        if (mdp.choices[s].empty()) out.push_back({Rule::Deadlock, s, 0, 0.0});
        for (const auto& c : mdp.choices[s]) {
            if (c.action >= mdp.num_actions()) out.push_back({Rule::ActionOutOfRange, s, c.action, 0.0});
            detail::check_row(c.successors, s, c.action, n, out);
        }
    }
    return out;
}

inline std::vector<Violation> validate(const Mc& mc) {
    std::vector<Violation> out;
    const auto n = mc.num_states();
    if (mc.initial >= n) out.push_back({Rule::InitialOutOfRange, mc.initial, 0, 0.0});
    for (std::size_t s = 0; s < n; ++s) {
        if (mc.rows[s].empty()) out.push_back({Rule::Deadlock, s, 0, 0.0});
        else detail::check_row(mc.rows[s], s, 0, n, out);
    }
    return out;
}

inline std::vector<Violation> validate(const Pomdp& pomdp) {
    auto out = validate(pomdp.mdp);
    const auto n = pomdp.mdp.num_states();
    const auto m = pomdp.num_observations();
    if (pomdp.observation_of.size() != n) {
        out.push_back({Rule::ObservationOutOfRange, pomdp.observation_of.size(), n, 0.0});
        return out;
    }
    std::vector<std::size_t> representative(m, std::numeric_limits<std::size_t>::max());
    for (std::size_t s = 0; s < n; ++s) {
        const auto z = pomdp.observation_of[s];
        if (z >= m) {
            out.push_back({Rule::ObservationOutOfRange, s, z, 0.0});
            continue;
        }
        if (representative[z] == std::numeric_limits<std::size_t>::max()) {
            representative[z] = s;
        } else if (pomdp.mdp.enabled_actions(s) != pomdp.mdp.enabled_actions(representative[z])) {
            out.push_back({Rule::ObservationConsistency, representative[z], s, 0.0});
        }
    }
    for (std::size_t z = 0; z < m; ++z)
        if (representative[z] == std::numeric_limits<std::size_t>::max())
            out.push_back({Rule::UnusedObservation, z, 0, 0.0});
    return out;
}

/// Checks a strategy against the POMDP it is meant for.
inline std::vector<Violation> validate(const ObservationStrategy& strategy, const Pomdp& pomdp) {
    std::vector<Violation> out;
    const auto m = pomdp.num_observations();
    for (std::size_t z = 0; z < m; ++z) {
        if (z >= strategy.choice.size() || strategy.choice[z].empty()) {
            out.push_back({Rule::MissingObservation, z, 0, 0.0});
            continue;
        }
        detail::check_row(strategy.choice[z], z, 0, pomdp.mdp.num_actions(), out);
        const auto states = pomdp.states_with(z);
        if (states.empty()) continue;
        const auto enabled = pomdp.mdp.enabled_actions(states.front());
        for (const auto& [a, p] : strategy.choice[z].entries())
            if (p > 0.0 && !std::binary_search(enabled.begin(), enabled.end(), a))
                out.push_back({Rule::IllegalSupport, z, a, p});
    }
    return out;
}

inline std::string summarize(const std::vector<Violation>& violations) {
    std::string msg;
    for (std::size_t i = 0; i < violations.size() && i < 5; ++i) {
        if (i) msg += "; ";
        msg += violations[i].describe();
    }
    if (violations.size() > 5) msg += "; ... (" + std::to_string(violations.size()) + " total)";
    return msg;
}

template <typename Model>
void require_valid(const Model& model) {
    auto v = validate(model);
    if (!v.empty()) throw Error(Errc::InvalidModel, summarize(v));
}

// ---------------------------------------------------------------------------
// Operations

/// Mc from an Mdp where every state has exactly one enabled action.
inline Mc as_mc(const Mdp& mdp) {
    Mc mc{mdp.state_names, mdp.initial, {}};
    mc.rows.reserve(mdp.num_states());
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        if (mdp.choices[s].size() != 1)
            throw Error(Errc::InvalidModel, "state " + std::to_string(s) + " does not have exactly one action");
        mc.rows.push_back(mdp.choices[s].front().successors);
    }
    return mc;
}

/// Single-action view of a chain, so MDP algorithms apply to it.
inline Mdp as_mdp(const Mc& mc) {
    Mdp mdp{mc.state_names, {"tau"}, mc.initial, {}};
    mdp.choices.reserve(mc.num_states());
    for (const auto& row : mc.rows) mdp.choices.push_back({Choice{0, row}});
    return mdp;
}

/// P'(s, s') = sum_a strategy(O(s))(a) * P(s, a)(s').
inline Mc induce_mc(const Pomdp& pomdp, const ObservationStrategy& strategy) {
    const auto& mdp = pomdp.mdp;
    const auto m = pomdp.num_observations();
    if (strategy.choice.size() < m)
        throw Error(Errc::StrategyIncomplete, "strategy covers " + std::to_string(strategy.choice.size()) + " of " +
                                                  std::to_string(m) + " observations");
    Mc mc{mdp.state_names, mdp.initial, {}};
    mc.rows.reserve(mdp.num_states());
    std::vector<Distribution::Entry> mix;
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        const auto& row = strategy.choice[pomdp.observation_of[s]];
        if (row.empty())
            throw Error(Errc::StrategyIncomplete, "no choice for observation " +
                                                      pomdp.observation_names[pomdp.observation_of[s]]);
        mix.clear();
        for (const auto& [a, weight] : row.entries()) {
            if (weight <= 0.0) continue;
            const Distribution* succ = mdp.row(s, a);
            if (succ == nullptr)
                throw Error(Errc::IllegalSupport, "action " + std::to_string(a) + " not enabled in state " +
                                                      mdp.state_names[s]);
            for (const auto& [t, p] : succ->entries()) mix.emplace_back(t, weight * p);
        }
        mc.rows.push_back(Distribution::from_probabilities(mix));
    }
    return mc;
}

/// Maximum-entropy prior: uniform over the states carrying observation z.
inline Distribution observation_prior(const Pomdp& pomdp, std::size_t observation) {
    auto states = pomdp.states_with(observation);
    if (states.empty())
        throw Error(Errc::UnknownObservation, "observation " + std::to_string(observation) + " has no states");
    return Distribution::uniform(states);
}

} // namespace hilsynth

#endif // HILSYNTH_MODEL_HPP
