#ifndef HILSYNTH_CLONING_HPP
#define HILSYNTH_CLONING_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "hilsynth/features.hpp"
#include "hilsynth/io.hpp"
#include "hilsynth/model.hpp"
#include "hilsynth/training.hpp"

namespace hilsynth {

/// Strategy keyed by observation name and action name. This is the on-disk form
/// and is independent of any particular POMDP's id assignment.
struct StrategyTable {
    std::map<std::string, std::map<std::string, double>> rows;
    json provenance = json::object();

    friend bool operator==(const StrategyTable& a, const StrategyTable& b) {
        return a.rows == b.rows && a.provenance == b.provenance;
    }
};

inline json strategy_to_json(const StrategyTable& table) {
    json rows = json::object();
    for (const auto& [obs, dist] : table.rows) {
        json row = json::object();
        for (const auto& [action, p] : dist) row[action] = format_decimal(p);
        rows[obs] = std::move(row);
    }
    return {{"v", kSchemaVersion}, {"provenance", table.provenance}, {"strategy", std::move(rows)}};
}

inline StrategyTable strategy_from_json(const json& j) {
    try {
        StrategyTable table;
        for (const auto& [obs, row] : j.at("strategy").items())
            for (const auto& [action, p] : row.items()) table.rows[obs][action] = decimal_from_json(p);
        if (j.contains("provenance")) table.provenance = j.at("provenance");
        return table;
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("strategy file: ") + e.what());
    }
}

inline std::string write_strategy(const StrategyTable& table) { return canonical_dump(strategy_to_json(table)); }

/// Content hash of the canonical strategy file.
inline std::string strategy_hash(const StrategyTable& table) { return sha256_hex(write_strategy(table)); }

/**
 * Resolves a table against a POMDP's observation and action ids. Observations
 * that are not 8-bit vectors (the crash sink) fall back to uniform when the
 * table has no row for them, since every action behaves the same there.
 */
inline ObservationStrategy bind_strategy(const Pomdp& pomdp, const StrategyTable& table) {
    std::map<std::string, std::size_t> action_id;
    for (std::size_t a = 0; a < pomdp.mdp.num_actions(); ++a) action_id[pomdp.mdp.action_names[a]] = a;
    ObservationStrategy strategy;
    strategy.choice.reserve(pomdp.num_observations());
    for (std::size_t z = 0; z < pomdp.num_observations(); ++z) {
        const auto& name = pomdp.observation_names[z];
        auto it = table.rows.find(name);
        if (it == table.rows.end()) {
            if (ObsVector::is_bit_string(name))
                throw Error(Errc::StrategyIncomplete, "strategy has no row for observation " + name);
            strategy.choice.push_back(Distribution::uniform(pomdp.actions_at(z)));
            continue;
        }
        std::vector<Distribution::Entry> entries;
        for (const auto& [action, p] : it->second) {
            auto a = action_id.find(action);
            if (a == action_id.end()) throw Error(Errc::IllegalSupport, "unknown action '" + action + "' at " + name);
            entries.emplace_back(a->second, p);
        }
        strategy.choice.push_back(Distribution::from_probabilities(std::move(entries)));
    }
    if (auto v = validate(strategy, pomdp); !v.empty()) {
        const auto errc = v.front().rule == Rule::IllegalSupport ? Errc::IllegalSupport : Errc::InvalidModel;
        throw Error(errc, summarize(v));
    }
    return strategy;
}

inline StrategyTable to_table(const Pomdp& pomdp, const ObservationStrategy& strategy, json provenance = json::object()) {
    StrategyTable table;
    table.provenance = std::move(provenance);
    for (std::size_t z = 0; z < pomdp.num_observations(); ++z) {
        auto& row = table.rows[pomdp.observation_names[z]];
        for (const auto& [a, p] : strategy.choice.at(z).entries()) row[pomdp.mdp.action_names[a]] = p;
    }
    return table;
}

// ---------------------------------------------------------------------------
// Behavior cloning

/// Per-action aggregate for one observation: sum over the feature class of
/// (z, a) of each member's empirical conditional, skipping members whose
/// observation has no data.
inline std::array<double, kNumActions> feature_aggregates(const TrainingSet& ts, const FeatureClassTable& classes,
                                                          const ObsVector& z) {
    std::array<double, kNumActions> agg{};
    for (auto a : kActions) {
        double sum = 0.0;
        for (const auto& m : classes.class_of(z, a).members) {
            const auto total = ts.total(m.obs);
            if (total == 0) continue;
            sum += static_cast<double>(ts.count(m.obs, m.action)) / static_cast<double>(total);
        }
        agg[index_of(a)] = sum;
    }
    return agg;
}

/// Aggregates divided by their sum; uniform when there is no evidence at all.
inline std::map<std::string, double> normalize_aggregates(const std::array<double, kNumActions>& agg) {
    double total = 0.0;
    for (double v : agg) total += v;
    std::map<std::string, double> row;
    for (auto a : kActions) {
        const double p = total > 0.0 ? agg[index_of(a)] / total : 1.0 / static_cast<double>(kNumActions);
        if (p > 0.0) row[action_name(a)] = p;
    }
    return row;
}

inline std::string training_set_hash(const TrainingSet& ts) { return sha256_hex(ts.to_csv()); }

/// Cloned strategy over the full 8-bit observation space.
inline StrategyTable clone_table(const TrainingSet& ts, const FeatureClassTable& classes = standard_feature_classes()) {
    StrategyTable table;
    for (unsigned long code = 0; code < ObsVector::num_values; ++code) {
        const auto z = ObsVector::from_code(code);
        table.rows[z.str()] = normalize_aggregates(feature_aggregates(ts, classes, z));
    }
    table.provenance = {{"training_set", training_set_hash(ts)},
                        {"class_table", sha256_hex(classes.to_csv())},
                        {"training_size", ts.size()}};
    return table;
}

inline ObservationStrategy initial_strategy(const TrainingSet& ts, const Pomdp& pomdp,
                                            const FeatureClassTable& classes = standard_feature_classes()) {
    return bind_strategy(pomdp, clone_table(ts, classes));
}

// ---------------------------------------------------------------------------
// Diagnostics

struct EntropyRow {
    std::string observation;
    double bits = 0.0;
    bool uniform = false;  // every enabled action has exactly the same mass
};

inline double entropy_bits(const Distribution& d) {
    double h = 0.0;
    for (const auto& [o, p] : d.entries())
        if (p > 0.0) h -= p * std::log2(p);
    return h;
}

inline std::vector<EntropyRow> strategy_entropy_report(const Pomdp& pomdp, const ObservationStrategy& strategy) {
    std::vector<EntropyRow> out;
    for (std::size_t z = 0; z < pomdp.num_observations(); ++z) {
        const auto& row = strategy.choice.at(z);
        const auto enabled = pomdp.actions_at(z);
        bool uniform = row.size() == enabled.size();
        for (const auto& [a, p] : row.entries())
            if (std::abs(p - 1.0 / static_cast<double>(enabled.size())) > 1e-12) uniform = false;
        out.push_back({pomdp.observation_names[z], entropy_bits(row), uniform});
    }
    return out;
}

} // namespace hilsynth

#endif // HILSYNTH_CLONING_HPP
