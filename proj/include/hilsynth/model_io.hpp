#ifndef HILSYNTH_MODEL_IO_HPP
#define HILSYNTH_MODEL_IO_HPP

#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "hilsynth/io.hpp"
#include "hilsynth/model.hpp"

namespace hilsynth {

/**
 * Explicit-state model file.
 *
 *   {
 *     "v": 1,
 *     "states": [{"name": "s0", "observation": "red"}, ...],
 *     "observations": ["red", ...],            // optional, fixes observation ids
 *     "initial": "s0",
 *     "actions": ["a", "up", "down"],
 *     "transitions": [["s0", "a", [["s1", "0.5"], ["s2", "0.5"]]], ...],
 *     "labels": {"goal": ["s7"], "bad": []}
 *   }
 *
 * States without an "observation" observe their own name. Probabilities are
 * decimal strings in shortest round-trip form.
 */
struct ModelFile {
    Pomdp pomdp;
    std::map<std::string, StateSet> labels;

    StateSet label(const std::string& name) const {
        auto it = labels.find(name);
        return it == labels.end() ? StateSet(pomdp.mdp.num_states()) : it->second;
    }
};

namespace detail {

inline std::unordered_map<std::string, std::size_t> index_names(const std::vector<std::string>& names,
                                                                std::string_view what) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < names.size(); ++i)
        if (!index.emplace(names[i], i).second)
            throw Error(Errc::ParseError, "duplicate " + std::string(what) + " name '" + names[i] + "'");
    return index;
}

inline std::size_t lookup(const std::unordered_map<std::string, std::size_t>& index, const json& key,
                          std::string_view what) {
    if (!key.is_string()) throw Error(Errc::ParseError, std::string(what) + " reference must be a string");
    auto it = index.find(key.get<std::string>());
    if (it == index.end())
        throw Error(Errc::ParseError, "unknown " + std::string(what) + " '" + key.get<std::string>() + "'");
    return it->second;
}

} // namespace detail

inline json model_to_json(const ModelFile& file) {
    const auto& pomdp = file.pomdp;
    const auto& mdp = pomdp.mdp;
    json j;
    j["v"] = kSchemaVersion;
    json states = json::array();
    for (std::size_t s = 0; s < mdp.num_states(); ++s)
        states.push_back({{"name", mdp.state_names[s]},
                          {"observation", pomdp.observation_names[pomdp.observation_of[s]]}});
    j["states"] = std::move(states);
    j["observations"] = pomdp.observation_names;
    j["initial"] = mdp.state_names[mdp.initial];
    j["actions"] = mdp.action_names;
    json transitions = json::array();
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        for (const auto& c : mdp.choices[s]) {
            json targets = json::array();
            for (const auto& [t, p] : c.successors.entries())
                targets.push_back({mdp.state_names[t], format_decimal(p)});
            transitions.push_back({mdp.state_names[s], mdp.action_names[c.action], std::move(targets)});
        }
    }
    j["transitions"] = std::move(transitions);
    json labels = json::object();
    for (const auto& [name, set] : file.labels) {
        json ids = json::array();
        for (auto s : set.ids()) ids.push_back(mdp.state_names[s]);
        labels[name] = std::move(ids);
    }
    j["labels"] = std::move(labels);
    return j;
}

inline ModelFile model_from_json(const json& j) {
    try {
        ModelFile file;
        auto& pomdp = file.pomdp;
        auto& mdp = pomdp.mdp;

        std::vector<std::string> observation_of_state;
        for (const auto& st : j.at("states")) {
            mdp.state_names.push_back(st.at("name").get<std::string>());
            observation_of_state.push_back(st.contains("observation") ? st.at("observation").get<std::string>()
                                                                      : mdp.state_names.back());
        }
        const auto state_index = detail::index_names(mdp.state_names, "state");
        const auto n = mdp.state_names.size();
        if (n == 0) throw Error(Errc::ParseError, "model has no states");

        if (j.contains("observations")) {
            pomdp.observation_names = j.at("observations").get<std::vector<std::string>>();
        } else {
            std::unordered_map<std::string, std::size_t> seen;
            for (const auto& o : observation_of_state)
                if (seen.emplace(o, seen.size()).second) pomdp.observation_names.push_back(o);
        }
        const auto obs_index = detail::index_names(pomdp.observation_names, "observation");
        for (const auto& o : observation_of_state) pomdp.observation_of.push_back(detail::lookup(obs_index, o, "observation"));

        mdp.action_names = j.at("actions").get<std::vector<std::string>>();
        const auto action_index = detail::index_names(mdp.action_names, "action");
        mdp.initial = detail::lookup(state_index, j.at("initial"), "state");

        mdp.choices.assign(n, {});
        for (const auto& tr : j.at("transitions")) {
            if (!tr.is_array() || tr.size() != 3) throw Error(Errc::ParseError, "transition must be a triple");
            const auto s = detail::lookup(state_index, tr[0], "state");
            const auto a = detail::lookup(action_index, tr[1], "action");
            std::vector<Distribution::Entry> entries;
            for (const auto& target : tr[2]) {
                if (!target.is_array() || target.size() != 2) throw Error(Errc::ParseError, "target must be a pair");
                entries.emplace_back(detail::lookup(state_index, target[0], "state"), decimal_from_json(target[1]));
            }
            if (mdp.row(s, a) != nullptr)
                throw Error(Errc::ParseError, "duplicate transition for " + mdp.state_names[s] + "/" + mdp.action_names[a]);
            auto& cs = mdp.choices[s];
            Choice c{a, Distribution::from_probabilities(std::move(entries))};
            cs.insert(std::lower_bound(cs.begin(), cs.end(), a,
                                       [](const Choice& x, std::size_t act) { return x.action < act; }),
                      std::move(c));
        }

        if (j.contains("labels")) {
            for (const auto& [name, ids] : j.at("labels").items()) {
                StateSet set(n);
                for (const auto& id : ids) set.insert(detail::lookup(state_index, id, "state"));
                file.labels.emplace(name, std::move(set));
            }
        }
        require_valid(pomdp);
        return file;
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("model file: ") + e.what());
    }
}

inline std::string write_model(const ModelFile& file) { return canonical_dump(model_to_json(file)); }

inline ModelFile read_model(std::string_view text) { return model_from_json(parse_json(text, "model file")); }

inline ModelFile load_model(const std::filesystem::path& path) { return model_from_json(read_json(path)); }

} // namespace hilsynth

#endif // HILSYNTH_MODEL_IO_HPP
