#ifndef HILSYNTH_TRAINING_HPP
#define HILSYNTH_TRAINING_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hilsynth/gridworld.hpp"
#include "hilsynth/io.hpp"

namespace hilsynth {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Sample-size bound

/// Smallest n with n >= ln(2/delta) / (2 eps^2).
inline std::uint64_t hoeffding_min_samples(double epsilon, double delta) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw Error(Errc::InvalidParams, "epsilon must lie in (0, 1]");
    if (!(delta > 0.0 && delta < 1.0)) throw Error(Errc::InvalidParams, "delta must lie in (0, 1)");
    const double bound = std::log(2.0 / delta) / (2.0 * epsilon * epsilon);
    // absorb rounding when the bound is an exact integer
    return static_cast<std::uint64_t>(std::ceil(bound * (1.0 - 1e-12)));
}

/// Sample count after dividing by a feature-pooling efficiency factor.
inline std::uint64_t apply_efficiency(std::uint64_t samples, double factor) {
    if (!(factor >= 1.0)) throw Error(Errc::InvalidParams, "efficiency factor must be >= 1");
    return static_cast<std::uint64_t>(std::ceil(static_cast<double>(samples) / factor * (1.0 - 1e-12)));
}

// ---------------------------------------------------------------------------
// Trajectories

struct Step {
    GridState state;
    ObsVector obs;
    Action action = Action::Left;
    Event event = Event::None;

    friend bool operator==(const Step&, const Step&) = default;
};

enum class Outcome { Goal, Crash, Abort };

inline const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::Goal: return "goal";
        case Outcome::Crash: return "crash";
        case Outcome::Abort: return "abort";
    }
    return "?";
}

inline Outcome parse_outcome(std::string_view name) {
    if (name == "goal") return Outcome::Goal;
    if (name == "crash") return Outcome::Crash;
    if (name == "abort") return Outcome::Abort;
    throw Error(Errc::ParseError, "unknown outcome '" + std::string(name) + "'");
}

struct Trajectory {
    std::string session_id;
    ScenarioConfig scenario;
    std::uint64_t seed = 0;  // simulation seed; replaying with it reproduces the states
    std::vector<Step> steps;
    Outcome outcome = Outcome::Abort;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Empty when the trajectory is consistent with the scenario dynamics, else the first problem found.
inline std::string trajectory_problem(const Trajectory& t) {
    Grid grid(t.scenario);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& st = t.steps[i];
        const auto where = "step " + std::to_string(i) + ": ";
        if (!grid.in_bounds(st.state.agent) || !grid.in_bounds(st.state.obstacle)) return where + "state outside grid";
        if (grid.classify(st.state) != Event::None) return where + "state is already terminal";
        if (grid.observe(st.state) != st.obs) return where + "observation does not match state";
        const bool last = i + 1 == t.steps.size();
        if (!last) {
            if (st.event != Event::None) return where + "terminal event before the last step";
            const auto& next = t.steps[i + 1].state;
            if (next.agent != grid.move(st.state.agent, st.action)) return where + "agent move inconsistent with action";
            if (!grid.obstacle_step(st.state.obstacle).contains(grid.cell(next.obstacle)))
                return where + "impossible obstacle move";
        } else {
            const Event expected = t.outcome == Outcome::Goal    ? Event::Goal
                                   : t.outcome == Outcome::Crash ? Event::Crash
                                                                 : Event::None;
            if (st.event != expected) return where + "final event does not match outcome";
        }
    }
    if (t.steps.empty() && t.outcome != Outcome::Abort) return "empty trajectory must be aborted";
    return {};
}

// ---------------------------------------------------------------------------
// Training set

/// Demonstrated action counts per (observation, action) over the full 8-bit observation space.
class TrainingSet {
public:
    static constexpr std::size_t kPairs = ObsVector::num_values * kNumActions;

    std::uint64_t count(const ObsVector& z, Action a) const { return counts_[z.code() * kNumActions + index_of(a)]; }

    std::uint64_t total(const ObsVector& z) const {
        std::uint64_t n = 0;
        for (auto a : kActions) n += count(z, a);
        return n;
    }

    std::uint64_t size() const noexcept { return size_; }

    void add(const ObsVector& z, Action a, std::uint64_t n = 1) {
        counts_[z.code() * kNumActions + index_of(a)] += n;
        size_ += n;
    }

    void reset() {
        counts_.fill(0);
        size_ = 0;
    }

    /// Rows with non-zero counts only: obs_bits,action,count.
    std::string to_csv() const {
        std::string out = "obs_bits,action,count\n";
        for (unsigned long code = 0; code < ObsVector::num_values; ++code) {
            const auto z = ObsVector::from_code(code);
            for (auto a : kActions)
                if (auto n = count(z, a)) out += z.str() + "," + action_name(a) + "," + std::to_string(n) + "\n";
        }
        return out;
    }

    static TrainingSet from_csv(std::string_view text) {
        TrainingSet ts;
        std::istringstream in{std::string(text)};
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (header) {
                header = false;
                if (line.rfind("obs_bits", 0) == 0) continue;
            }
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw Error(Errc::ParseError, "training csv line '" + line + "'");
            const auto z = ObsVector::parse(line.substr(0, c1));
            const auto a = parse_action(line.substr(c1 + 1, c2 - c1 - 1));
            if (!a) throw Error(Errc::ParseError, "unknown action in '" + line + "'");
            std::uint64_t n = 0;
            try {
                n = std::stoull(line.substr(c2 + 1));
            } catch (const std::exception&) {
                throw Error(Errc::ParseError, "bad count in '" + line + "'");
            }
            ts.add(z, *a, n);
        }
        return ts;
    }

    friend bool operator==(const TrainingSet&, const TrainingSet&) = default;

private:
    std::array<std::uint64_t, kPairs> counts_{};
    std::uint64_t size_ = 0;
};

/// Adds one count per step. Rejects trajectories that contradict the scenario dynamics.
inline TrainingSet record(TrainingSet ts, const Trajectory& trajectory) {
    if (auto problem = trajectory_problem(trajectory); !problem.empty())
        throw Error(Errc::RejectedTrajectory, trajectory.session_id + ": " + problem);
    for (const auto& st : trajectory.steps) ts.add(st.obs, st.action);
    return ts;
}

/// Largest per-action gap between the empirical conditionals of observations with data in both sets.
inline double empirical_distance(const TrainingSet& before, const TrainingSet& after) {
    double worst = 0.0;
    for (unsigned long code = 0; code < ObsVector::num_values; ++code) {
        const auto z = ObsVector::from_code(code);
        const auto nb = before.total(z);
        const auto na = after.total(z);
        if (nb == 0 || na == 0) continue;
        for (auto a : kActions) {
            const double pb = static_cast<double>(before.count(z, a)) / static_cast<double>(nb);
            const double pa = static_cast<double>(after.count(z, a)) / static_cast<double>(na);
            worst = std::max(worst, std::abs(pb - pa));
        }
    }
    return worst;
}

/// Observations present in only one snapshot are ignored, so disjoint sets are saturated.
inline bool saturation_check(const TrainingSet& before, const TrainingSet& after, double epsilon) {
    return empirical_distance(before, after) <= epsilon + 1e-12;
}

// ---------------------------------------------------------------------------
// Belief over the hidden state

/// z is explainable at `agent` by the static map plus at most one extra cell (the dynamic obstacle).
inline bool consistent(const Grid& grid, Position agent, const ObsVector& z) {
    const auto stat = grid.static_view(agent);
    std::size_t extra = 0;
    for (std::size_t i = 1; i <= ObsVector::width; ++i) {
        if (stat.bit(i) && !z.bit(i)) return false;
        if (z.bit(i) && !stat.bit(i)) ++extra;
    }
    return extra <= 1;
}

/**
 * Exact filter over (agent, obstacle) cell pairs. The static map is known,
 * the obstacle law is known, and only live (non-terminal) pairs carry mass.
 * Index: agent_cell * cells + obstacle_cell.
 */
class Belief {
public:
    Belief(std::size_t cells, std::vector<double> mass) : cells_(cells), mass_(std::move(mass)) {}

    /// Uniform over live pairs that produce z; over all live pairs if none does.
    static Belief uniform_consistent(const Grid& grid, const ObsVector& z) {
        const auto cells = grid.num_cells();
        std::vector<double> mass(cells * cells, 0.0);
        std::size_t n = 0;
        for (int pass = 0; pass < 2 && n == 0; ++pass) {
            for (std::size_t i = 0; i < mass.size(); ++i) {
                const GridState s{grid.position(i / cells), grid.position(i % cells)};
                if (grid.classify(s) != Event::None) continue;
                if (pass == 0 && grid.observe(s) != z) continue;
                mass[i] = 1.0;
                ++n;
            }
        }
        for (auto& m : mass) m /= static_cast<double>(n);
        return Belief(cells, std::move(mass));
    }

    static Belief dirac(const Grid& grid, const GridState& s) {
        const auto cells = grid.num_cells();
        std::vector<double> mass(cells * cells, 0.0);
        mass[grid.cell(s.agent) * cells + grid.cell(s.obstacle)] = 1.0;
        return Belief(cells, std::move(mass));
    }

    std::size_t num_cells() const noexcept { return cells_; }
    double mass(std::size_t agent_cell, std::size_t obstacle_cell) const { return mass_[agent_cell * cells_ + obstacle_cell]; }
    const std::vector<double>& masses() const noexcept { return mass_; }

    std::vector<double> agent_marginal() const {
        std::vector<double> out(cells_, 0.0);
        for (std::size_t i = 0; i < mass_.size(); ++i) out[i / cells_] += mass_[i];
        return out;
    }

    /// Lowest cell index on ties.
    std::size_t most_likely_agent() const {
        const auto m = agent_marginal();
        return static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin());
    }
    double max_agent_mass() const { return agent_marginal()[most_likely_agent()]; }

    /// Bayes step: own move, obstacle move, then condition on z_next at a live state.
    Belief after(const Grid& grid, Action a, const ObsVector& z_next) const {
        std::vector<double> next(mass_.size(), 0.0);
        double total = 0.0;
        const auto moves = obstacle_moves(grid);
        for (std::size_t i = 0; i < mass_.size(); ++i) {
            if (mass_[i] <= 0.0) continue;
            const auto agent = grid.move(grid.position(i / cells_), a);
            for (const auto& [o, p] : moves[i % cells_].entries()) {
                const GridState s{agent, grid.position(o)};
                if (grid.classify(s) != Event::None || grid.observe(s) != z_next) continue;
                next[grid.cell(agent) * cells_ + o] += mass_[i] * p;
                total += mass_[i] * p;
            }
        }
        if (total <= 0.0) return uniform_consistent(grid, z_next);
        for (auto& m : next) m /= total;
        return Belief(cells_, std::move(next));
    }

    /// Probability that taking a ends in a collision.
    double crash_risk(const Grid& grid, Action a) const {
        const auto moves = obstacle_moves(grid);
        double risk = 0.0;
        for (std::size_t i = 0; i < mass_.size(); ++i) {
            if (mass_[i] <= 0.0) continue;
            const auto agent = grid.move(grid.position(i / cells_), a);
            if (grid.is_landmark(agent)) {
                risk += mass_[i];
                continue;
            }
            risk += mass_[i] * moves[i % cells_].probability(grid.cell(agent));
        }
        return risk;
    }

private:
    static std::vector<Distribution> obstacle_moves(const Grid& grid) {
        std::vector<Distribution> out;
        out.reserve(grid.num_cells());
        for (std::size_t c = 0; c < grid.num_cells(); ++c) out.push_back(grid.obstacle_step(grid.position(c)));
        return out;
    }

    std::size_t cells_;
    std::vector<double> mass_;
};

// ---------------------------------------------------------------------------
// Demonstrators

class Demonstrator {
public:
    virtual ~Demonstrator() = default;
    virtual Action choose(const Grid& grid, const Belief& belief, const ObsVector& z, Rng& rng) const = 0;
};

struct DemonstratorOptions {
    double noise = 0.1;       // chance of a random safe action
    double confidence = 0.9;  // position mass needed to stop exploring
    double risk_band = 0.02;  // collision risk tolerated above the safest move
};

/// Shortest-path distance to the goal over non-landmark cells; unreachable cells get a large value.
inline std::vector<int> goal_distances(const Grid& grid) {
    constexpr int kFar = std::numeric_limits<int>::max() / 4;
    std::vector<int> dist(grid.num_cells(), kFar);
    std::queue<Position> frontier;
    dist[grid.cell(grid.config().goal)] = 0;
    frontier.push(grid.config().goal);
    while (!frontier.empty()) {
        const auto p = frontier.front();
        frontier.pop();
        for (auto a : kActions) {
            const auto q = p + delta(a);
            if (!grid.in_bounds(q) || grid.is_landmark(q) || dist[grid.cell(q)] != kFar) continue;
            dist[grid.cell(q)] = dist[grid.cell(p)] + 1;
            frontier.push(q);
        }
    }
    return dist;
}

/**
 * Human stand-in. Moves into observed-occupied cells are never chosen unless
 * every neighbor is occupied, and moves whose collision risk exceeds the
 * safest one by more than `risk_band` are dropped. While the own position is
 * uncertain it then picks the move with the lowest expected posterior
 * entropy (ties go to the move that brings it closer to the goal); once one
 * cell holds `confidence` mass it descends the goal distance from that cell.
 */
class ScriptedDemonstrator : public Demonstrator {
public:
    explicit ScriptedDemonstrator(DemonstratorOptions options = {}) : options_(options) {}

    const DemonstratorOptions& options() const noexcept { return options_; }

    Action choose(const Grid& grid, const Belief& belief, const ObsVector& z, Rng& rng) const override {
        std::vector<Action> safe;
        for (auto a : kActions)
            if (!z.bit(facing_bit(a))) safe.push_back(a);
        if (safe.empty()) return kActions[std::uniform_int_distribution<std::size_t>(0, kNumActions - 1)(rng)];
        if (options_.noise > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < options_.noise)
            return safe[std::uniform_int_distribution<std::size_t>(0, safe.size() - 1)(rng)];

        std::vector<double> risk;
        for (auto a : safe) risk.push_back(belief.crash_risk(grid, a));
        const double lowest = *std::min_element(risk.begin(), risk.end());
        std::vector<Action> candidates;
        for (std::size_t j = 0; j < safe.size(); ++j)
            if (risk[j] <= lowest + options_.risk_band) candidates.push_back(safe[j]);

        const auto dist = goal_distances(grid);
        const auto marginal = belief.agent_marginal();
        const auto here = static_cast<std::size_t>(std::max_element(marginal.begin(), marginal.end()) - marginal.begin());
        if (marginal[here] >= options_.confidence) {
            Action best = candidates.front();
            int best_d = std::numeric_limits<int>::max();
            for (auto a : candidates) {
                const int d = dist[grid.cell(grid.move(grid.position(here), a))];
                if (d < best_d) {
                    best_d = d;
                    best = a;
                }
            }
            return best;
        }

        Action best = candidates.front();
        double best_h = std::numeric_limits<double>::infinity();
        double best_d = std::numeric_limits<double>::infinity();
        for (auto a : candidates) {
            const auto [h, d] = explore_score(grid, marginal, dist, a);
            if (h < best_h - 1e-12 || (h <= best_h + 1e-12 && d < best_d - 1e-12)) {
                best = a;
                best_h = h;
                best_d = d;
            }
        }
        return best;
    }

private:
    /// (expected posterior entropy, expected goal distance) of the own position after taking a.
    static std::pair<double, double> explore_score(const Grid& grid, const std::vector<double>& marginal,
                                                   const std::vector<int>& dist, Action a) {
        // group successor cells by the static view they would show
        std::map<unsigned long, std::map<std::size_t, double>> groups;
        constexpr unsigned long kCrashGroup = ObsVector::num_values;
        double expected_distance = 0.0;
        for (std::size_t c = 0; c < marginal.size(); ++c) {
            const double m = marginal[c];
            if (m <= 0.0) continue;
            const auto q = grid.move(grid.position(c), a);
            const auto key = grid.is_landmark(q) ? kCrashGroup : grid.static_view(q).code();
            groups[key][grid.cell(q)] += m;
            expected_distance += m * std::min(dist[grid.cell(q)], 1 << 20);
        }
        double h = 0.0;
        for (const auto& [key, cells] : groups) {
            double group_mass = 0.0;
            for (const auto& [cell, m] : cells) group_mass += m;
            double gh = 0.0;
            for (const auto& [cell, m] : cells) {
                const double p = m / group_mass;
                gh -= p * std::log2(p);
            }
            h += group_mass * gh;
        }
        return {h, expected_distance};
    }

    DemonstratorOptions options_;
};

/// Plays one episode from `start` until goal, crash or the step cap (outcome abort).
inline Trajectory run_episode(const Grid& grid, const GridState& start, const Demonstrator& demonstrator,
                              std::uint64_t seed, std::size_t max_steps, std::string session_id = {}) {
    Trajectory t;
    t.session_id = std::move(session_id);
    t.scenario = grid.config();
    t.seed = seed;
    Rng rng(seed);  // simulator only, so the trajectory replays from its seed
    Rng choice_rng(mix_seed(seed, 1));
    GridState s = start;
    if (grid.classify(s) != Event::None) {
        t.outcome = Outcome::Abort;
        return t;
    }
    ObsVector z = grid.observe(s);
    Belief belief = Belief::uniform_consistent(grid, z);
    for (std::size_t i = 0; i < max_steps; ++i) {
        Action a;
        try {
            a = demonstrator.choose(grid, belief, z, choice_rng);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(Errc::DemonstratorFailure, e.what());
        }
        auto [next, event] = grid.simulate_step(s, a, rng);
        t.steps.push_back({s, z, a, event});
        if (event == Event::Goal) {
            t.outcome = Outcome::Goal;
            return t;
        }
        if (event == Event::Crash) {
            t.outcome = Outcome::Crash;
            return t;
        }
        s = next;
        z = grid.observe(s);
        belief = belief.after(grid, a, z);
    }
    t.outcome = Outcome::Abort;
    return t;
}

inline std::size_t default_step_cap(const Grid& grid) { return 4 * grid.num_cells(); }

/**
 * Re-simulates the recorded actions from the first recorded state with a
 * simulator seeded by t.seed. True iff every recorded state and event comes
 * out again.
 */
inline bool replays_exactly(const Trajectory& t) {
    if (t.steps.empty()) return true;
    Grid grid(t.scenario);
    Rng rng(t.seed);
    GridState s = t.steps.front().state;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        if (t.steps[i].state != s) return false;
        auto [next, event] = grid.simulate_step(s, t.steps[i].action, rng);
        if (event != t.steps[i].event) return false;
        s = next;
    }
    return true;
}

/// Episode i samples its scenario, start cell and simulation seed from mix_seed(seed, i).
inline Trajectory demonstration_episode(const ScenarioRanges& ranges, const Demonstrator& demonstrator,
                                        std::uint64_t seed, std::size_t index) {
    Rng rng(mix_seed(seed, index));
    const auto config = random_scenario(rng, ranges);
    Grid grid(config);
    Position start;
    if (config.agent_start) {
        start = *config.agent_start;
    } else {
        std::vector<Position> cells;
        for (auto p : grid.free_cells())
            if (p != config.goal) cells.push_back(p);
        if (cells.empty()) cells = grid.free_cells();
        start = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng)];
    }
    const std::uint64_t sim_seed = rng();
    return run_episode(grid, GridState{start, config.obstacle_start}, demonstrator, sim_seed, default_step_cap(grid),
                       "episode-" + std::to_string(index));
}

/**
 * Episodes 0, 1, ... from demonstration_episode until `episodes` have run
 * and the recorded steps reach `min_steps`. Either limit may be 0.
 */
inline std::vector<Trajectory> collect_demonstrations(const ScenarioRanges& ranges, const Demonstrator& demonstrator,
                                                      std::uint64_t seed, std::size_t episodes,
                                                      std::uint64_t min_steps = 0) {
    std::vector<Trajectory> log;
    std::uint64_t steps = 0;
    for (std::size_t i = 0; i < episodes || steps < min_steps; ++i) {
        if (i >= episodes + 1000 * (min_steps + 1))
            throw Error(Errc::DemonstratorFailure, "episodes keep ending without steps");
        log.push_back(demonstration_episode(ranges, demonstrator, seed, i));
        steps += log.back().steps.size();
    }
    return log;
}

// ---------------------------------------------------------------------------
// Serialization

inline json trajectory_to_json(const Trajectory& t) {
    json steps = json::array();
    for (const auto& st : t.steps)
        steps.push_back({{"state", grid_state_to_json(st.state)},
                         {"obs", st.obs.str()},
                         {"action", action_name(st.action)},
                         {"event", event_name(st.event)}});
    return {{"v", kSchemaVersion},
            {"session_id", t.session_id},
            {"scenario", scenario_to_json(t.scenario)},
            {"seed", t.seed},
            {"steps", std::move(steps)},
            {"outcome", outcome_name(t.outcome)}};
}

inline Trajectory trajectory_from_json(const json& j) {
    try {
        Trajectory t;
        t.session_id = j.at("session_id").get<std::string>();
        t.scenario = scenario_from_json(j.at("scenario"));
        t.seed = j.value("seed", std::uint64_t{0});
        for (const auto& st : j.at("steps")) {
            const auto a = parse_action(st.at("action").get<std::string>());
            if (!a) throw Error(Errc::ParseError, "unknown action " + st.at("action").dump());
            t.steps.push_back({grid_state_from_json(st.at("state")), ObsVector::parse(st.at("obs").get<std::string>()),
                               *a, parse_event(st.at("event").get<std::string>())});
        }
        t.outcome = parse_outcome(j.at("outcome").get<std::string>());
        return t;
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("trajectory: ") + e.what());
    }
}

/// One compact JSON object per line.
inline std::string trajectory_line(const Trajectory& t) { return trajectory_to_json(t).dump() + "\n"; }

inline std::vector<Trajectory> parse_trajectory_log(std::string_view text) {
    std::vector<Trajectory> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(trajectory_from_json(parse_json(line, "trajectory log")));
    }
    return out;
}

inline TrainingSet training_set_from_log(const std::vector<Trajectory>& log) {
    TrainingSet ts;
    for (const auto& t : log) ts = record(std::move(ts), t);
    return ts;
}

} // namespace hilsynth

#endif // HILSYNTH_TRAINING_HPP
