#ifndef HILSYNTH_GRIDWORLD_HPP
#define HILSYNTH_GRIDWORLD_HPP

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hilsynth/distribution.hpp"
#include "hilsynth/io.hpp"
#include "hilsynth/model.hpp"

namespace hilsynth {

struct Position {
    int x = 0;
    int y = 0;

    friend auto operator<=>(const Position&, const Position&) = default;
};

inline Position operator+(Position a, Position b) { return {a.x + b.x, a.y + b.y}; }

inline int manhattan(Position a, Position b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

enum class Action : std::uint8_t { Left = 0, Right = 1, Up = 2, Down = 3 };

inline constexpr std::size_t kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kActions{Action::Left, Action::Right, Action::Up, Action::Down};

inline constexpr std::size_t index_of(Action a) { return static_cast<std::size_t>(a); }

inline constexpr Position delta(Action a) {
    switch (a) {
        case Action::Left: return {-1, 0};
        case Action::Right: return {1, 0};
        case Action::Up: return {0, 1};
        case Action::Down: return {0, -1};
    }
    return {0, 0};
}

inline const char* action_name(Action a) {
    switch (a) {
        case Action::Left: return "left";
        case Action::Right: return "right";
        case Action::Up: return "up";
        case Action::Down: return "down";
    }
    return "?";
}

inline std::optional<Action> parse_action(std::string_view name) {
    for (auto a : kActions)
        if (name == action_name(a)) return a;
    return std::nullopt;
}

inline std::vector<std::string> action_names() {
    std::vector<std::string> out;
    for (auto a : kActions) out.emplace_back(action_name(a));
    return out;
}

/**
 * Neighbor occupancy vector. Bits are 1-based as z(1)..z(Width); the string
 * form lists z(1) first. For visibility one the neighbors are ordered
 * down-left, left, up-left, up, up-right, right, down-right, down.
 */
template <std::size_t Width>
class BasicObsVector {
public:
    static constexpr std::size_t width = Width;
    static constexpr std::size_t num_values = std::size_t{1} << Width;

    constexpr BasicObsVector() = default;

    static BasicObsVector from_code(unsigned long code) {
        BasicObsVector v;
        v.bits_ = std::bitset<Width>(code);
        return v;
    }

    static BasicObsVector parse(std::string_view text) {
        if (text.size() != Width)
            throw Error(Errc::ParseError, "observation '" + std::string(text) + "' must have " +
                                              std::to_string(Width) + " bits");
        BasicObsVector v;
        for (std::size_t i = 0; i < Width; ++i) {
            if (text[i] != '0' && text[i] != '1')
                throw Error(Errc::ParseError, "observation '" + std::string(text) + "' is not a bit string");
            v.bits_[i] = text[i] == '1';
        }
        return v;
    }

    static bool is_bit_string(std::string_view text) {
        if (text.size() != Width) return false;
        for (char c : text)
            if (c != '0' && c != '1') return false;
        return true;
    }

    bool bit(std::size_t i) const { return bits_[i - 1]; }
    void set(std::size_t i, bool value = true) { bits_[i - 1] = value; }
    std::size_t count() const { return bits_.count(); }
    unsigned long code() const { return bits_.to_ulong(); }

    std::string str() const {
        std::string s(Width, '0');
        for (std::size_t i = 0; i < Width; ++i)
            if (bits_[i]) s[i] = '1';
        return s;
    }

    friend bool operator==(const BasicObsVector&, const BasicObsVector&) = default;

private:
    std::bitset<Width> bits_;
};

using ObsVector = BasicObsVector<8>;

inline constexpr std::array<Position, 8> kNeighborOffsets{
    {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}}};

/// Observation bit that covers the cell an action moves into.
inline constexpr std::size_t facing_bit(Action a) {
    switch (a) {
        case Action::Left: return 2;
        case Action::Right: return 6;
        case Action::Up: return 4;
        case Action::Down: return 8;
    }
    return 0;
}

struct ScenarioConfig {
    int width = 4;
    int height = 4;
    std::vector<Position> landmarks;
    Position obstacle_start;
    Position goal;
    std::optional<Position> agent_start;  // nullopt: uniform over free cells
    int visibility = 1;
    std::uint64_t rng_seed = 0;

    friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

struct GridState {
    Position agent;
    Position obstacle;

    friend bool operator==(const GridState&, const GridState&) = default;
};

enum class Event { None, Crash, Goal };

inline const char* event_name(Event e) {
    switch (e) {
        case Event::None: return "none";
        case Event::Crash: return "crash";
        case Event::Goal: return "goal";
    }
    return "?";
}

inline Event parse_event(std::string_view name) {
    if (name == "none") return Event::None;
    if (name == "crash") return Event::Crash;
    if (name == "goal") return Event::Goal;
    throw Error(Errc::ParseError, "unknown event '" + std::string(name) + "'");
}

/// A validated scenario with its static map precomputed.
class Grid {
public:
    explicit Grid(ScenarioConfig config) : config_(std::move(config)) {
        const auto& c = config_;
        if (c.width < 3 || c.height < 3) throw Error(Errc::InvalidScenario, "grid must be at least 3x3");
        if (c.visibility != 1) throw Error(Errc::InvalidScenario, "only visibility 1 is supported");
        landmark_.assign(num_cells(), 0);
        for (auto p : c.landmarks) {
            if (!in_bounds(p)) throw Error(Errc::InvalidScenario, "landmark outside the grid");
            if (landmark_[cell(p)]) throw Error(Errc::InvalidScenario, "duplicate landmark");
            landmark_[cell(p)] = 1;
        }
        if (!in_bounds(c.goal)) throw Error(Errc::InvalidScenario, "goal outside the grid");
        if (!in_bounds(c.obstacle_start)) throw Error(Errc::InvalidScenario, "obstacle outside the grid");
        if (is_landmark(c.goal)) throw Error(Errc::InvalidScenario, "goal on a landmark");
        if (c.obstacle_start == c.goal) throw Error(Errc::InvalidScenario, "obstacle starts on the goal");
        if (is_landmark(c.obstacle_start)) throw Error(Errc::InvalidScenario, "obstacle starts on a landmark");
        if (c.agent_start) {
            if (!in_bounds(*c.agent_start)) throw Error(Errc::InvalidScenario, "agent outside the grid");
            if (is_landmark(*c.agent_start)) throw Error(Errc::InvalidScenario, "agent starts on a landmark");
            if (*c.agent_start == c.obstacle_start) throw Error(Errc::InvalidScenario, "agent starts on the obstacle");
        }
        if (free_cells().empty()) throw Error(Errc::InvalidScenario, "no free start cell");
    }

    const ScenarioConfig& config() const noexcept { return config_; }
    int width() const noexcept { return config_.width; }
    int height() const noexcept { return config_.height; }
    std::size_t num_cells() const noexcept { return static_cast<std::size_t>(config_.width * config_.height); }

    bool in_bounds(Position p) const noexcept {
        return p.x >= 0 && p.y >= 0 && p.x < config_.width && p.y < config_.height;
    }
    std::size_t cell(Position p) const noexcept { return static_cast<std::size_t>(p.y * config_.width + p.x); }
    Position position(std::size_t cell) const noexcept {
        return {static_cast<int>(cell % static_cast<std::size_t>(config_.width)),
                static_cast<int>(cell / static_cast<std::size_t>(config_.width))};
    }
    bool is_landmark(Position p) const noexcept { return in_bounds(p) && landmark_[cell(p)] != 0; }

    /// Walls block the agent (self-transition); landmarks do not.
    Position move(Position p, Action a) const noexcept {
        const Position next = p + delta(a);
        return in_bounds(next) ? next : p;
    }

    ObsVector observe(const GridState& s) const {
        ObsVector z;
        for (std::size_t i = 0; i < kNeighborOffsets.size(); ++i) {
            const Position q = s.agent + kNeighborOffsets[i];
            if (!in_bounds(q) || is_landmark(q) || q == s.obstacle) z.set(i + 1);
        }
        return z;
    }

    /// Observation produced by walls and landmarks alone.
    ObsVector static_view(Position agent) const {
        ObsVector z;
        for (std::size_t i = 0; i < kNeighborOffsets.size(); ++i) {
            const Position q = agent + kNeighborOffsets[i];
            if (!in_bounds(q) || is_landmark(q)) z.set(i + 1);
        }
        return z;
    }

    /// Uniform over in-grid, non-landmark 4-neighbors; stays put when boxed in. Outcomes are cell ids.
    Distribution obstacle_step(Position obstacle) const {
        std::vector<std::size_t> moves;
        for (auto a : kActions) {
            const Position q = obstacle + delta(a);
            if (in_bounds(q) && !is_landmark(q)) moves.push_back(cell(q));
        }
        if (moves.empty()) return Distribution::dirac(cell(obstacle));
        return Distribution::uniform(moves);
    }

    /// Crash wins over goal.
    Event classify(const GridState& s) const noexcept {
        if (s.agent == s.obstacle || is_landmark(s.agent)) return Event::Crash;
        if (s.agent == config_.goal) return Event::Goal;
        return Event::None;
    }

    /// Agent moves first, then the obstacle; collisions are checked after both.
    template <typename Rng>
    std::pair<GridState, Event> simulate_step(const GridState& s, Action a, Rng& rng) const {
        GridState next;
        next.agent = move(s.agent, a);
        next.obstacle = position(obstacle_step(s.obstacle).sample(rng));
        return {next, classify(next)};
    }

    /// Cells an episode may start from: not a landmark and not the obstacle's start.
    std::vector<Position> free_cells() const {
        std::vector<Position> out;
        for (std::size_t c = 0; c < num_cells(); ++c) {
            const auto p = position(c);
            if (!landmark_[c] && p != config_.obstacle_start) out.push_back(p);
        }
        return out;
    }

private:
    ScenarioConfig config_;
    std::vector<char> landmark_;
};

inline ObsVector observe(const GridState& state, const ScenarioConfig& config) { return Grid(config).observe(state); }

inline Distribution obstacle_step(Position obstacle, const ScenarioConfig& config) {
    return Grid(config).obstacle_step(obstacle);
}

template <typename Rng>
std::pair<GridState, Event> simulate_step(const Grid& grid, const GridState& state, Action action, Rng& rng) {
    return grid.simulate_step(state, action, rng);
}

// ---------------------------------------------------------------------------
// POMDP construction

inline const std::string kCrashObservation = "crash";

/**
 * The scenario POMDP. States are (agent, obstacle) pairs over the whole grid,
 * id = agent_cell * cells + obstacle_cell, plus one absorbing crash sink at
 * the end. Bad states step into the sink, goal states loop.
 */
struct GridModel {
    Grid grid;
    Pomdp pomdp;
    Spec spec;
    std::size_t sink = 0;

    std::size_t num_states() const noexcept { return pomdp.mdp.num_states(); }

    std::size_t state_id(const GridState& s) const noexcept {
        return grid.cell(s.agent) * grid.num_cells() + grid.cell(s.obstacle);
    }

    std::optional<GridState> grid_state(std::size_t id) const noexcept {
        if (id >= sink) return std::nullopt;
        return GridState{grid.position(id / grid.num_cells()), grid.position(id % grid.num_cells())};
    }

    std::size_t initial() const noexcept { return pomdp.mdp.initial; }

    void set_initial(const GridState& s) { pomdp.mdp.initial = state_id(s); }
};

/// Number of states build_pomdp produces: |Pos x Pos| + 1 crash sink.
inline std::size_t expected_state_count(const ScenarioConfig& c) {
    const auto cells = static_cast<std::size_t>(c.width * c.height);
    return cells * cells + 1;
}

/// Fixed start, or the lowest-index free cell for random-start families.
inline GridState initial_state(const Grid& grid) {
    const auto& c = grid.config();
    return GridState{c.agent_start ? *c.agent_start : grid.free_cells().front(), c.obstacle_start};
}

inline std::string state_name(const GridState& s) {
    return "(" + std::to_string(s.agent.x) + "," + std::to_string(s.agent.y) + "," + std::to_string(s.obstacle.x) +
           "," + std::to_string(s.obstacle.y) + ")";
}

inline GridModel build_pomdp(const ScenarioConfig& config, double threshold = 0.0) {
    Grid grid(config);
    const std::size_t cells = grid.num_cells();
    const std::size_t n = cells * cells + 1;
    const std::size_t sink = n - 1;

    std::vector<Distribution> obstacle_moves;
    obstacle_moves.reserve(cells);
    for (std::size_t c = 0; c < cells; ++c) obstacle_moves.push_back(grid.obstacle_step(grid.position(c)));

    Mdp mdp;
    mdp.action_names = action_names();
    mdp.state_names.resize(n);
    mdp.choices.resize(n);
    Spec spec{SpecKind::ReachAvoidProb, StateSet(n), StateSet(n), threshold};

    std::vector<unsigned long> codes(n, 0);
    std::vector<char> seen(ObsVector::num_values, 0);
    std::vector<Distribution::Entry> entries;
    for (std::size_t s = 0; s < sink; ++s) {
        const GridState gs{grid.position(s / cells), grid.position(s % cells)};
        mdp.state_names[s] = state_name(gs);
        codes[s] = grid.observe(gs).code();
        seen[codes[s]] = 1;
        auto& choices = mdp.choices[s];
        choices.reserve(kNumActions);
        switch (grid.classify(gs)) {
            case Event::Crash:
                spec.bad.insert(s);
                for (auto a : kActions) choices.push_back({index_of(a), Distribution::dirac(sink)});
                break;
            case Event::Goal:
                spec.goal.insert(s);
                for (auto a : kActions) choices.push_back({index_of(a), Distribution::dirac(s)});
                break;
            case Event::None:
                for (auto a : kActions) {
                    const std::size_t agent_cell = grid.cell(grid.move(gs.agent, a));
                    entries.clear();
                    for (const auto& [o, p] : obstacle_moves[s % cells].entries())
                        entries.emplace_back(agent_cell * cells + o, p);
                    choices.push_back({index_of(a), Distribution::from_probabilities(entries)});
                }
                break;
        }
    }
    mdp.state_names[sink] = "crash";
    for (auto a : kActions) mdp.choices[sink].push_back({index_of(a), Distribution::dirac(sink)});
    spec.bad.insert(sink);

    Pomdp pomdp;
    std::vector<std::size_t> id_of_code(ObsVector::num_values, 0);
    for (unsigned long code = 0; code < ObsVector::num_values; ++code) {
        if (!seen[code]) continue;
        id_of_code[code] = pomdp.observation_names.size();
        pomdp.observation_names.push_back(ObsVector::from_code(code).str());
    }
    const std::size_t crash_obs = pomdp.observation_names.size();
    pomdp.observation_names.push_back(kCrashObservation);
    pomdp.observation_of.resize(n);
    for (std::size_t s = 0; s < sink; ++s) pomdp.observation_of[s] = id_of_code[codes[s]];
    pomdp.observation_of[sink] = crash_obs;

    GridModel model{std::move(grid), std::move(pomdp), std::move(spec), sink};
    model.pomdp.mdp = std::move(mdp);
    model.set_initial(initial_state(model.grid));
    return model;
}

// ---------------------------------------------------------------------------
// Scenario sampling

struct IntRange {
    int lo = 0;
    int hi = 0;

    friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct ScenarioRanges {
    IntRange width{4, 11};
    IntRange height{4, 11};
    bool square = true;
    IntRange landmarks{1, 1};
    IntRange obstacles{1, 1};  // reserved; only one dynamic obstacle is supported
    bool random_start = false;
    std::optional<Position> goal;
    std::optional<Position> obstacle_start;
    std::optional<Position> agent_start;
    std::optional<std::vector<Position>> landmark_positions;

    friend bool operator==(const ScenarioRanges&, const ScenarioRanges&) = default;
};

/// Rejection-samples a valid scenario; deterministic in the generator state.
template <typename Rng>
ScenarioConfig random_scenario(Rng& rng, const ScenarioRanges& r, int max_attempts = 1000) {
    auto check = [](const IntRange& range, int floor, const char* what) {
        if (range.lo > range.hi || range.lo < floor)
            throw Error(Errc::InvalidRanges, std::string(what) + " range [" + std::to_string(range.lo) + "," +
                                                 std::to_string(range.hi) + "] is empty or below " +
                                                 std::to_string(floor));
    };
    check(r.width, 3, "width");
    if (!r.square) check(r.height, 3, "height");
    check(r.landmarks, 0, "landmark");
    if (r.obstacles.lo != 1 || r.obstacles.hi != 1)
        throw Error(Errc::InvalidRanges, "exactly one dynamic obstacle is supported");
    if (r.random_start && r.agent_start) throw Error(Errc::InvalidRanges, "random_start conflicts with agent_start");

    auto uniform_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        ScenarioConfig c;
        c.width = uniform_int(r.width.lo, r.width.hi);
        c.height = r.square ? c.width : uniform_int(r.height.lo, r.height.hi);
        auto random_cell = [&] { return Position{uniform_int(0, c.width - 1), uniform_int(0, c.height - 1)}; };
        if (r.landmark_positions) {
            c.landmarks = *r.landmark_positions;
        } else {
            const int k = uniform_int(r.landmarks.lo, r.landmarks.hi);
            if (k >= c.width * c.height - 2) continue;
            while (static_cast<int>(c.landmarks.size()) < k) {
                const auto p = random_cell();
                if (std::find(c.landmarks.begin(), c.landmarks.end(), p) == c.landmarks.end()) c.landmarks.push_back(p);
            }
        }
        c.goal = r.goal ? *r.goal : random_cell();
        c.obstacle_start = r.obstacle_start ? *r.obstacle_start : random_cell();
        if (!r.random_start) c.agent_start = r.agent_start ? *r.agent_start : random_cell();
        c.rng_seed = rng();
        try {
            (void)Grid{c};
            return c;
        } catch (const Error&) {
            continue;
        }
    }
    throw Error(Errc::InvalidRanges, "no valid scenario after " + std::to_string(max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// JSON

inline json position_to_json(Position p) { return json::array({p.x, p.y}); }

inline Position position_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
        throw Error(Errc::ParseError, "position must be [x, y], got " + j.dump());
    return {j[0].get<int>(), j[1].get<int>()};
}

inline json scenario_to_json(const ScenarioConfig& c) {
    json j;
    j["v"] = kSchemaVersion;
    j["width"] = c.width;
    j["height"] = c.height;
    json lm = json::array();
    for (auto p : c.landmarks) lm.push_back(position_to_json(p));
    j["landmarks"] = std::move(lm);
    j["obstacle_start"] = position_to_json(c.obstacle_start);
    j["goal"] = position_to_json(c.goal);
    j["agent_start"] = c.agent_start ? position_to_json(*c.agent_start) : json("random");
    j["visibility"] = c.visibility;
    j["rng_seed"] = c.rng_seed;
    return j;
}

/// Parses and validates; invalid layouts throw InvalidScenario.
inline ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig c;
    try {
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        for (const auto& p : j.value("landmarks", json::array())) c.landmarks.push_back(position_from_json(p));
        const auto& obstacle = j.at("obstacle_start");
        if (obstacle.is_array() && !obstacle.empty() && obstacle[0].is_array()) {
            if (obstacle.size() > 1) throw Error(Errc::InvalidScenario, "only one dynamic obstacle is supported");
            c.obstacle_start = position_from_json(obstacle[0]);
        } else {
            c.obstacle_start = position_from_json(obstacle);
        }
        c.goal = position_from_json(j.at("goal"));
        const auto& start = j.value("agent_start", json("random"));
        if (start.is_string()) {
            if (start.get<std::string>() != "random")
                throw Error(Errc::ParseError, "agent_start must be \"random\" or [x, y]");
        } else {
            c.agent_start = position_from_json(start);
        }
        c.visibility = j.value("visibility", 1);
        c.rng_seed = j.value("rng_seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("scenario: ") + e.what());
    }
    (void)Grid{c};
    return c;
}

inline json ranges_to_json(const ScenarioRanges& r) {
    json j;
    j["width"] = {r.width.lo, r.width.hi};
    j["height"] = {r.height.lo, r.height.hi};
    j["square"] = r.square;
    j["landmarks"] = {r.landmarks.lo, r.landmarks.hi};
    j["obstacles"] = {r.obstacles.lo, r.obstacles.hi};
    j["random_start"] = r.random_start;
    if (r.goal) j["goal"] = position_to_json(*r.goal);
    if (r.obstacle_start) j["obstacle_start"] = position_to_json(*r.obstacle_start);
    if (r.agent_start) j["agent_start"] = position_to_json(*r.agent_start);
    if (r.landmark_positions) {
        json lm = json::array();
        for (auto p : *r.landmark_positions) lm.push_back(position_to_json(p));
        j["landmark_positions"] = std::move(lm);
    }
    return j;
}

inline ScenarioRanges ranges_from_json(const json& j) {
    ScenarioRanges r;
    auto range = [&](const char* key, IntRange& out) {
        if (!j.contains(key)) return;
        const auto& v = j.at(key);
        if (!v.is_array() || v.size() != 2) throw Error(Errc::InvalidRanges, std::string(key) + " must be [lo, hi]");
        out = {v[0].get<int>(), v[1].get<int>()};
    };
    try {
        range("width", r.width);
        range("height", r.height);
        range("landmarks", r.landmarks);
        range("obstacles", r.obstacles);
        r.square = j.value("square", true);
        r.random_start = j.value("random_start", false);
        if (j.contains("goal")) r.goal = position_from_json(j.at("goal"));
        if (j.contains("obstacle_start")) r.obstacle_start = position_from_json(j.at("obstacle_start"));
        if (j.contains("agent_start")) r.agent_start = position_from_json(j.at("agent_start"));
        if (j.contains("landmark_positions")) {
            std::vector<Position> lm;
            for (const auto& p : j.at("landmark_positions")) lm.push_back(position_from_json(p));
            r.landmark_positions = std::move(lm);
        }
    } catch (const json::exception& e) {
        throw Error(Errc::InvalidRanges, e.what());
    }
    return r;
}

inline json grid_state_to_json(const GridState& s) {
    return json::array({s.agent.x, s.agent.y, s.obstacle.x, s.obstacle.y});
}

inline GridState grid_state_from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw Error(Errc::ParseError, "state must be [xa, ya, xo, yo]");
    return {{j[0].get<int>(), j[1].get<int>()}, {j[2].get<int>(), j[3].get<int>()}};
}

} // namespace hilsynth

#endif // HILSYNTH_GRIDWORLD_HPP
