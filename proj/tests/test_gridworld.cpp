#include <gtest/gtest.h>

#include <map>
#include <set>

#include "hilsynth/gridworld.hpp"
#include "hilsynth/training.hpp"
#include "hilsynth/verify.hpp"
#include "test_util.hpp"

using namespace hilsynth;

namespace {

ScenarioConfig open_grid(int n) {
    ScenarioConfig c;
    c.width = c.height = n;
    c.obstacle_start = {n - 1, 0};
    c.goal = {n - 1, n - 1};
    c.agent_start = Position{0, 0};
    return c;
}

std::set<std::size_t> set_bits(const ObsVector& z) {
    std::set<std::size_t> out;
    for (std::size_t i = 1; i <= 8; ++i)
        if (z.bit(i)) out.insert(i);
    return out;
}

} // namespace

TEST(Observe, CornerSeesWallsLeftAndBelow) {
    Grid g(open_grid(5));
    const auto z = g.observe({{0, 0}, {4, 4}});
    EXPECT_EQ(set_bits(z), (std::set<std::size_t>{1, 2, 3, 7, 8}));
}

TEST(Observe, ObstacleDownLeftSetsOnlyBit1) {
    Grid g(open_grid(5));
    EXPECT_EQ(set_bits(g.observe({{2, 2}, {1, 1}})), (std::set<std::size_t>{1}));
}

TEST(Observe, ObstacleUpRightSetsOnlyBit5) {
    Grid g(open_grid(5));
    EXPECT_EQ(set_bits(g.observe({{2, 2}, {3, 3}})), (std::set<std::size_t>{5}));
}

TEST(Observe, NeighborOrderMatchesBits) {
    // each neighbor offset, in order, lights exactly its own bit
    Grid g(open_grid(5));
    const Position a{2, 2};
    const Position offsets[8] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}};
    for (std::size_t i = 0; i < 8; ++i)
        EXPECT_EQ(set_bits(g.observe({a, a + offsets[i]})), (std::set<std::size_t>{i + 1}));
}

TEST(Observe, LandmarksCount) {
    auto c = open_grid(5);
    c.landmarks = {{3, 2}};
    Grid g(c);
    EXPECT_EQ(set_bits(g.observe({{2, 2}, {0, 4}})), (std::set<std::size_t>{6}));
}

TEST(ObstacleStep, InteriorUniformOverFour) {
    Grid g(open_grid(5));
    const auto d = g.obstacle_step({2, 2});
    ASSERT_EQ(d.size(), 4u);
    for (const auto& [c, p] : d.entries()) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(ObstacleStep, CornerUniformOverTwo) {
    Grid g(open_grid(5));
    const auto d = g.obstacle_step({0, 0});
    ASSERT_EQ(d.size(), 2u);
    EXPECT_DOUBLE_EQ(d.probability(g.cell({1, 0})), 0.5);
    EXPECT_DOUBLE_EQ(d.probability(g.cell({0, 1})), 0.5);
}

TEST(ObstacleStep, EnclosedStaysPut) {
    auto c = open_grid(4);
    c.obstacle_start = {0, 0};
    c.landmarks = {{1, 0}, {0, 1}};
    c.agent_start = Position{2, 2};
    Grid g(c);
    EXPECT_EQ(g.obstacle_step({0, 0}), Distribution::dirac(g.cell({0, 0})));
}

TEST(ObstacleStep, LandmarksBlockMoves) {
    auto c = open_grid(5);
    c.landmarks = {{2, 3}};
    Grid g(c);
    const auto d = g.obstacle_step({2, 2});
    EXPECT_EQ(d.size(), 3u);
    EXPECT_DOUBLE_EQ(d.probability(g.cell({2, 3})), 0.0);
}

TEST(Grid, InvalidConfigsRejected) {
    auto bad = [](auto mutate) {
        auto c = open_grid(4);
        mutate(c);
        try {
            Grid g(c);
        } catch (const Error& e) {
            return e.code() == Errc::InvalidScenario;
        }
        return false;
    };
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.landmarks = {c.goal}; }));
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.obstacle_start = c.goal; }));
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.landmarks = {*c.agent_start}; }));
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.agent_start = c.obstacle_start; }));
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.goal = {4, 0}; }));
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.width = 2; }));
    EXPECT_TRUE(bad([](ScenarioConfig& c) { c.visibility = 2; }));
}

TEST(SimulateStep, StepIntoGoal) {
    Grid g(open_grid(5));
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        auto [next, event] = g.simulate_step({{3, 4}, {0, 0}}, Action::Right, rng);
        EXPECT_EQ(event, Event::Goal);
        EXPECT_EQ(next.agent, (Position{4, 4}));
    }
}

TEST(SimulateStep, LandmarkIsACrash) {
    auto c = open_grid(5);
    c.landmarks = {{2, 3}};
    Grid g(c);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(g.simulate_step({{2, 2}, {0, 0}}, Action::Up, rng).second, Event::Crash);
}

TEST(SimulateStep, WallIsASelfLoop) {
    Grid g(open_grid(5));
    Rng rng(1);
    EXPECT_EQ(g.simulate_step({{0, 2}, {4, 4}}, Action::Left, rng).first.agent, (Position{0, 2}));
}

TEST(SimulateStep, MonteCarloMatchesBuiltRows) {
    auto c = open_grid(5);
    c.landmarks = {{2, 3}};
    const auto model = build_pomdp(c);
    Rng rng(2024);
    const std::vector<std::pair<GridState, Action>> cases = {
        {{{1, 1}, {2, 2}}, Action::Right}, {{{0, 0}, {0, 2}}, Action::Up},   {{{3, 3}, {4, 4}}, Action::Down},
        {{{2, 1}, {3, 2}}, Action::Left},  {{{4, 1}, {4, 0}}, Action::Up},   {{{1, 3}, {1, 4}}, Action::Right}};
    const int samples = 100000;
    for (const auto& [s, a] : cases) {
        std::map<std::size_t, int> hits;
        for (int i = 0; i < samples; ++i) ++hits[model.state_id(model.grid.simulate_step(s, a, rng).first)];
        const auto* row = model.pomdp.mdp.row(model.state_id(s), index_of(a));
        ASSERT_NE(row, nullptr);
        double linf = 0.0;
        for (std::size_t t = 0; t < model.num_states(); ++t) {
            const double emp = hits.count(t) ? hits[t] / static_cast<double>(samples) : 0.0;
            linf = std::max(linf, std::abs(emp - row->probability(t)));
        }
        EXPECT_LE(linf, 0.01) << state_name(s) << " " << action_name(a);
    }
}

TEST(BuildPomdp, StateCountMatchesEnumeration) {
    for (int n : {3, 4, 5, 7}) {
        auto c = open_grid(n);
        c.landmarks = {{1, 1}};
        const auto model = build_pomdp(c);
        std::size_t enumerated = 0;
        for (int ax = 0; ax < n; ++ax)
            for (int ay = 0; ay < n; ++ay)
                for (int ox = 0; ox < n; ++ox)
                    for (int oy = 0; oy < n; ++oy) ++enumerated;
        EXPECT_EQ(model.num_states(), enumerated + 1);  // one crash sink
        EXPECT_EQ(model.num_states(), expected_state_count(c));
    }
}

TEST(BuildPomdp, FourByFourCountPinned) { EXPECT_EQ(build_pomdp(open_grid(4)).num_states(), 257u); }

TEST(BuildPomdp, LabelsAndAbsorption) {
    auto c = open_grid(4);
    c.landmarks = {{1, 2}};
    const auto m = build_pomdp(c);
    const auto& g = m.grid;
    for (std::size_t s = 0; s < m.sink; ++s) {
        const auto gs = *m.grid_state(s);
        const bool crash = gs.agent == gs.obstacle || g.is_landmark(gs.agent);
        const bool goal = !crash && gs.agent == c.goal;
        EXPECT_EQ(m.spec.bad.contains(s), crash);
        EXPECT_EQ(m.spec.goal.contains(s), goal);
        for (const auto& ch : m.pomdp.mdp.choices[s]) {
            if (goal) { EXPECT_EQ(ch.successors, Distribution::dirac(s)); }
            if (crash) { EXPECT_EQ(ch.successors, Distribution::dirac(m.sink)); }
        }
    }
    EXPECT_TRUE(m.spec.bad.contains(m.sink));
    for (const auto& ch : m.pomdp.mdp.choices[m.sink]) EXPECT_EQ(ch.successors, Distribution::dirac(m.sink));
    EXPECT_EQ(m.initial(), m.state_id({{0, 0}, c.obstacle_start}));
}

TEST(BuildPomdp, RandomConfigsValidate) {
    Rng rng(99);
    ScenarioRanges r;
    r.width = {3, 6};
    r.landmarks = {0, 3};
    for (int i = 0; i < 100; ++i) {
        const auto c = random_scenario(rng, r);
        const auto m = build_pomdp(c);
        EXPECT_TRUE(validate(m.pomdp).empty());
        EXPECT_LE(m.pomdp.num_observations(), 256u + 1u);  // bit vectors plus the crash observation
        for (std::size_t s = 0; s < m.num_states(); ++s) {
            EXPECT_EQ(m.pomdp.mdp.choices[s].size(), 4u);
            for (const auto& ch : m.pomdp.mdp.choices[s]) EXPECT_NEAR(ch.successors.total(), 1.0, 1e-9);
        }
    }
}

TEST(BuildPomdp, ObservationsAreObserve) {
    auto c = open_grid(4);
    c.landmarks = {{2, 1}};
    const auto m = build_pomdp(c);
    for (std::size_t s = 0; s < m.sink; ++s)
        EXPECT_EQ(m.pomdp.observation_names[m.pomdp.observation_of[s]], m.grid.observe(*m.grid_state(s)).str());
}

TEST(BuildPomdp, FrozenObstacleGivesDeterministicReach) {
    // an obstacle boxed in by landmarks never moves, so the agent's motion is deterministic
    ScenarioConfig c;
    c.width = c.height = 3;
    c.obstacle_start = {0, 0};
    c.landmarks = {{1, 0}, {0, 1}};
    c.goal = {2, 2};
    c.agent_start = Position{2, 0};
    const auto m = build_pomdp(c);
    const auto bound = mdp_max_reach(m.pomdp.mdp, m.spec.bad, m.spec.goal);
    for (auto p : m.grid.free_cells())
        EXPECT_NEAR(bound.per_state_prob[m.state_id({p, c.obstacle_start})], 1.0, 1e-12) << p.x << "," << p.y;
}

TEST(RandomScenario, FixedRangesReproduceTheConfig) {
    ScenarioRanges r;
    r.width = {5, 5};
    r.landmarks = {1, 1};
    r.goal = Position{4, 4};
    r.obstacle_start = Position{0, 4};
    r.agent_start = Position{0, 0};
    r.landmark_positions = std::vector<Position>{{2, 2}};
    Rng rng(1);
    const auto c = random_scenario(rng, r);
    EXPECT_EQ(c.width, 5);
    EXPECT_EQ(c.height, 5);
    EXPECT_EQ(c.landmarks, (std::vector<Position>{{2, 2}}));
    EXPECT_EQ(c.goal, (Position{4, 4}));
    EXPECT_EQ(c.obstacle_start, (Position{0, 4}));
    EXPECT_EQ(c.agent_start, (std::optional<Position>{Position{0, 0}}));
}

TEST(RandomScenario, WidthsWithinRangeAndDeterministic) {
    ScenarioRanges r;
    Rng a(7), b(7);
    for (int i = 0; i < 200; ++i) {
        const auto c = random_scenario(a, r);
        EXPECT_GE(c.width, 4);
        EXPECT_LE(c.width, 11);
        EXPECT_EQ(c.width, c.height);
        EXPECT_EQ(c, random_scenario(b, r));
    }
}

TEST(RandomScenario, UnsatisfiableRangesThrow) {
    ScenarioRanges r;
    r.width = {5, 4};
    Rng rng(1);
    EXPECT_THROW(random_scenario(rng, r), Error);
    r.width = {3, 3};
    r.landmarks = {8, 8};
    try {
        random_scenario(rng, r);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidRanges);
    }
}

TEST(ScenarioJson, RoundTrip) {
    const auto c = testutil::scenario_4x4();
    EXPECT_EQ(scenario_from_json(scenario_to_json(c)), c);
    auto random_start = c;
    random_start.agent_start.reset();
    const auto j = scenario_to_json(random_start);
    EXPECT_EQ(j.at("agent_start"), "random");
    EXPECT_EQ(scenario_from_json(j), random_start);
}

TEST(ScenarioJson, FixtureMatchesLayout) {
    const auto c = testutil::scenario_4x4();
    EXPECT_EQ(c.width, 4);
    EXPECT_EQ(c.landmarks, (std::vector<Position>{{1, 2}}));
    EXPECT_EQ(c.obstacle_start, (Position{0, 2}));
    EXPECT_EQ(c.goal, (Position{3, 3}));
}
