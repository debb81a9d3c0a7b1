#include <gtest/gtest.h>

#include <map>

#include "hilsynth/training.hpp"
#include "test_util.hpp"

using namespace hilsynth;

namespace {

ScenarioConfig open_grid(int w, int h) {
    ScenarioConfig c;
    c.width = w;
    c.height = h;
    c.obstacle_start = {w - 1, 0};
    c.goal = {w - 1, h - 1};
    c.agent_start = Position{0, 0};
    return c;
}

/// Hand-built trajectory: agent walks the given actions from start while the obstacle follows `obstacle_path`.
Trajectory walk(const ScenarioConfig& c, Position start, std::vector<Action> actions, std::vector<Position> obstacle_path,
                Outcome outcome) {
    Grid g(c);
    Trajectory t;
    t.session_id = "t";
    t.scenario = c;
    GridState s{start, obstacle_path.at(0)};
    for (std::size_t i = 0; i < actions.size(); ++i) {
        GridState next{g.move(s.agent, actions[i]), obstacle_path.at(i + 1)};
        const auto ev = g.classify(next);
        t.steps.push_back({s, g.observe(s), actions[i], ev});
        s = next;
    }
    t.outcome = outcome;
    return t;
}

} // namespace

TEST(Hoeffding, PaperValues) {
    EXPECT_EQ(hoeffding_min_samples(0.05, 0.01), 1060u);
    EXPECT_EQ(apply_efficiency(hoeffding_min_samples(0.05, 0.01), 4), 265u);
}

TEST(Hoeffding, DirectFormula) { EXPECT_EQ(hoeffding_min_samples(0.5, 0.5), 3u); }

TEST(Hoeffding, MonotoneInParameters) {
    std::uint64_t last = std::numeric_limits<std::uint64_t>::max();
    for (double eps = 0.01; eps <= 1.0; eps += 0.01) {
        const auto n = hoeffding_min_samples(eps, 0.05);
        EXPECT_LE(n, last);
        last = n;
    }
    last = std::numeric_limits<std::uint64_t>::max();
    for (double delta = 0.01; delta < 1.0; delta += 0.01) {
        const auto n = hoeffding_min_samples(0.1, delta);
        EXPECT_LE(n, last);
        last = n;
    }
}

TEST(Hoeffding, OutOfRangeParameters) {
    for (auto [e, d] : std::vector<std::pair<double, double>>{{0, 0.1}, {1.5, 0.1}, {0.1, 0}, {0.1, 1}}) {
        try {
            hoeffding_min_samples(e, d);
            FAIL();
        } catch (const Error& err) {
            EXPECT_EQ(err.code(), Errc::InvalidParams);
        }
    }
}

TEST(Record, ThreeStepTrajectory) {
    const auto c = open_grid(5, 5);
    const auto t = walk(c, {0, 0}, {Action::Right, Action::Right, Action::Up}, {{4, 0}, {4, 1}, {4, 2}, {4, 3}},
                        Outcome::Abort);
    ASSERT_EQ(trajectory_problem(t), "");
    const auto ts = record(TrainingSet{}, t);
    EXPECT_EQ(ts.size(), 3u);
    const auto twice = record(ts, t);
    for (const auto& st : t.steps) EXPECT_EQ(twice.count(st.obs, st.action), 2 * ts.count(st.obs, st.action));
}

TEST(Record, RejectsInconsistentTrajectories) {
    const auto c = open_grid(5, 5);
    auto t = walk(c, {0, 0}, {Action::Right, Action::Up}, {{4, 0}, {4, 1}, {4, 2}}, Outcome::Abort);
    t.steps[1].state.agent = {3, 3};  // teleport
    EXPECT_THROW(record(TrainingSet{}, t), Error);
    auto u = walk(c, {0, 0}, {Action::Right}, {{4, 0}, {4, 1}}, Outcome::Abort);
    u.steps[0].obs = ObsVector::from_code(0);
    try {
        record(TrainingSet{}, u);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::RejectedTrajectory);
    }
    auto v = walk(c, {0, 0}, {Action::Right, Action::Up}, {{4, 0}, {2, 0}, {2, 1}}, Outcome::Abort);  // obstacle jumps
    EXPECT_THROW(record(TrainingSet{}, v), Error);
}

TEST(Record, CountsEqualIndependentTally) {
    ScriptedDemonstrator demo;
    const auto log = collect_demonstrations(ScenarioRanges{}, demo, 5, 30);
    TrainingSet ts;
    for (const auto& t : log) ts = record(std::move(ts), t);
    std::map<std::pair<std::string, std::string>, std::uint64_t> tally;
    std::uint64_t steps = 0;
    for (const auto& t : log)
        for (const auto& st : t.steps) {
            ++tally[{st.obs.str(), action_name(st.action)}];
            ++steps;
        }
    EXPECT_EQ(ts.size(), steps);
    for (const auto& [key, n] : tally) EXPECT_EQ(ts.count(ObsVector::parse(key.first), *parse_action(key.second)), n);
}

TEST(Record, OrderDoesNotMatter) {
    ScriptedDemonstrator demo;
    const auto log = collect_demonstrations(ScenarioRanges{}, demo, 8, 2);
    EXPECT_EQ(record(record(TrainingSet{}, log[0]), log[1]), record(record(TrainingSet{}, log[1]), log[0]));
}

TEST(TrainingSet, CsvRoundTrip) {
    ScriptedDemonstrator demo;
    const auto ts = training_set_from_log(collect_demonstrations(ScenarioRanges{}, demo, 3, 10));
    EXPECT_EQ(TrainingSet::from_csv(ts.to_csv()), ts);
    EXPECT_EQ(TrainingSet{}.to_csv(), "obs_bits,action,count\n");
}

TEST(Saturation, Examples) {
    TrainingSet a;
    a.add(ObsVector::from_code(3), Action::Up, 10);
    EXPECT_TRUE(saturation_check(a, a, 1e-9));

    TrainingSet disjoint;
    disjoint.add(ObsVector::from_code(4), Action::Left, 5);
    EXPECT_TRUE(saturation_check(a, disjoint, 1e-9));

    TrainingSet b;
    b.add(ObsVector::from_code(3), Action::Up, 9);
    b.add(ObsVector::from_code(3), Action::Down, 1);
    EXPECT_NEAR(empirical_distance(a, b), 0.1, 1e-12);
    EXPECT_TRUE(saturation_check(a, b, 0.1));
    EXPECT_FALSE(saturation_check(a, b, 0.09));
}

TEST(Demonstrator, ConfidentGoesTowardGoal) {
    auto c = open_grid(5, 5);
    c.goal = {4, 2};
    c.obstacle_start = {0, 4};
    Grid g(c);
    const GridState s{{2, 2}, {0, 4}};
    ScriptedDemonstrator demo({0.0, 0.9, 0.02});
    Rng rng(1);
    EXPECT_EQ(demo.choose(g, Belief::dirac(g, s), g.observe(s), rng), Action::Right);
}

TEST(Demonstrator, NeverStepsIntoObservedObstacle) {
    auto c = open_grid(5, 5);
    c.goal = {4, 2};
    Grid g(c);
    const GridState s{{2, 2}, {3, 2}};
    const auto z = g.observe(s);
    ASSERT_TRUE(z.bit(6));
    ScriptedDemonstrator demo;  // default noise
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        Rng rng(seed);
        EXPECT_NE(demo.choose(g, Belief::dirac(g, s), z, rng), Action::Right);
        EXPECT_NE(demo.choose(g, Belief::uniform_consistent(g, z), z, rng), Action::Right);
    }
}

TEST(Demonstrator, BoxedInPicksUniformly) {
    ScenarioConfig c;
    c.width = c.height = 3;
    c.landmarks = {{0, 1}, {1, 2}, {2, 1}};
    c.obstacle_start = {1, 0};
    c.goal = {2, 2};
    c.agent_start = Position{1, 1};
    Grid g(c);
    const GridState s{{1, 1}, {1, 0}};
    const auto z = g.observe(s);
    ScriptedDemonstrator demo;
    Rng rng(4);
    std::map<Action, int> hits;
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++hits[demo.choose(g, Belief::dirac(g, s), z, rng)];
    ASSERT_EQ(hits.size(), 4u);
    for (const auto& [a, k] : hits) EXPECT_NEAR(k / static_cast<double>(n), 0.25, 0.01);
}

TEST(Demonstrator, LocalizedAgentTakesManhattanSteps) {
    // obstacle boxed into a corner by landmarks, far from the corridor the agent walks
    ScenarioConfig c;
    c.width = 8;
    c.height = 3;
    c.obstacle_start = {7, 0};
    c.landmarks = {{6, 0}, {7, 1}};
    c.goal = {5, 1};
    c.agent_start = Position{0, 1};
    Grid g(c);
    ScriptedDemonstrator demo({0.0, 0.9, 0.02});
    Rng rng(9);
    GridState s{{0, 1}, {7, 0}};
    std::size_t steps = 0;
    while (!(s.agent == c.goal) && steps < 50) {
        s.agent = g.move(s.agent, demo.choose(g, Belief::dirac(g, s), g.observe(s), rng));
        ++steps;
    }
    EXPECT_EQ(steps, static_cast<std::size_t>(manhattan({0, 1}, c.goal)));
}

TEST(Demonstrator, NoiselessEpisodesFromUnknownPositionReachGoal) {
    ScenarioConfig c;
    c.width = 8;
    c.height = 3;
    c.obstacle_start = {7, 0};
    c.landmarks = {{6, 0}, {7, 1}};
    c.goal = {5, 1};
    c.agent_start = Position{0, 1};
    Grid g(c);
    ScriptedDemonstrator demo({0.0, 0.9, 0.02});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto t = run_episode(g, {{0, 1}, {7, 0}}, demo, seed, 100);
        EXPECT_EQ(t.outcome, Outcome::Goal);
        EXPECT_GE(t.steps.size(), static_cast<std::size_t>(manhattan({0, 1}, c.goal)));
    }
}

TEST(Belief, TrueStateKeepsMassAlongEpisodes) {
    ScriptedDemonstrator demo;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto t = demonstration_episode(ScenarioRanges{}, demo, seed, 0);
        Grid g(t.scenario);
        if (t.steps.empty()) continue;
        auto belief = Belief::uniform_consistent(g, t.steps[0].obs);
        for (std::size_t i = 0; i < t.steps.size(); ++i) {
            const auto& st = t.steps[i];
            EXPECT_GT(belief.mass(g.cell(st.state.agent), g.cell(st.state.obstacle)), 0.0);
            double total = 0.0;
            for (double m : belief.masses()) total += m;
            EXPECT_NEAR(total, 1.0, 1e-9);
            if (i + 1 < t.steps.size()) belief = belief.after(g, st.action, t.steps[i + 1].obs);
        }
    }
}

TEST(Belief, UpdateMatchesBruteForceBayes) {
    auto c = open_grid(4, 4);
    c.landmarks = {{1, 2}};
    c.obstacle_start = {0, 2};
    Grid g(c);
    const GridState s0{{0, 0}, {0, 2}};
    const auto b0 = Belief::uniform_consistent(g, g.observe(s0));
    Rng rng(9);
    const auto [s1, ev] = g.simulate_step(s0, Action::Right, rng);
    ASSERT_EQ(ev, Event::None);
    const auto z1 = g.observe(s1);
    const auto b1 = b0.after(g, Action::Right, z1);

    // oracle: push every prior pair through the product dynamics and keep live pairs showing z1
    const auto cells = g.num_cells();
    std::vector<double> post(cells * cells, 0.0);
    double total = 0.0;
    for (std::size_t a = 0; a < cells; ++a)
        for (std::size_t o = 0; o < cells; ++o) {
            const double m = b0.mass(a, o);
            if (m == 0.0) continue;
            const auto agent = g.move(g.position(a), Action::Right);
            for (std::size_t o2 = 0; o2 < cells; ++o2) {
                const double p = g.obstacle_step(g.position(o)).probability(o2);
                const GridState s{agent, g.position(o2)};
                if (p == 0.0 || g.classify(s) != Event::None || g.observe(s) != z1) continue;
                post[g.cell(agent) * cells + o2] += m * p;
                total += m * p;
            }
        }
    for (std::size_t i = 0; i < post.size(); ++i) EXPECT_NEAR(b1.masses()[i], post[i] / total, 1e-12);
}

TEST(Episode, ReplaysFromItsSeed) {
    ScriptedDemonstrator demo;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto t = demonstration_episode(ScenarioRanges{}, demo, seed, 3);
        EXPECT_TRUE(replays_exactly(t));
        EXPECT_EQ(trajectory_problem(t), "");
        EXPECT_EQ(t, demonstration_episode(ScenarioRanges{}, demo, seed, 3));
    }
}

TEST(Episode, JsonRoundTrip) {
    ScriptedDemonstrator demo;
    const auto log = collect_demonstrations(ScenarioRanges{}, demo, 2, 5);
    std::string text;
    for (const auto& t : log) text += trajectory_line(t);
    EXPECT_EQ(parse_trajectory_log(text), log);
}

TEST(Episode, CollectStopsAtStepTarget) {
    ScriptedDemonstrator demo;
    EXPECT_TRUE(collect_demonstrations(ScenarioRanges{}, demo, 1, 0).empty());
    const auto log = collect_demonstrations(ScenarioRanges{}, demo, 1, 0, 265);
    std::size_t steps = 0;
    for (const auto& t : log) steps += t.steps.size();
    EXPECT_GE(steps, 265u);
    EXPECT_LT(steps - log.back().steps.size(), 265u);
}
