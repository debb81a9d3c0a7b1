// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "cli_util.hpp"
#include "hilsynth/refine.hpp"
#include "test_util.hpp"

using namespace hilsynth;
namespace fs = std::filesystem;

namespace {

struct Outcome_ {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome_ colors_oracle() {
    const auto t0 = Clock::now();
    const auto m = testutil::colors();
    const auto spec = testutil::colors_spec(m, 0.5);
    bool ok = true;
    std::ostringstream d;
    const double up = check_spec(induce_mc(m.pomdp, testutil::colors_strategy(m, "strategy_up.json")), spec).value_at_initial;
    ok &= std::abs(up - 2.0 / 3.0) <= 1e-9;
    d << "up=" << up;
    for (const char* p : {"0.25", "0.5", "0.75"}) {
        const double v =
            check_spec(induce_mc(m.pomdp, testutil::colors_strategy(m, std::string("strategy_p") + p + ".json")), spec)
                .value_at_initial;
        ok &= std::abs(v - (2.0 / 3.0 + std::stod(p) / 3.0)) <= 1e-9;
        d << " p" << p << "=" << v;
    }
    const double bound = mdp_max_reach(m.pomdp.mdp, spec.bad, spec.goal).value_at_initial;
    ok &= std::abs(bound - 1.0) <= 1e-9;
    const double secs = seconds_since(t0);
    ok &= secs < 1.0;
    d << " bound=" << bound << " time=" << fmt("%.3fs", secs);
    return {ok, d.str()};
}

Outcome_ hoeffding() {
    const auto n = hoeffding_min_samples(0.05, 0.01);
    const auto pooled = apply_efficiency(n, 4.0);
    return {n == 1060 && pooled == 265, std::to_string(n) + " / 4 -> " + std::to_string(pooled)};
}

Outcome_ feature_algebra() {
    const auto t0 = Clock::now();
    const auto& table = standard_feature_classes();
    std::vector<std::pair<ObsVector, Action>> pairs;
    for (unsigned long c = 0; c < ObsVector::num_values; ++c)
        for (auto a : kActions) pairs.emplace_back(ObsVector::from_code(c), a);
    // equivalence agrees with a partition on every ordered pair, so it is reflexive, symmetric and transitive
    bool partition = true;
    for (const auto& [z1, a1] : pairs)
        for (const auto& [z2, a2] : pairs)
            if (equivalent(z1, a1, z2, a2) != (table.class_id(z1, a1) == table.class_id(z2, a2))) partition = false;
    ObsVector down_left, up_right;
    down_left.set(1);
    up_right.set(5);
    const bool pair = equivalent(down_left, Action::Right, up_right, Action::Left) &&
                      feature(down_left, Action::Right) == FeatureTuple{1, 0, 1};
    std::size_t largest = 0;
    for (std::size_t id = 0; id < table.classes().size(); ++id)
        for (auto a : kActions) largest = std::max(largest, table.size_for_action(id, a));
    const double secs = seconds_since(t0);
    return {partition && pair && largest <= 70 && secs < 1.0,
            "pairs=" + std::to_string(pairs.size()) + " classes=" + std::to_string(table.classes().size()) +
                " largest_per_action=" + std::to_string(largest) + " time=" + fmt("%.3fs", secs)};
}

Mc chain(std::vector<Distribution> rows) {
    Mc mc;
    mc.rows = std::move(rows);
    for (std::size_t s = 0; s < mc.rows.size(); ++s) mc.state_names.push_back("s" + std::to_string(s));
    return mc;
}

Outcome_ checker_oracle() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> size(2, 6);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = size(rng);
        const auto mc = testutil::random_mc(rng, n);
        StateSet goal(n, {n - 1}), bad(n);
        if (n > 2 && rng() % 2) bad.insert(n - 2);
        const auto r = reach_avoid_prob(mc, bad, goal);
        const auto oracle = testutil::bounded_reach(mc, bad, goal, 10000);
        for (std::size_t s = 0; s < n; ++s) worst = std::max(worst, std::abs(r.per_state_prob[s] - oracle[s]));
    }
    // hand mixtures: straight corridor, and half one step / half three steps
    const auto corridor = chain({Distribution::dirac(1), Distribution::dirac(2), Distribution::dirac(3), Distribution::dirac(3)});
    const auto mixed = chain({Distribution::from_probabilities({{1, 0.5}, {3, 0.5}}), Distribution::dirac(2),
                              Distribution::dirac(3), Distribution::dirac(3)});
    const auto c1 = conditional_expected_cost(corridor, StateSet(4), StateSet(4, {3})).value;
    const auto c2 = conditional_expected_cost(mixed, StateSet(4), StateSet(4, {3})).value;
    const auto stuck = conditional_expected_cost(chain({Distribution::dirac(0), Distribution::dirac(1)}), StateSet(2),
                                                 StateSet(2, {1}))
                           .value;
    const bool cost_ok = c1 && c2 && std::abs(*c1 - 3.0) <= 1e-9 && std::abs(*c2 - 2.0) <= 1e-9 && !stuck;
    return {worst <= 1e-6 && cost_ok, "max_dev=" + fmt("%.2e", worst) + " cost=" + (c1 ? fmt("%.9g", *c1) : "-") + "," +
                                          (c2 ? fmt("%.9g", *c2) : "-") + (stuck ? ",defined" : ",undefined")};
}

Outcome_ bound_soundness() {
    Rng scenario_rng(2024);
    std::mt19937_64 rng(2024);
    std::size_t violations = 0, checks = 0;
    double tightest = -1.0;
    for (int i = 0; i < 10; ++i) {
        const auto model = build_pomdp(random_scenario(scenario_rng, testutil::small_ranges()));
        const double bound = mdp_max_reach(model.pomdp.mdp, model.spec.bad, model.spec.goal).value_at_initial;
        for (int j = 0; j < 50; ++j) {
            const auto mc = induce_mc(model.pomdp, testutil::random_strategy(model.pomdp, rng));
            const double v = reach_avoid_prob(mc, model.spec.bad, model.spec.goal).value_at_initial;
            violations += v > bound + 1e-8;
            tightest = std::max(tightest, v - bound);
            ++checks;
        }
    }
    return {violations == 0,
            std::to_string(checks) + " checks, violations=" + std::to_string(violations) + " max(value-bound)=" + fmt("%.3g", tightest)};
}

TrainingSet demonstrations() {
    return training_set_from_log(collect_demonstrations(ScenarioRanges{}, ScriptedDemonstrator{}, 1, 0, 265));
}

Outcome_ refinement_trend() {
    const auto t0 = Clock::now();
    const auto model = build_pomdp(testutil::scenario_4x4(), 0.99);
    const auto initial = initial_strategy(demonstrations(), model.pomdp);
    RefineOptions o;
    o.seed = 1;
    o.k = 10;
    o.max_iters = 10;
    o.plateau = 1e-3;
    const auto r = refine_loop(model, initial, ScriptedDemonstrator{}, o);
    std::ostringstream d;
    bool monotone = true;
    for (std::size_t i = 0; i < r.history.size(); ++i) {
        d << (i ? "," : "") << fmt("%.3f", r.history[i].prob);
        if (i && r.history[i].prob < r.history[i - 1].prob - 0.02) monotone = false;
    }
    const bool improved = r.history.size() > 4 && r.history[4].prob - r.history[0].prob >= 0.10;
    const bool plateau = r.stop == StopReason::Plateau && r.history.size() - 1 <= 10;
    const double secs = seconds_since(t0);
    d << " stop=" << stop_reason_name(r.stop) << " time=" << fmt("%.1fs", secs);
    return {monotone && improved && plateau && secs < 120.0, d.str()};
}

Outcome_ scale() {
    const auto t0 = Clock::now();
    const auto config = scenario_from_json(read_json(testutil::data_path("scenario_10x10.json")));
    const auto model = build_pomdp(config, 0.9);
    const auto strategy = initial_strategy(demonstrations(), model.pomdp);
    const auto result = check_spec(induce_mc(model.pomdp, strategy), model.spec);
    const double secs = seconds_since(t0);
    // every (agent, obstacle) cell pair plus the crash sink
    std::size_t enumerated = 0;
    for (int a = 0; a < config.width * config.height; ++a)
        for (int b = 0; b < config.width * config.height; ++b) ++enumerated;
    ++enumerated;
    return {model.num_states() == enumerated && secs < 60.0,
            "states=" + std::to_string(model.num_states()) + " expected=" + std::to_string(enumerated) +
                " prob=" + fmt("%.4f", result.value_at_initial) + " time=" + fmt("%.2fs", secs)};
}

Outcome_ determinism() {
    const auto a = testutil::scratch_dir("accept-a"), b = testutil::scratch_dir("accept-b");
    Outcome_ out;
    if (!testutil::produce_artifacts(a, HILSYNTH_DATA_DIR) || !testutil::produce_artifacts(b, HILSYNTH_DATA_DIR)) {
        out.detail = "a subcommand failed";
    } else {
        std::size_t same = 0;
        std::string differing;
        for (const auto& f : testutil::artifact_files()) {
            if (fs::exists(a / f) && read_text(a / f) == read_text(b / f)) ++same;
            else differing += " " + f;
        }
        out.pass = same == testutil::artifact_files().size();
        out.detail = std::to_string(same) + "/" + std::to_string(testutil::artifact_files().size()) + " identical" + differing;
    }
    fs::remove_all(a);
    fs::remove_all(b);
    return out;
}

} // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome_()>>> criteria{
        {"colors-oracle", colors_oracle},         {"hoeffding", hoeffding},
        {"feature-algebra", feature_algebra}, {"checker-oracle", checker_oracle},
        {"bound-soundness", bound_soundness}, {"refinement-trend", refinement_trend},
        {"scale-10x10", scale},               {"cli-determinism", determinism},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome_ o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed ? 1 : 0;
}
