// Headless driver: scenario generation, demonstrations, cloning, checking, refinement, service.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hilsynth/cloning.hpp"
#include "hilsynth/gridworld.hpp"
#include "hilsynth/model_io.hpp"
#include "hilsynth/refine.hpp"
#include "hilsynth/server.hpp"
#include "hilsynth/training.hpp"
#include "hilsynth/verify.hpp"

using namespace hilsynth;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kInternal = 1, kInvalidInput = 2, kUnsat = 3, kNoConvergence = 4 };

/// Verdict-level failure that is not an error (check --expect-sat).
struct UnsatExit {};

int fail(const std::string& code, const std::string& message, int exit_code, json extra = json::object()) {
    json j{{"v", kSchemaVersion}, {"error", code}, {"message", message}};
    j.update(extra);
    std::cerr << j.dump() << "\n";
    return exit_code;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

void emit(const json& j, const std::string& out) {
    std::cout << j.dump() << "\n";
    if (!out.empty()) write_text(out, canonical_dump(j));
}

ScenarioRanges load_ranges(const std::string& path) {
    return path.empty() ? ScenarioRanges{} : ranges_from_json(read_json(path));
}

ScenarioConfig load_scenario(const std::string& path) { return scenario_from_json(read_json(path)); }

StrategyTable load_strategy(const std::string& path) { return strategy_from_json(read_json(path)); }

SolverOptions solver_options(const std::string& method, double tolerance) {
    SolverOptions o;
    if (method == "gs") o.method = SolverMethod::GaussSeidel;
    else if (method == "jacobi") o.method = SolverMethod::Jacobi;
    else throw Error(Errc::InvalidParams, "method must be gs or jacobi");
    o.tolerance = tolerance;
    return o;
}

/// A scenario or an explicit model file, with the spec read from the scenario labels or the model's goal/bad labels.
struct Problem {
    std::optional<GridModel> grid;
    std::optional<ModelFile> file;
    Spec spec;

    const Pomdp& pomdp() const { return grid ? grid->pomdp : file->pomdp; }
};

Problem load_problem(const std::string& scenario, const std::string& model, const std::string& kind, double threshold) {
    if (scenario.empty() == model.empty()) throw Error(Errc::InvalidParams, "give exactly one of --scenario, --model");
    Problem p;
    if (!scenario.empty()) {
        p.grid = build_pomdp(load_scenario(scenario), threshold);
        p.spec = p.grid->spec;
    } else {
        p.file = load_model(model);
        p.spec = Spec{SpecKind::ReachAvoidProb, p.file->label("bad"), p.file->label("goal"), threshold};
    }
    if (kind == "prob") p.spec.kind = SpecKind::ReachAvoidProb;
    else if (kind == "cost") p.spec.kind = SpecKind::ExpectedCost;
    else throw Error(Errc::InvalidSpec, "kind must be prob or cost");
    require_valid_spec(p.spec);
    return p;
}

struct Args {
    std::uint64_t seed = 0;
    std::string out;
    std::string ranges;
    std::string scenario;
    std::string model;
    std::string strategy;
    std::string log;
    std::string training;
    std::string classes_out;
    std::string strategy_out;
    std::string kind = "prob";
    std::string method = "gs";
    double tolerance = 1e-10;
    double threshold = 0.0;
    double noise = 0.1;
    double eps = 0.05;
    double delta = 0.01;
    double efficiency = 1.0;
    std::size_t count = 1;
    std::size_t episodes = 0;
    std::uint64_t min_steps = 0;
    std::size_t k = 10;
    std::size_t max_iters = 10;
    double plateau = 1e-3;
    bool expect_sat = false;
    std::string address = "127.0.0.1";
    unsigned short port = 8080;
    std::string data_dir = "hilsynth-data";
    std::size_t workers = 2;
};

int cmd_gen(const Args& a) {
    if (a.out.empty()) throw Error(Errc::InvalidParams, "--out directory is required");
    const auto ranges = load_ranges(a.ranges);
    fs::create_directories(a.out);
    Rng rng(a.seed);
    json files = json::array();
    for (std::size_t i = 0; i < a.count; ++i) {
        const auto config = random_scenario(rng, ranges);
        char name[32];
        std::snprintf(name, sizeof name, "scenario-%03zu.json", i);
        write_text(fs::path(a.out) / name, canonical_dump(scenario_to_json(config)));
        files.push_back(name);
    }
    std::cout << json{{"v", kSchemaVersion}, {"seed", a.seed}, {"files", files}}.dump() << "\n";
    return kOk;
}

int cmd_demo(const Args& a) {
    if (a.out.empty()) throw Error(Errc::InvalidParams, "--out log file is required");
    const auto ranges = load_ranges(a.ranges);
    ScriptedDemonstrator demonstrator({a.noise, 0.9, 0.02});
    const auto log = collect_demonstrations(ranges, demonstrator, a.seed, a.episodes, a.min_steps);
    std::string text;
    std::size_t goal = 0, crash = 0, abort = 0, steps = 0;
    for (const auto& t : log) {
        text += trajectory_line(t);
        steps += t.steps.size();
        (t.outcome == Outcome::Goal ? goal : t.outcome == Outcome::Crash ? crash : abort) += 1;
    }
    write_text(a.out, text);
    if (!a.training.empty()) write_text(a.training, training_set_from_log(log).to_csv());
    std::cout << json{{"v", kSchemaVersion},
                      {"seed", a.seed},
                      {"noise", a.noise},
                      {"episodes", log.size()},
                      {"steps", steps},
                      {"goal", goal},
                      {"crash", crash},
                      {"abort", abort}}
                     .dump()
              << "\n";
    return kOk;
}

int cmd_clone(const Args& a) {
    if (a.log.empty() == a.training.empty()) throw Error(Errc::InvalidParams, "give exactly one of --log, --training");
    if (a.out.empty()) throw Error(Errc::InvalidParams, "--out strategy file is required");
    const auto ts = a.log.empty() ? TrainingSet::from_csv(read_text(a.training))
                                  : training_set_from_log(parse_trajectory_log(read_text(a.log)));
    const auto table = clone_table(ts);
    write_text(a.out, write_strategy(table));
    if (!a.classes_out.empty()) write_text(a.classes_out, standard_feature_classes().to_csv());
    std::cout << json{{"v", kSchemaVersion}, {"training_size", ts.size()}, {"strategy_hash", strategy_hash(table)}}.dump()
              << "\n";
    return kOk;
}

int cmd_check(const Args& a) {
    if (a.strategy.empty()) throw Error(Errc::InvalidParams, "--strategy is required");
    const auto t0 = std::chrono::steady_clock::now();
    const auto problem = load_problem(a.scenario, a.model, a.kind, a.threshold);
    const auto strategy = bind_strategy(problem.pomdp(), load_strategy(a.strategy));
    const auto build_ms = elapsed_ms(t0);
    const auto t1 = std::chrono::steady_clock::now();
    const auto mc = induce_mc(problem.pomdp(), strategy);
    const auto result = check_spec(mc, problem.spec, solver_options(a.method, a.tolerance));
    const auto check_ms = elapsed_ms(t1);

    json j{{"v", kSchemaVersion},
           {"prob", result.value_at_initial},
           {"cost", result.conditional_expected_cost ? json(*result.conditional_expected_cost) : json(nullptr)},
           {"verdict", verdict_name(*result.verdict)},
           {"states", mc.num_states()},
           {"residual", result.residual},
           {"iterations", result.iterations},
           {"params", {{"kind", a.kind}, {"threshold", a.threshold}, {"method", a.method}, {"tolerance", a.tolerance}}}};
    if (!a.out.empty()) write_text(a.out, canonical_dump(j));  // timings stay out of the artifact
    j["build_ms"] = build_ms;
    j["check_ms"] = check_ms;
    std::cout << j.dump() << "\n";
    if (a.expect_sat && *result.verdict != Verdict::Sat) throw UnsatExit{};
    return kOk;
}

int cmd_bound(const Args& a) {
    const auto problem = load_problem(a.scenario, a.model, "prob", a.threshold);
    const auto r = mdp_max_reach(problem.pomdp().mdp, problem.spec.bad, problem.spec.goal,
                                 solver_options(a.method, a.tolerance));
    emit({{"v", kSchemaVersion},
          {"bound", r.value_at_initial},
          {"states", problem.pomdp().mdp.num_states()},
          {"iterations", r.iterations}},
         a.out);
    return kOk;
}

int cmd_refine(const Args& a) {
    if (a.scenario.empty() || a.strategy.empty()) throw Error(Errc::InvalidParams, "--scenario and --strategy are required");
    const auto model = build_pomdp(load_scenario(a.scenario), a.threshold);
    const auto initial = bind_strategy(model.pomdp, load_strategy(a.strategy));
    ScriptedDemonstrator demonstrator({a.noise, 0.9, 0.02});
    RefineOptions options;
    options.seed = a.seed;
    options.k = a.k;
    options.max_iters = a.max_iters;
    options.plateau = a.plateau;
    options.solver = solver_options(a.method, a.tolerance);
    const auto result = refine_loop(model, initial, demonstrator, options);

    json history = json::array();
    for (const auto& r : result.history) history.push_back(iteration_to_json(r));
    json j{{"v", kSchemaVersion},
           {"params",
            {{"seed", a.seed},
             {"k", a.k},
             {"max_iters", a.max_iters},
             {"plateau", a.plateau},
             {"threshold", a.threshold},
             {"noise", a.noise}}},
           {"stop", stop_reason_name(result.stop)},
           {"history", history},
           {"final_strategy", hash_of(model.pomdp, result.strategy)}};
    if (!result.error.empty()) j["error"] = result.error;
    emit(j, a.out);
    if (!a.strategy_out.empty())
        write_text(a.strategy_out, write_strategy(to_table(model.pomdp, result.strategy, {{"refined_from", a.strategy}})));
    return result.stop == StopReason::Aborted ? kInternal : kOk;
}

int cmd_heatmap(const Args& a) {
    if (a.scenario.empty() || a.strategy.empty()) throw Error(Errc::InvalidParams, "--scenario and --strategy are required");
    const auto model = build_pomdp(load_scenario(a.scenario));
    const auto h = heatmap(model, bind_strategy(model.pomdp, load_strategy(a.strategy)), solver_options(a.method, a.tolerance));
    const auto csv = h.to_csv();
    if (a.out.empty()) std::cout << csv;
    else write_text(a.out, csv);
    return kOk;
}

int cmd_hoeffding(const Args& a) {
    const auto n = hoeffding_min_samples(a.eps, a.delta);
    std::cout << apply_efficiency(n, a.efficiency) << "\n";
    return kOk;
}

int cmd_serve(const Args& a) {
    service::App app({a.data_dir, a.workers, 0});
    service::Server server(app, a.address, a.port);
    std::cout << json{{"v", kSchemaVersion}, {"address", a.address}, {"port", server.port()}}.dump() << std::endl;
    server.run();
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App cli{"hilsynth: strategy synthesis from demonstrations, checking and refinement"};
    cli.require_subcommand(1);
    Args a;

    auto seed = [&](CLI::App* sub) { sub->add_option("--seed", a.seed, "RNG seed")->capture_default_str(); };
    auto solver = [&](CLI::App* sub) {
        sub->add_option("--method", a.method, "solver: gs | jacobi")->capture_default_str();
        sub->add_option("--tolerance", a.tolerance, "max-norm change per sweep")->capture_default_str();
    };
    auto problem = [&](CLI::App* sub) {
        sub->add_option("--scenario", a.scenario, "scenario JSON file");
        sub->add_option("--model", a.model, "model JSON file");
    };

    auto gen = cli.add_subcommand("gen", "sample scenario files");
    seed(gen);
    gen->add_option("--ranges", a.ranges, "ranges JSON file (default ranges if omitted)");
    gen->add_option("--count", a.count, "number of scenarios")->capture_default_str();
    gen->add_option("--out", a.out, "output directory");

    auto demo = cli.add_subcommand("demo", "run scripted-demonstrator episodes");
    seed(demo);
    demo->add_option("--ranges", a.ranges, "ranges JSON file (default ranges if omitted)");
    demo->add_option("--episodes", a.episodes, "minimum episode count")->capture_default_str();
    demo->add_option("--min-steps", a.min_steps, "keep going until this many steps are recorded")->capture_default_str();
    demo->add_option("--noise", a.noise, "demonstrator noise")->capture_default_str();
    demo->add_option("--out", a.out, "trajectory log (JSON lines)");
    demo->add_option("--training", a.training, "also write the training set CSV here");

    auto clone = cli.add_subcommand("clone", "clone a strategy from demonstrations");
    seed(clone);
    clone->add_option("--log", a.log, "trajectory log (JSON lines)");
    clone->add_option("--training", a.training, "training set CSV");
    clone->add_option("--out", a.out, "strategy file");
    clone->add_option("--classes-out", a.classes_out, "write the feature class table CSV here");

    auto check = cli.add_subcommand("check", "model-check a strategy");
    seed(check);
    problem(check);
    solver(check);
    check->add_option("--strategy", a.strategy, "strategy file");
    check->add_option("--kind", a.kind, "prob | cost")->capture_default_str();
    check->add_option("--threshold", a.threshold, "lambda for prob, cost bound for cost")->capture_default_str();
    check->add_flag("--expect-sat", a.expect_sat, "exit 3 on an UNSAT verdict");
    check->add_option("--out", a.out, "result file (without timings)");

    auto bound = cli.add_subcommand("bound", "maximal reach-avoid value of the underlying MDP");
    seed(bound);
    problem(bound);
    solver(bound);
    bound->add_option("--out", a.out, "result file");

    auto refine = cli.add_subcommand("refine", "run the refinement loop with the scripted demonstrator");
    seed(refine);
    solver(refine);
    refine->add_option("--scenario", a.scenario, "scenario JSON file");
    refine->add_option("--strategy", a.strategy, "initial strategy file");
    refine->add_option("--threshold", a.threshold, "lambda")->capture_default_str();
    refine->add_option("--k", a.k, "critical states (sessions) per iteration")->capture_default_str();
    refine->add_option("--max-iters", a.max_iters, "refinement rounds")->capture_default_str();
    refine->add_option("--plateau", a.plateau, "stop when the value moves less than this")->capture_default_str();
    refine->add_option("--noise", a.noise, "demonstrator noise")->capture_default_str();
    refine->add_option("--out", a.out, "history file");
    refine->add_option("--strategy-out", a.strategy_out, "refined strategy file");

    auto heat = cli.add_subcommand("heatmap", "value per start cell as CSV");
    seed(heat);
    solver(heat);
    heat->add_option("--scenario", a.scenario, "scenario JSON file");
    heat->add_option("--strategy", a.strategy, "strategy file");
    heat->add_option("--out", a.out, "CSV file (stdout if omitted)");

    auto hoeff = cli.add_subcommand("hoeffding", "minimum demonstration count");
    seed(hoeff);
    hoeff->add_option("--eps", a.eps, "deviation")->capture_default_str();
    hoeff->add_option("--delta", a.delta, "failure probability")->capture_default_str();
    hoeff->add_option("--efficiency", a.efficiency, "divide by this pooling factor")->capture_default_str();

    auto serve = cli.add_subcommand("serve", "start the HTTP/WebSocket service");
    serve->add_option("--address", a.address, "bind address")->capture_default_str();
    serve->add_option("--port", a.port, "port, 0 for an ephemeral one")->capture_default_str();
    serve->add_option("--data-dir", a.data_dir, "storage directory")->capture_default_str();
    serve->add_option("--workers", a.workers, "job worker threads")->capture_default_str();

    try {
        cli.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return cli.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("InvalidParams", e.what(), kInvalidInput);
    }

    try {
        if (*gen) return cmd_gen(a);
        if (*demo) return cmd_demo(a);
        if (*clone) return cmd_clone(a);
        if (*check) return cmd_check(a);
        if (*bound) return cmd_bound(a);
        if (*refine) return cmd_refine(a);
        if (*heat) return cmd_heatmap(a);
        if (*hoeff) return cmd_hoeffding(a);
        if (*serve) return cmd_serve(a);
    } catch (const UnsatExit&) {
        return kUnsat;
    } catch (const NoConvergenceError& e) {
        return fail("NoConvergence", e.what(), kNoConvergence, {{"residual", e.residual()}, {"iterations", e.iterations()}});
    } catch (const Error& e) {
        return fail(to_string(e.code()), e.what(), kInvalidInput);
    } catch (const std::exception& e) {
        return fail("Internal", e.what(), kInternal);
    }
    return kInternal;
}
