#ifndef HILSYNTH_SERVICE_HPP
#define HILSYNTH_SERVICE_HPP

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hilsynth/cloning.hpp"
#include "hilsynth/gridworld.hpp"
#include "hilsynth/model_io.hpp"
#include "hilsynth/refine.hpp"
#include "hilsynth/training.hpp"
#include "hilsynth/verify.hpp"

namespace hilsynth::service {

struct Request {
    std::string method;
    std::string target;  // path plus optional query
    std::string body;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

inline Response json_response(int status, const json& j) { return {status, "application/json", j.dump() + "\n"}; }

inline int http_status(Errc code) {
    switch (code) {
        case Errc::NotFound: return 404;
        case Errc::NoCounterexampleNeeded: return 409;
        case Errc::NoConvergence: return 500;
        case Errc::ParseError: return 400;
        default: return 422;
    }
}

inline json error_body(const Error& e) {
    json j{{"v", kSchemaVersion}, {"error", to_string(e.code())}, {"message", e.what()}};
    if (const auto* nc = dynamic_cast<const NoConvergenceError*>(&e)) {
        j["residual"] = nc->residual();
        j["iterations"] = nc->iterations();
    }
    return j;
}

/// Path segments and query parameters of a request target.
struct Target {
    std::vector<std::string> segments;
    std::map<std::string, std::string> query;

    static Target parse(std::string_view target) {
        Target t;
        const auto q = target.find('?');
        std::string_view path = target.substr(0, q);
        std::size_t pos = 0;
        while (pos < path.size()) {
            auto next = path.find('/', pos);
            if (next == std::string_view::npos) next = path.size();
            if (next > pos) t.segments.emplace_back(path.substr(pos, next - pos));
            pos = next + 1;
        }
        if (q != std::string_view::npos) {
            std::string_view rest = target.substr(q + 1);
            while (!rest.empty()) {
                auto amp = rest.find('&');
                auto item = rest.substr(0, amp);
                auto eq = item.find('=');
                if (eq == std::string_view::npos) t.query[std::string(item)] = "";
                else t.query[std::string(item.substr(0, eq))] = std::string(item.substr(eq + 1));
                if (amp == std::string_view::npos) break;
                rest = rest.substr(amp + 1);
            }
        }
        return t;
    }

    bool is(std::initializer_list<std::string_view> pattern) const {
        if (pattern.size() != segments.size()) return false;
        std::size_t i = 0;
        for (auto p : pattern) {
            if (p != "*" && p != segments[i]) return false;
            ++i;
        }
        return true;
    }
};

// ---------------------------------------------------------------------------
// Storage

/// Plain files under a data directory; artifacts are named by the SHA-256 of their canonical text.
class Store {
public:
    explicit Store(std::filesystem::path root) : root_(std::move(root)) {
        for (const char* dir : {"scenarios", "trajectories", "strategies", "results", "models", "training"})
            std::filesystem::create_directories(root_ / dir);
    }

    const std::filesystem::path& root() const noexcept { return root_; }

    std::string put(const std::string& kind, const std::string& text, const std::string& ext = ".json") {
        const auto id = sha256_hex(text);
        std::lock_guard lock(mu_);
        const auto path = root_ / kind / (id + ext);
        if (!std::filesystem::exists(path)) write_text(path, text);
        return id;
    }

    std::string get(const std::string& kind, const std::string& id, const std::string& ext = ".json") const {
        if (id.empty() || id.find_first_not_of("0123456789abcdefghijklmnopqrstuvwxyz-") != std::string::npos)
            throw Error(Errc::NotFound, kind + " '" + id + "'");
        const auto path = root_ / kind / (id + ext);
        std::lock_guard lock(mu_);
        if (!std::filesystem::exists(path)) throw Error(Errc::NotFound, kind + " '" + id + "'");
        return read_text(path);
    }

    void append(const std::filesystem::path& relative, const std::string& line) {
        std::lock_guard lock(mu_);
        std::ofstream out(root_ / relative, std::ios::app | std::ios::binary);
        out << line;
    }

    void write(const std::filesystem::path& relative, const std::string& text) {
        std::lock_guard lock(mu_);
        write_text(root_ / relative, text);
    }

private:
    std::filesystem::path root_;
    mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Jobs

/// Bounded worker pool; each job stores its final HTTP status and body.
class JobRunner {
public:
    explicit JobRunner(std::size_t workers) {
        for (std::size_t i = 0; i < std::max<std::size_t>(1, workers); ++i)
            threads_.emplace_back([this] { work(); });
    }

    ~JobRunner() {
        {
            std::lock_guard lock(mu_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    JobRunner(const JobRunner&) = delete;
    JobRunner& operator=(const JobRunner&) = delete;

    std::string submit(std::function<Response()> task) {
        std::lock_guard lock(mu_);
        const auto id = "job-" + std::to_string(++counter_);
        jobs_[id] = std::nullopt;
        queue_.emplace_back(id, std::move(task));
        cv_.notify_one();
        return id;
    }

    /// nullopt while queued or running.
    std::optional<Response> status(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) throw Error(Errc::NotFound, "job '" + id + "'");
        return it->second;
    }

    std::optional<Response> wait(const std::string& id) const {
        std::unique_lock lock(mu_);
        done_cv_.wait(lock, [&] {
            auto it = jobs_.find(id);
            return it == jobs_.end() || it->second.has_value();
        });
        auto it = jobs_.find(id);
        if (it == jobs_.end()) throw Error(Errc::NotFound, "job '" + id + "'");
        return it->second;
    }

private:
    void work() {
        for (;;) {
            std::pair<std::string, std::function<Response()>> item;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
                if (queue_.empty()) return;
                item = std::move(queue_.front());
                queue_.pop_front();
            }
            Response r;
            try {
                r = item.second();
            } catch (const Error& e) {
                r = json_response(http_status(e.code()), error_body(e));
            } catch (const std::exception& e) {
                r = json_response(500, {{"v", kSchemaVersion}, {"error", "Internal"}, {"message", e.what()}});
            }
            {
                std::lock_guard lock(mu_);
                jobs_[item.first] = std::move(r);
            }
            done_cv_.notify_all();
        }
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    mutable std::condition_variable done_cv_;
    std::deque<std::pair<std::string, std::function<Response()>>> queue_;
    std::map<std::string, std::optional<Response>> jobs_;
    std::vector<std::thread> threads_;
    std::size_t counter_ = 0;
    bool stopping_ = false;
};

// ---------------------------------------------------------------------------
// Application

struct Options {
    std::filesystem::path data_dir = "hilsynth-data";
    std::size_t workers = 2;
    std::size_t max_session_steps = 0;  // 0: four times the cell count
};

/**
 * HTTP/WebSocket application state, independent of the transport. All
 * handlers are safe to call from several connection threads.
 */
class App {
public:
    explicit App(Options options) : options_(std::move(options)), store_(options_.data_dir), jobs_(options_.workers) {}

    Store& store() noexcept { return store_; }

    Response handle(const Request& req) {
        try {
            return route(req);
        } catch (const Error& e) {
            return json_response(http_status(e.code()), error_body(e));
        } catch (const json::exception& e) {
            return json_response(400, {{"v", kSchemaVersion}, {"error", "ParseError"}, {"message", e.what()}});
        }
    }

    // -- WebSocket side ------------------------------------------------------

    /// Frame for the session's current observation.
    json current_frame(const std::string& session_id) {
        auto s = session(session_id);
        std::lock_guard lock(s->mu);
        return frame(*s);
    }

    /// Reply to one client message: exactly one frame, an error frame when the action is rejected.
    json ws_message(const std::string& session_id, const std::string& text) {
        try {
            const auto msg = parse_json(text, "message");
            const auto name = msg.at("action").get<std::string>();
            return act(session_id, name);
        } catch (const Error& e) {
            return {{"v", kSchemaVersion}, {"session", session_id}, {"error", to_string(e.code())}, {"message", e.what()}};
        } catch (const json::exception& e) {
            return {{"v", kSchemaVersion}, {"session", session_id}, {"error", "ParseError"}, {"message", e.what()}};
        }
    }

    /// A dropped connection aborts a session that is still open.
    void ws_closed(const std::string& session_id) {
        std::shared_ptr<Session> s;
        try {
            s = session(session_id);
        } catch (const Error&) {
            return;
        }
        std::lock_guard lock(s->mu);
        if (s->open) finish(*s, Outcome::Abort);
    }

    bool session_exists(const std::string& session_id) const {
        std::lock_guard lock(mu_);
        return sessions_.count(session_id) > 0;
    }

private:
    struct ScenarioEntry {
        std::string hash;
        ScenarioConfig config;
        std::shared_ptr<const GridModel> model;  // built on first use
    };

    struct Session {
        std::mutex mu;
        std::string id;
        std::string scenario_id;
        std::shared_ptr<const Grid> grid;
        GridState state;
        Rng rng;
        std::uint64_t seed = 0;
        std::size_t step = 0;
        std::size_t max_steps = 0;
        bool open = true;
        Trajectory trajectory;
        std::string refinement;  // refinement this immersion session feeds, if any
    };

    struct Refinement {
        std::string id;
        std::string scenario_id;
        std::string strategy_id;  // current working strategy
        std::vector<double> reach_prob;
        json record;
    };

    // -- routing -------------------------------------------------------------

    Response route(const Request& req) {
        const auto t = Target::parse(req.target);
        const auto& m = req.method;
        if (m == "POST" && t.is({"scenarios"})) return create_scenario(req.body);
        if (m == "GET" && t.is({"scenarios", "*"})) return get_scenario(t.segments[1]);
        if (m == "POST" && t.is({"models"})) return create_model(req.body);
        if (m == "GET" && t.is({"models", "*"})) return {200, "application/json", store_.get("models", t.segments[1])};
        if (m == "POST" && t.is({"sessions"})) return open_session(req.body);
        if (m == "GET" && t.is({"sessions", "*"})) return session_status(t.segments[1]);
        if (m == "POST" && t.is({"sessions", "*", "act"})) return json_response(200, act(t.segments[1], action_of(req.body)));
        if (m == "POST" && t.is({"sessions", "*", "abort"})) return abort_session(t.segments[1]);
        if (m == "GET" && t.is({"sessions", "*", "trajectory"})) return session_trajectory(t.segments[1]);
        if (m == "GET" && t.is({"training", "export"})) return training_export();
        if (m == "POST" && t.is({"training", "snapshot"})) return training_snapshot();
        if (m == "POST" && t.is({"strategies", "clone"})) return clone_strategy(req.body);
        if (m == "POST" && t.is({"strategies"})) return create_strategy(req.body);
        if (m == "GET" && t.is({"strategies", "*"})) return {200, "application/json", store_.get("strategies", t.segments[1])};
        if (m == "POST" && t.is({"checks"})) return submit(check_job(parse_json(req.body, "request body")));
        if (m == "POST" && t.is({"refine"})) return submit(refine_job(parse_json(req.body, "request body")));
        if (m == "GET" && t.is({"jobs", "*"})) return job_status(t.segments[1]);
        if (m == "GET" && t.is({"refinements", "*"})) return get_refinement(t.segments[1]);
        if (m == "GET" && t.is({"results", "*"})) return {200, "application/json", store_.get("results", t.segments[1])};
        if (m == "GET" && t.is({"heatmap"})) return heatmap_response(t);
        throw Error(Errc::NotFound, m + " " + req.target);
    }

    static std::string action_of(const std::string& body) {
        return parse_json(body, "request body").at("action").get<std::string>();
    }

    // -- scenarios and models ------------------------------------------------

    Response create_scenario(const std::string& body) {
        const auto j = parse_json(body, "request body");
        ScenarioConfig config;
        if (j.contains("ranges")) {
            const auto ranges = ranges_from_json(j.at("ranges"));
            Rng rng(j.value("seed", std::uint64_t{0}));
            config = random_scenario(rng, ranges);
        } else {
            config = scenario_from_json(j);
            (void)Grid{config};
        }
        const auto text = canonical_dump(scenario_to_json(config));
        const auto hash = store_.put("scenarios", text);
        std::lock_guard lock(mu_);
        const auto id = "scn-" + std::to_string(++scenario_counter_);
        scenarios_[id] = std::make_shared<ScenarioEntry>(ScenarioEntry{hash, config, nullptr});
        store_.append("scenarios/index.jsonl", json{{"id", id}, {"hash", hash}}.dump() + "\n");
        return json_response(201, {{"v", kSchemaVersion}, {"id", id}, {"hash", hash}});
    }

    std::shared_ptr<ScenarioEntry> scenario_entry(const std::string& id) {
        std::lock_guard lock(mu_);
        auto it = scenarios_.find(id);
        if (it == scenarios_.end()) throw Error(Errc::NotFound, "scenario '" + id + "'");
        return it->second;
    }

    std::shared_ptr<const GridModel> scenario_model(const std::string& id) {
        auto entry = scenario_entry(id);
        std::lock_guard lock(mu_);
        if (!entry->model) entry->model = std::make_shared<const GridModel>(build_pomdp(entry->config));
        return entry->model;
    }

    Response get_scenario(const std::string& id) {
        return {200, "application/json", store_.get("scenarios", scenario_entry(id)->hash)};
    }

    Response create_model(const std::string& body) {
        const auto file = read_model(body);
        const auto id = store_.put("models", write_model(file));
        return json_response(201, {{"v", kSchemaVersion}, {"id", id}});
    }

    // -- sessions ------------------------------------------------------------

    std::shared_ptr<Session> session(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw Error(Errc::NotFound, "session '" + id + "'");
        return it->second;
    }

    Response open_session(const std::string& body) {
        const auto j = parse_json(body, "request body");
        const auto scenario_id = j.at("scenario").get<std::string>();
        const auto entry = scenario_entry(scenario_id);
        const auto mode = j.value("mode", std::string("fresh"));
        auto s = std::make_shared<Session>();
        s->scenario_id = scenario_id;
        s->grid = std::make_shared<const Grid>(entry->config);
        const auto& grid = *s->grid;
        {
            std::lock_guard lock(mu_);
            s->id = "ses-" + std::to_string(++session_counter_);
            s->seed = mix_seed(entry->config.rng_seed, session_counter_);
        }
        if (mode == "fresh") {
            if (entry->config.agent_start) {
                s->state = {*entry->config.agent_start, entry->config.obstacle_start};
            } else {
                std::vector<Position> cells;
                for (auto p : grid.free_cells())
                    if (p != entry->config.goal) cells.push_back(p);
                Rng pick(mix_seed(s->seed, 1));
                s->state = {cells.at(std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(pick)),
                            entry->config.obstacle_start};
            }
        } else if (mode == "immersion") {
            const auto& st = j.at("state");
            if (st.is_number_integer()) {
                const auto model = scenario_model(scenario_id);
                const auto gs = model->grid_state(st.get<std::size_t>());
                if (!gs) throw Error(Errc::InvalidParams, "state " + st.dump() + " is not a grid state");
                s->state = *gs;
            } else {
                s->state = grid_state_from_json(st);
            }
            if (!grid.in_bounds(s->state.agent) || !grid.in_bounds(s->state.obstacle))
                throw Error(Errc::InvalidParams, "immersion state outside the grid");
            if (grid.classify(s->state) != Event::None)
                throw Error(Errc::InvalidParams, "immersion state is terminal");
            if (j.contains("refinement")) {
                s->refinement = j.at("refinement").get<std::string>();
                refinement(s->refinement);  // must exist
            }
        } else {
            throw Error(Errc::InvalidParams, "mode must be fresh or immersion");
        }
        s->rng.seed(s->seed);
        s->max_steps = options_.max_session_steps ? options_.max_session_steps : default_step_cap(grid);
        s->trajectory.session_id = s->id;
        s->trajectory.scenario = entry->config;
        s->trajectory.seed = s->seed;
        json first;
        {
            std::lock_guard lock(s->mu);
            first = frame(*s);
        }
        {
            std::lock_guard lock(mu_);
            sessions_[s->id] = s;
        }
        return json_response(201, {{"v", kSchemaVersion}, {"session", s->id}, {"frame", first}});
    }

    static json known_map(const Grid& grid) {
        json landmarks = json::array();
        for (const auto& p : grid.config().landmarks) landmarks.push_back(position_to_json(p));
        return {{"width", grid.width()},
                {"height", grid.height()},
                {"landmarks", std::move(landmarks)},
                {"goal", position_to_json(grid.config().goal)}};
    }

    /// Never contains the agent's or the obstacle's position.
    static json frame(const Session& s) {
        json f{{"v", kSchemaVersion},
               {"session", s.id},
               {"obs", s.grid->observe(s.state).str()},
               {"step", s.step},
               {"known_map", known_map(*s.grid)}};
        if (!s.open) f["terminal"] = outcome_name(s.trajectory.outcome);
        return f;
    }

    json act(const std::string& session_id, const std::string& action_name_) {
        const auto action = parse_action(action_name_);
        if (!action) throw Error(Errc::ParseError, "unknown action '" + action_name_ + "'");
        auto s = session(session_id);
        std::lock_guard lock(s->mu);
        if (!s->open) throw Error(Errc::NoCounterexampleNeeded, "session " + session_id + " is closed");
        const auto z = s->grid->observe(s->state);
        auto [next, event] = s->grid->simulate_step(s->state, *action, s->rng);
        s->trajectory.steps.push_back({s->state, z, *action, event});
        ++s->step;
        if (event == Event::Goal) {
            s->state = next;
            finish(*s, Outcome::Goal);
        } else if (event == Event::Crash) {
            s->state = next;
            finish(*s, Outcome::Crash);
        } else {
            s->state = next;
            if (s->step >= s->max_steps) finish(*s, Outcome::Abort);
        }
        return frame(*s);
    }

    /// Closes the session: persists the trajectory, feeds the training set and, for immersion sessions, the refinement.
    void finish(Session& s, Outcome outcome) {
        s.open = false;
        s.trajectory.outcome = outcome;
        const auto line = trajectory_line(s.trajectory);
        store_.append("trajectories/log.jsonl", line);
        store_.write(std::filesystem::path("trajectories") / (s.id + ".json"),
                     canonical_dump(trajectory_to_json(s.trajectory)));
        {
            std::lock_guard lock(training_mu_);
            training_ = record(std::move(training_), s.trajectory);
        }
        if (!s.refinement.empty()) {
            try {
                apply_to_refinement(s.refinement, s.trajectory);
            } catch (const Error&) {
                // the trajectory is already persisted; the refinement can be replayed from the log
            }
        }
    }

    Response abort_session(const std::string& id) {
        auto s = session(id);
        std::lock_guard lock(s->mu);
        if (!s->open) throw Error(Errc::NoCounterexampleNeeded, "session " + id + " is closed");
        finish(*s, Outcome::Abort);
        return json_response(200, frame(*s));
    }

    Response session_status(const std::string& id) {
        auto s = session(id);
        std::lock_guard lock(s->mu);
        json j{{"v", kSchemaVersion}, {"session", s->id}, {"scenario", s->scenario_id}, {"open", s->open}, {"step", s->step}};
        if (!s->open) j["outcome"] = outcome_name(s->trajectory.outcome);
        return json_response(200, j);
    }

    /// Only after the session closed, since the log holds true positions.
    Response session_trajectory(const std::string& id) {
        auto s = session(id);
        std::lock_guard lock(s->mu);
        if (s->open) throw Error(Errc::NoCounterexampleNeeded, "session " + id + " is still open");
        return json_response(200, trajectory_to_json(s->trajectory));
    }

    // -- training and strategies ---------------------------------------------

    TrainingSet training_snapshot_copy() {
        std::lock_guard lock(training_mu_);
        return training_;
    }

    Response training_export() { return {200, "text/csv", training_snapshot_copy().to_csv()}; }

    Response training_snapshot() {
        const auto ts = training_snapshot_copy();
        const auto id = store_.put("training", ts.to_csv(), ".csv");
        return json_response(201, {{"v", kSchemaVersion}, {"id", id}, {"size", ts.size()}});
    }

    Response clone_strategy(const std::string& body) {
        const auto j = body.empty() ? json::object() : parse_json(body, "request body");
        TrainingSet ts;
        if (j.contains("training")) ts = TrainingSet::from_csv(store_.get("training", j.at("training").get<std::string>(), ".csv"));
        else ts = training_snapshot_copy();
        const auto id = store_.put("strategies", write_strategy(clone_table(ts)));
        return json_response(201, {{"v", kSchemaVersion}, {"id", id}, {"training_size", ts.size()}});
    }

    Response create_strategy(const std::string& body) {
        const auto table = strategy_from_json(parse_json(body, "strategy"));
        const auto id = store_.put("strategies", write_strategy(table));
        return json_response(201, {{"v", kSchemaVersion}, {"id", id}});
    }

    StrategyTable strategy_table(const std::string& id) {
        return strategy_from_json(parse_json(store_.get("strategies", id), "strategy"));
    }

    // -- checks, refinement, heatmaps ----------------------------------------

    /// The POMDP and spec a request refers to: a scenario or an explicit model.
    struct Target_ {
        std::shared_ptr<const GridModel> grid_model;
        std::shared_ptr<const ModelFile> file;
        Spec spec;

        const Pomdp& pomdp() const { return grid_model ? grid_model->pomdp : file->pomdp; }
    };

    static Spec spec_from_request(const json& j, Spec base) {
        if (!j.contains("spec")) return base;
        const auto& s = j.at("spec");
        const auto kind = s.value("kind", std::string("reach-avoid-prob"));
        if (kind == "reach-avoid-prob") base.kind = SpecKind::ReachAvoidProb;
        else if (kind == "expected-cost") base.kind = SpecKind::ExpectedCost;
        else throw Error(Errc::InvalidSpec, "unknown spec kind '" + kind + "'");
        if (s.contains("threshold")) base.threshold = decimal_from_json(s.at("threshold"));
        require_valid_spec(base);
        return base;
    }

    Target_ resolve(const json& j) {
        Target_ t;
        if (j.contains("scenario")) {
            t.grid_model = scenario_model(j.at("scenario").get<std::string>());
            t.spec = spec_from_request(j, t.grid_model->spec);
        } else if (j.contains("model")) {
            t.file = std::make_shared<const ModelFile>(read_model(store_.get("models", j.at("model").get<std::string>())));
            t.spec = spec_from_request(j, Spec{SpecKind::ReachAvoidProb, t.file->label("bad"), t.file->label("goal"), 0.0});
        } else {
            throw Error(Errc::InvalidParams, "request needs a scenario or a model");
        }
        return t;
    }

    Response submit(std::function<Response()> task) {
        const auto id = jobs_.submit(std::move(task));
        return json_response(202, {{"v", kSchemaVersion}, {"job", id}, {"status", "running"}});
    }

    std::function<Response()> check_job(const json& j) {
        const auto target = resolve(j);  // resolve eagerly so unknown ids fail the POST
        const auto strategy_id = j.at("strategy").get<std::string>();
        const auto table = strategy_table(strategy_id);
        return [this, target, strategy_id, table, j] {
            const auto& pomdp = target.pomdp();
            const auto strategy = bind_strategy(pomdp, table);
            const auto mc = induce_mc(pomdp, strategy);
            const auto result = check_spec(mc, target.spec);
            json out = result_to_json(result);
            out["strategy"] = strategy_id;
            if (j.contains("scenario")) out["scenario"] = j.at("scenario");
            if (j.contains("model")) out["model"] = j.at("model");
            out["states"] = mc.num_states();
            out["threshold"] = target.spec.threshold;
            const auto id = store_.put("results", canonical_dump(out));
            out["id"] = id;
            return json_response(200, {{"v", kSchemaVersion}, {"status", "done"}, {"result", out}});
        };
    }

    std::function<Response()> refine_job(const json& j) {
        const auto target = resolve(j);
        if (!target.grid_model) throw Error(Errc::InvalidParams, "refinement needs a scenario");
        const auto scenario_id = j.at("scenario").get<std::string>();
        const auto strategy_id = j.at("strategy").get<std::string>();
        const auto table = strategy_table(strategy_id);
        const std::size_t k = j.value("k", std::size_t{10});
        return [this, target, scenario_id, strategy_id, table, k] {
            const auto& model = *target.grid_model;
            const auto strategy = bind_strategy(model.pomdp, table);
            const auto mc = induce_mc(model.pomdp, strategy);
            Spec spec = target.spec;
            const auto check = check_spec(mc, spec);
            const auto cex = critical_states(mc, check, spec, k);
            json offers = json::array();
            for (auto s : cex.critical_states) offers.push_back({{"state", s}, {"score", cex.scores.at(s)}});
            json record{{"v", kSchemaVersion},
                        {"scenario", scenario_id},
                        {"strategy", strategy_id},
                        {"prob", check.value_at_initial},
                        {"critical_states", cex.critical_states},
                        {"offers", offers}};
            const auto id = store_.put("results", canonical_dump(record));
            Refinement r{id, scenario_id, strategy_id, check.per_state_prob, record};
            r.record["id"] = id;
            r.record["current_strategy"] = strategy_id;
            r.record["sessions_completed"] = 0;
            {
                std::lock_guard lock(mu_);
                refinements_.emplace(id, std::make_shared<Refinement>(std::move(r)));
            }
            return json_response(200, {{"v", kSchemaVersion}, {"status", "done"}, {"result", refinement_json(id)}});
        };
    }

    std::shared_ptr<Refinement> refinement(const std::string& id) {
        std::lock_guard lock(mu_);
        auto it = refinements_.find(id);
        if (it == refinements_.end()) throw Error(Errc::NotFound, "refinement '" + id + "'");
        return it->second;
    }

    json refinement_json(const std::string& id) {
        auto r = refinement(id);
        std::lock_guard lock(refine_mu_);
        return r->record;
    }

    void apply_to_refinement(const std::string& id, const Trajectory& session) {
        auto r = refinement(id);
        const auto model = scenario_model(r->scenario_id);
        std::lock_guard lock(refine_mu_);
        auto strategy = bind_strategy(model->pomdp, strategy_table(r->strategy_id));
        strategy = apply_session(*model, std::move(strategy), session, r->reach_prob);
        r->strategy_id = store_.put("strategies", write_strategy(to_table(model->pomdp, strategy)));
        r->record["current_strategy"] = r->strategy_id;
        r->record["sessions_completed"] = r->record["sessions_completed"].get<std::size_t>() + 1;
    }

    Response get_refinement(const std::string& id) { return json_response(200, refinement_json(id)); }

    Response job_status(const std::string& id) {
        const auto r = jobs_.status(id);
        if (!r) return json_response(202, {{"v", kSchemaVersion}, {"job", id}, {"status", "running"}});
        return *r;
    }

    Response heatmap_response(const Target& t) {
        auto need = [&](const char* key) {
            auto it = t.query.find(key);
            if (it == t.query.end() || it->second.empty()) throw Error(Errc::InvalidParams, std::string("missing ") + key);
            return it->second;
        };
        const auto model = scenario_model(need("scenario"));
        const auto strategy = bind_strategy(model->pomdp, strategy_table(need("strategy")));
        const auto h = heatmap(*model, strategy);
        auto fmt = t.query.find("format");
        if (fmt != t.query.end() && fmt->second == "csv") return {200, "text/csv", h.to_csv()};
        return json_response(200, {{"v", kSchemaVersion}, {"width", h.width}, {"height", h.height}, {"cells", h.to_json()}});
    }

    Options options_;
    Store store_;

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<ScenarioEntry>> scenarios_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::map<std::string, std::shared_ptr<Refinement>> refinements_;
    std::size_t scenario_counter_ = 0;
    std::size_t session_counter_ = 0;

    std::mutex training_mu_;  // single writer for the training set
    TrainingSet training_;

    std::mutex refine_mu_;

    JobRunner jobs_;  // last: joins workers before the state above goes away
};

} // namespace hilsynth::service

#endif // HILSYNTH_SERVICE_HPP
