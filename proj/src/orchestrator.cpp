#include <algorithm>
#include <filesystem>
#include <fstream>

#include "nas/orchestrator.hpp"

namespace nas::orchestrator {

namespace fs = std::filesystem;
using controller::GradientPacket;
using controller::PolicyParams;
using controller::Trajectory;
using evaluator::EvalResult;
using evaluator::EvalTask;
using logging::Event;

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::a3c: return "a3c";
        case Strategy::a2c: return "a2c";
        case Strategy::random: return "random";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "a3c") return Strategy::a3c;
    if (s == "a2c") return Strategy::a2c;
    if (s == "random" || s == "rdm") return Strategy::random;
    throw ConfigError("unknown strategy: " + s);
}

nlohmann::json SearchConfig::to_json() const {
    nlohmann::json j;
    j["strategy"] = orchestrator::to_string(strategy);
    j["agents"] = num_agents;
    j["workers_per_agent"] = workers_per_agent;
    j["wall_clock_budget"] = wall_clock_budget;
    j["max_evaluations"] = max_evaluations;
    j["seed"] = seed;
    j["space"] = space;
    j["backend"] = backend == BackendKind::simulated ? "simulated" : "local";
    j["landscape"] = {{"seed", landscape_seed}, {"interactions", landscape_interactions}};
    const char* dm = duration_model == DurationModelKind::constant  ? "constant"
                     : duration_model == DurationModelKind::uniform ? "uniform"
                                                                    : "flops";
    j["duration"] = {{"model", dm},
                     {"constant", duration_const},
                     {"min", duration_min},
                     {"max", duration_max},
                     {"flops_per_second", flops_per_second}};
    j["dispatch_latency"] = dispatch_latency;
    if (!dataset_manifest.empty()) j["dataset"] = dataset_manifest;
    j["fidelity"] = {{"epochs", fidelity.epochs},
                     {"subset_fraction", fidelity.subset_fraction},
                     {"timeout_seconds", fidelity.timeout_seconds},
                     {"batch_size", fidelity.batch_size}};
    j["ppo"] = {{"clip", ppo_clip},
                {"epochs", ppo_epochs},
                {"learning_rate", learning_rate},
                {"value_coef", value_coef},
                {"entropy_coef", entropy_coef},
                {"gradient_mode", gradient_mode == controller::GradientMode::cumulative_delta
                                      ? "cumulative_delta"
                                      : "first_epoch"}};
    j["controller"] = {{"hidden", hidden}, {"embed", embed}};
    j["async_window"] = async_window;
    j["convergence_rounds"] = convergence_rounds;
    j["checkpoint_every"] = checkpoint_every;
    return j;
}

SearchConfig SearchConfig::from_json(const nlohmann::json& j) {
    SearchConfig c;
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy"));
    c.num_agents = j.value("agents", c.num_agents);
    c.workers_per_agent = j.value("workers_per_agent", c.workers_per_agent);
    c.wall_clock_budget = j.value("wall_clock_budget", c.wall_clock_budget);
    c.max_evaluations = j.value("max_evaluations", c.max_evaluations);
    c.seed = j.value("seed", c.seed);
    c.space = j.value("space", c.space);
    if (j.contains("backend")) {
        const std::string b = j.at("backend");
        if (b == "simulated")
            c.backend = BackendKind::simulated;
        else if (b == "local")
            c.backend = BackendKind::local;
        else
            throw ConfigError("unknown backend: " + b);
    }
    if (j.contains("landscape")) {
        c.landscape_seed = j.at("landscape").value("seed", c.landscape_seed);
        c.landscape_interactions =
            j.at("landscape").value("interactions", c.landscape_interactions);
    }
    if (j.contains("duration")) {
        const auto& d = j.at("duration");
        const std::string m = d.value("model", "constant");
        if (m == "constant")
            c.duration_model = DurationModelKind::constant;
        else if (m == "uniform")
            c.duration_model = DurationModelKind::uniform;
        else if (m == "flops")
            c.duration_model = DurationModelKind::flops;
        else
            throw ConfigError("unknown duration model: " + m);
        c.duration_const = d.value("constant", c.duration_const);
        c.duration_min = d.value("min", c.duration_min);
        c.duration_max = d.value("max", c.duration_max);
        c.flops_per_second = d.value("flops_per_second", c.flops_per_second);
    }
    c.dispatch_latency = j.value("dispatch_latency", c.dispatch_latency);
    c.dataset_manifest = j.value("dataset", c.dataset_manifest);
    if (j.contains("fidelity")) {
        const auto& f = j.at("fidelity");
        c.fidelity.epochs = f.value("epochs", c.fidelity.epochs);
        c.fidelity.subset_fraction = f.value("subset_fraction", c.fidelity.subset_fraction);
        c.fidelity.timeout_seconds = f.value("timeout_seconds", c.fidelity.timeout_seconds);
        c.fidelity.batch_size = f.value("batch_size", c.fidelity.batch_size);
    }
    if (j.contains("ppo")) {
        const auto& p = j.at("ppo");
        c.ppo_clip = p.value("clip", c.ppo_clip);
        c.ppo_epochs = p.value("epochs", c.ppo_epochs);
        c.learning_rate = p.value("learning_rate", c.learning_rate);
        c.value_coef = p.value("value_coef", c.value_coef);
        c.entropy_coef = p.value("entropy_coef", c.entropy_coef);
        const std::string g = p.value("gradient_mode", "cumulative_delta");
        c.gradient_mode = g == "first_epoch" ? controller::GradientMode::first_epoch
                                             : controller::GradientMode::cumulative_delta;
    }
    if (j.contains("controller")) {
        c.hidden = j.at("controller").value("hidden", c.hidden);
        c.embed = j.at("controller").value("embed", c.embed);
    }
    c.async_window = j.value("async_window", c.async_window);
    c.convergence_rounds = j.value("convergence_rounds", c.convergence_rounds);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.validate();
    return c;
}

void SearchConfig::validate() const {
    if (num_agents < 1) throw ConfigError("agents must be >= 1");
    if (workers_per_agent < 1) throw ConfigError("workers_per_agent must be >= 1");
    if (wall_clock_budget <= 0.0) throw ConfigError("wall_clock_budget must be > 0");
    if (max_evaluations < 0) throw ConfigError("max_evaluations must be >= 0");
    if (async_window < 1) throw ConfigError("async_window must be >= 1");
    if (convergence_rounds < 1) throw ConfigError("convergence_rounds must be >= 1");
    if (fidelity.epochs < 1 || fidelity.timeout_seconds <= 0.0 ||
        fidelity.subset_fraction <= 0.0 || fidelity.subset_fraction > 1.0)
        throw ConfigError("bad fidelity budget");
    if (backend == BackendKind::local && dataset_manifest.empty())
        throw ConfigError("local backend needs a dataset manifest");
}

// ---- parameter server ----

ParameterServer::ParameterServer(PolicyParams init, double lr, int window)
    : params_(std::move(init)),
      adam_(params_.w.size(), lr),
      window_cap_(static_cast<size_t>(std::max(1, window))) {}

namespace {

// Mean anchored on the first packet: sum(g_k - g_0)/n + g_0. Identical
// packets then average to themselves bit-for-bit, which the synchronous
// round's conservation property relies on.
std::vector<double> anchored_mean(const std::vector<const std::vector<double>*>& gs) {
    const std::vector<double>& g0 = *gs.front();
    std::vector<double> mean(g0.size());
    const double inv = 1.0 / static_cast<double>(gs.size());
    for (size_t i = 0; i < g0.size(); ++i) {
        double acc = 0.0;
        for (size_t k = 1; k < gs.size(); ++k) acc += (*gs[k])[i] - g0[i];
        mean[i] = g0[i] + acc * inv;
    }
    return mean;
}

}  // namespace

void ParameterServer::apply(const std::vector<double>& grad) {
    adam_update(params_.w, adam_, grad);
    ++version_;
}

const PolicyParams& ParameterServer::step_sync(const std::vector<GradientPacket>& packets) {
    if (packets.empty()) throw Error("synchronous step with no packets");
    for (const auto& p : packets) {
        if (p.policy_version != packets.front().policy_version)
            throw Error("synchronous step with mixed policy versions");
        if (p.g.size() != params_.w.size()) throw Error("gradient packet size mismatch");
    }
    std::vector<const std::vector<double>*> gs;
    for (const auto& p : packets) gs.push_back(&p.g);
    apply(anchored_mean(gs));
    return params_;
}

ParameterServer::AsyncReply ParameterServer::step_async(const GradientPacket& packet) {
    if (packet.g.size() != params_.w.size()) throw Error("gradient packet size mismatch");
    long staleness = version_ - packet.policy_version;
    window_.push_back(packet.g);
    while (window_.size() > window_cap_) window_.pop_front();
    std::vector<const std::vector<double>*> gs;
    for (const auto& g : window_) gs.push_back(&g);
    apply(anchored_mean(gs));
    return {staleness, version_};
}

// ---- search kernel ----

namespace {

struct AgentState {
    int id = 0;
    Rng rng{0};
    uint64_t train_seed_base = 0;
    PolicyParams params;      // unused for the random strategy
    long params_version = 0;
    std::vector<Trajectory> batch;
    std::map<long, size_t> pending;  // task id -> trajectory index
    bool round_all_cached = true;
    int consec_cached_rounds = 0;
    bool waiting_barrier = false;
    std::optional<GradientPacket> barrier_packet;
    bool halted = false;
    std::string halt_reason;
};

struct Kernel {
    const SearchConfig& cfg;
    const std::string& out_dir;
    space::SearchSpace space;
    std::optional<netbench::TabularDataset> dataset;  // must outlive eval's worker threads
    std::unique_ptr<evaluator::Evaluator> eval;
    std::unique_ptr<ParameterServer> ps;
    std::vector<AgentState> agents;
    logging::SearchLog log;
    long task_seq = 0;
    long evals_submitted = 0;
    bool converged = false;

    Kernel(const SearchConfig& c, const std::string& dir)
        : cfg(c), out_dir(dir), space(space::SearchSpace::build(space::resolve_space(c.space))) {}

    int total_workers() const { return cfg.num_agents * cfg.workers_per_agent; }

    void log_busy_intervals() {
        for (const auto& b : eval->drain_busy_intervals()) {
            Event e;
            e.kind = Event::Kind::busy;
            e.t = b.end;
            e.worker = b.worker;
            e.start = b.start;
            e.end = b.end;
            e.task_id = b.task_id;
            log.append(std::move(e));
        }
    }

    void write_meta() {
        Event e;
        e.kind = Event::Kind::meta;
        e.t = 0.0;
        e.meta = {{"schema", 1},
                  {"config", cfg.to_json()},
                  {"space_spec", space.spec().to_json()},
                  {"space", space.spec().name.empty() ? cfg.space : space.spec().name},
                  {"decision_slots", space.slots().size()},
                  {"workers_total", total_workers()}};
        log.append(std::move(e));
    }

    bool budget_allows(long new_tasks) const {
        return cfg.max_evaluations == 0 || evals_submitted + new_tasks <= cfg.max_evaluations;
    }

    // Samples and submits one batch for the agent. Returns false (and halts
    // the agent) when a budget boundary was hit.
    bool submit_round(AgentState& a) {
        double now = eval->now();
        if (now >= cfg.wall_clock_budget) {
            halt(a, "time");
            return false;
        }
        if (!budget_allows(cfg.workers_per_agent)) {
            halt(a, "budget");
            return false;
        }

        if (cfg.strategy == Strategy::random) {
            a.batch.clear();
            for (int m = 0; m < cfg.workers_per_agent; ++m) {
                Trajectory t;
                t.encoding = space.sample_random(a.rng);
                a.batch.push_back(std::move(t));
            }
        } else {
            a.batch = controller::sample_batch(a.params, cfg.workers_per_agent, a.rng);
        }

        std::vector<EvalTask> tasks;
        a.pending.clear();
        a.round_all_cached = true;
        for (size_t m = 0; m < a.batch.size(); ++m) {
            EvalTask t;
            t.task_id = ++task_seq;
            t.agent_id = a.id;
            t.encoding = a.batch[m].encoding;
            t.budget = cfg.fidelity;
            t.seed = seed_mix(a.train_seed_base, hash_ints(0x717, t.encoding));
            a.pending[t.task_id] = m;

            Event e;
            e.kind = Event::Kind::submitted;
            e.t = now;
            e.task_id = t.task_id;
            e.agent = a.id;
            e.encoding = t.encoding;
            log.append(std::move(e));
            tasks.push_back(std::move(t));
        }
        evals_submitted += static_cast<long>(tasks.size());
        eval->add_eval_batch(tasks);
        return true;
    }

    void halt(AgentState& a, const std::string& reason) {
        a.halted = true;
        a.halt_reason = reason;
    }

    void halt_all(const std::string& reason) {
        for (auto& a : agents)
            if (!a.halted) halt(a, reason);
    }

    bool all_halted() const {
        return std::all_of(agents.begin(), agents.end(),
                           [](const AgentState& a) { return a.halted; });
    }

    void log_gradient(int agent, long version, long staleness, double t) {
        Event e;
        e.kind = Event::Kind::gradient;
        e.t = t;
        e.agent = agent;
        e.version = version;
        e.staleness = staleness;
        log.append(std::move(e));
    }

    void maybe_checkpoint() {
        if (!ps || cfg.checkpoint_every <= 0 || out_dir.empty()) return;
        if (ps->version() % cfg.checkpoint_every != 0) return;
        controller::save_checkpoint(
            ps->params(), (fs::path(out_dir) / ("checkpoint_" + std::to_string(ps->version()) +
                                                ".bin")).string());
    }

    GradientPacket make_packet(AgentState& a) {
        GradientPacket p = controller::ppo_gradient(a.params, a.batch, cfg.ppo_clip,
                                                    cfg.ppo_epochs, cfg.gradient_mode,
                                                    cfg.learning_rate);
        p.agent_id = a.id;
        p.policy_version = a.params_version;
        return p;
    }

    void check_convergence() {
        if (converged) return;
        for (const auto& a : agents)
            if (a.consec_cached_rounds < cfg.convergence_rounds) return;
        converged = true;
    }

    void finish_round(AgentState& a) {
        if (a.round_all_cached)
            a.consec_cached_rounds += 1;
        else
            a.consec_cached_rounds = 0;
        check_convergence();
        if (converged) {
            halt_all("converged");
            return;
        }

        switch (cfg.strategy) {
            case Strategy::random:
                submit_round(a);
                break;
            case Strategy::a3c: {
                GradientPacket p = make_packet(a);
                auto reply = ps->step_async(p);
                log_gradient(a.id, reply.version, reply.staleness, eval->now());
                maybe_checkpoint();
                a.params = ps->params();
                a.params_version = reply.version;
                submit_round(a);
                break;
            }
            case Strategy::a2c: {
                a.barrier_packet = make_packet(a);
                a.waiting_barrier = true;
                // release the barrier once every active agent has contributed
                std::vector<GradientPacket> packets;
                for (auto& ag : agents) {
                    if (ag.halted) return;  // a halted agent would deadlock the barrier
                    if (!ag.waiting_barrier) return;
                }
                for (auto& ag : agents) packets.push_back(std::move(*ag.barrier_packet));
                ps->step_sync(packets);
                double now = eval->now();
                for (auto& ag : agents)
                    log_gradient(ag.id, ps->version(), 0, now);
                maybe_checkpoint();
                for (auto& ag : agents) {
                    ag.waiting_barrier = false;
                    ag.barrier_packet.reset();
                    ag.params = ps->params();
                    ag.params_version = ps->version();
                }
                // cohort submit: either the whole round fits the budget or
                // everyone stops
                if (!budget_allows(static_cast<long>(agents.size()) * cfg.workers_per_agent)) {
                    halt_all("budget");
                    return;
                }
                for (auto& ag : agents) submit_round(ag);
                break;
            }
        }
    }

    void route_result(const EvalResult& r) {
        Event e;
        e.kind = Event::Kind::finished;
        e.t = r.finish_time;
        e.task_id = r.task_id;
        e.agent = r.agent_id;
        e.encoding = r.encoding;
        e.status = evaluator::to_string(r.status);
        e.reward = r.reward;
        e.duration = r.train_seconds;
        e.params = r.param_count;
        e.from_cache = r.from_cache;
        log.append(std::move(e));

        AgentState& a = agents[static_cast<size_t>(r.agent_id)];
        auto it = a.pending.find(r.task_id);
        if (it == a.pending.end()) return;  // late result after a halt
        Trajectory& traj = a.batch[it->second];
        traj.reward = r.reward;
        traj.has_reward = true;
        a.pending.erase(it);
        if (!r.from_cache) a.round_all_cached = false;
        if (a.pending.empty() && !a.halted) finish_round(a);
    }

    RunOutput run() {
        if (!out_dir.empty()) fs::create_directories(out_dir);

        // evaluation backend
        if (cfg.backend == BackendKind::simulated) {
            auto landscape = netbench::SyntheticLandscape::make(
                space.arities(), cfg.landscape_seed, cfg.landscape_interactions);
            auto sp = &space;
            evaluator::ScoreFn score = [landscape, sp](const EvalTask& t) {
                evaluator::SyntheticScore s;
                s.reward = landscape.reward(t.encoding);
                s.params = netbench::compile(sp->decode(t.encoding)).param_count();
                return s;
            };
            evaluator::DurationFn duration;
            switch (cfg.duration_model) {
                case DurationModelKind::constant: {
                    double d = cfg.duration_const;
                    duration = [d](const EvalTask&) { return d; };
                    break;
                }
                case DurationModelKind::uniform: {
                    double lo = cfg.duration_min, hi = cfg.duration_max;
                    uint64_t seed = seed_mix(cfg.seed, 0xD0);
                    duration = [lo, hi, seed](const EvalTask& t) {
                        Rng r(seed_mix(seed, hash_ints(0x11, t.encoding)));
                        return r.uniform(lo, hi);
                    };
                    break;
                }
                case DurationModelKind::flops: {
                    double rate = cfg.flops_per_second;
                    duration = [sp, rate](const EvalTask& t) {
                        long params = netbench::compile(sp->decode(t.encoding)).param_count();
                        return 1e-3 + static_cast<double>(params) / rate;
                    };
                    break;
                }
            }
            evaluator::ClusterModel cluster{total_workers(), cfg.dispatch_latency};
            eval = std::make_unique<evaluator::Evaluator>(
                std::make_unique<evaluator::SimulatedBackend>(cluster, duration, score));
        } else {
            dataset = netbench::load_dataset(cfg.dataset_manifest);
            std::map<std::string, space::Shape> dims;
            for (size_t g = 0; g < dataset->train.group_names.size(); ++g) {
                const auto& name = dataset->train.group_names[g];
                // sequence inputs keep the space's channel count
                space::Shape s = space::Shape::features(dataset->train.groups[g].cols);
                for (const auto& in : space.spec().inputs)
                    if (in.name == name && in.shape.seq)
                        s = space::Shape::sequence(dataset->train.groups[g].cols / in.shape.ch,
                                                   in.shape.ch);
                dims[name] = s;
            }
            auto sp = &space;
            auto ds = &*dataset;
            netbench::LossKind loss = dataset->task == netbench::TaskKind::classification
                                          ? netbench::LossKind::cross_entropy
                                          : netbench::LossKind::mse;
            evaluator::TrainFn train = [sp, ds, dims, loss](const EvalTask& t) {
                auto prog = netbench::compile(sp->decode(t.encoding), dims, loss);
                return netbench::train_and_score(prog, *ds, t.budget, t.seed);
            };
            eval = std::make_unique<evaluator::Evaluator>(
                std::make_unique<evaluator::LocalPoolBackend>(total_workers(), train));
        }

        if (cfg.strategy != Strategy::random) {
            controller::ControllerConfig cc;
            cc.hidden = cfg.hidden;
            cc.embed = cfg.embed;
            cc.value_coef = cfg.value_coef;
            cc.entropy_coef = cfg.entropy_coef;
            ps = std::make_unique<ParameterServer>(
                controller::init_policy(space, seed_mix(cfg.seed, 0x9001), cc),
                cfg.learning_rate, cfg.async_window);
        }

        agents.resize(cfg.num_agents);
        for (int i = 0; i < cfg.num_agents; ++i) {
            AgentState& a = agents[i];
            a.id = i;
            a.rng = Rng(seed_mix(cfg.seed, static_cast<uint64_t>(i)));
            a.train_seed_base = seed_mix(cfg.seed, static_cast<uint64_t>(i), 0xBEEF);
            if (ps) {
                a.params = ps->params();
                a.params_version = ps->version();
            }
        }

        write_meta();
        for (auto& a : agents) submit_round(a);

        try {
            while (!all_halted()) {
                auto results = eval->get_finished_evals();
                if (results.empty()) {
                    if (!eval->wait_for_activity()) break;  // nothing in flight
                    continue;
                }
                log_busy_intervals();
                for (const auto& r : results) {
                    route_result(r);
                    if (all_halted()) break;
                }
            }
            // drain stragglers so the log stays complete (a2c halts can leave
            // sibling batches in flight)
            while (eval->num_pending() > 0 && eval->wait_for_activity()) {
                for (const auto& r : eval->get_finished_evals()) route_result(r);
            }
            log_busy_intervals();
        } catch (const std::exception& err) {
            Event e;
            e.kind = Event::Kind::end;
            e.t = eval->now();
            e.reason = std::string("error: ") + err.what();
            log.append(std::move(e));
            flush();
            throw;
        }

        Event e;
        e.kind = Event::Kind::end;
        e.t = eval->now();
        if (converged)
            e.reason = "converged";
        else {
            bool time = false;
            for (const auto& a : agents) time |= a.halt_reason == "time";
            e.reason = time ? "time" : "budget";
        }
        log.append(std::move(e));
        flush();

        RunOutput out;
        log.sort_by_time();
        out.log = std::move(log);
        if (ps) {
            if (!out_dir.empty())
                controller::save_checkpoint(ps->params(),
                                            (fs::path(out_dir) / "policy_final.bin").string());
            out.final_policy = ps->params();
        }
        return out;
    }

    void flush() {
        if (out_dir.empty()) return;
        fs::create_directories(out_dir);
        logging::SearchLog copy = log;
        copy.sort_by_time();
        copy.write_jsonl((fs::path(out_dir) / "log.jsonl").string());
    }
};

}  // namespace

RunOutput run_search(const SearchConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    Kernel k(cfg, out_dir);
    return k.run();
}

}  // namespace nas::orchestrator
