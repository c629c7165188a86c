#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "nas/analytics.hpp"
#include "nas/netbench.hpp"
#include "nas/orchestrator.hpp"
#include "nas/space.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

nas::space::SearchSpace build_space_arg(const std::string& name) {
    return nas::space::SearchSpace::build(nas::space::resolve_space(name));
}

nas::logging::SearchLog read_log(const std::string& path) {
    std::vector<std::string> warnings;
    auto log = nas::logging::SearchLog::read_jsonl(path, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << path << " " << w << "\n";
    return log;
}

std::string out_dir_for(const std::string& log_path, const std::string& explicit_dir) {
    if (!explicit_dir.empty()) {
        fs::create_directories(explicit_dir);
        return explicit_dir;
    }
    auto dir = fs::path(log_path).parent_path();
    return dir.empty() ? "." : dir.string();
}

std::vector<std::pair<double, double>> best_series(const nas::logging::SearchLog& log) {
    std::vector<std::pair<double, double>> s;
    for (const auto& p : nas::analytics::reward_events(log)) s.emplace_back(p.t, p.best);
    return s;
}

int run(int argc, char** argv) {
    CLI::App app{"Graph-structured neural architecture search with RL agents"};
    app.require_subcommand(1);

    // ---- space ----
    auto* space_cmd = app.add_subcommand("space", "Inspect search spaces");
    space_cmd->require_subcommand(1);
    std::string space_name = "combo_small";
    uint64_t sample_seed = 1;
    bool sample_decode = false;
    bool describe_json = false;
    std::string graph_out;

    auto* size_cmd = space_cmd->add_subcommand("size", "Print the exact space size");
    size_cmd->add_option("--space", space_name, "builtin name or spec JSON path");
    size_cmd->callback([&] {
        auto s = build_space_arg(space_name);
        std::cout << s.size().str() << "\n";
    });

    auto* sample_cmd = space_cmd->add_subcommand("sample", "Sample a random architecture");
    bool sample_summary = false;
    sample_cmd->add_option("--space", space_name, "builtin name or spec JSON path");
    sample_cmd->add_option("--seed", sample_seed, "sampling seed");
    sample_cmd->add_flag("--decode", sample_decode, "also print the decoded graph JSON");
    sample_cmd->add_flag("--summary", sample_summary,
                         "print the compiled program's layer shapes and parameter counts");
    sample_cmd->add_option("--out", graph_out, "write the decoded graph JSON to a file");
    sample_cmd->callback([&] {
        auto s = build_space_arg(space_name);
        auto enc = s.sample_random(sample_seed);
        json j = enc;
        std::cout << j.dump() << "\n";
        if (sample_decode || sample_summary || !graph_out.empty()) {
            auto g = s.decode(enc);
            if (sample_decode) std::cout << g.to_json().dump(2) << "\n";
            if (sample_summary)
                std::cout << nas::netbench::compile(g).summary().dump(2) << "\n";
            if (!graph_out.empty()) {
                std::ofstream f(graph_out);
                f << g.to_json().dump(2) << "\n";
            }
        }
    });

    auto* describe_cmd = space_cmd->add_subcommand("describe", "Show slots, arities and size");
    describe_cmd->add_option("--space", space_name, "builtin name or spec JSON path");
    describe_cmd->add_flag("--json", describe_json, "emit the full spec JSON");
    describe_cmd->callback([&] {
        auto s = build_space_arg(space_name);
        if (describe_json) {
            std::cout << s.spec().to_json().dump(2) << "\n";
            return;
        }
        std::cout << "space: " << (s.spec().name.empty() ? space_name : s.spec().name) << "\n";
        std::cout << "inputs:";
        for (const auto& in : s.spec().inputs) std::cout << " " << in.name << in.shape.str();
        std::cout << "\ndecision slots: " << s.slots().size() << "\n";
        for (size_t k = 0; k < s.slots().size(); ++k) {
            const auto& slot = s.slots()[k];
            std::cout << "  [" << k << "] " << slot.path.str() << " arity " << slot.arity << "\n";
        }
        std::cout << "size: " << s.size().str() << "\n";
    });

    // ---- search run ----
    auto* search_cmd = app.add_subcommand("search", "Run the multi-agent search");
    auto* run_cmd = search_cmd->add_subcommand("run", "Run a search to completion");
    std::string config_path, run_out = "run", strategy_flag, backend_flag, data_flag;
    int agents_flag = -1, workers_flag = -1;
    double budget_flag = -1.0;
    long max_evals_flag = -1;
    int64_t seed_flag = -1;
    std::string run_space_flag;
    run_cmd->add_option("--config", config_path, "search config JSON");
    run_cmd->add_option("--strategy", strategy_flag, "a3c | a2c | random");
    run_cmd->add_option("--agents", agents_flag, "number of agents");
    run_cmd->add_option("--workers", workers_flag, "evaluation workers per agent");
    run_cmd->add_option("--space", run_space_flag, "builtin name or spec JSON path");
    run_cmd->add_option("--seed", seed_flag, "global seed");
    run_cmd->add_option("--budget-seconds", budget_flag, "wall-clock budget");
    run_cmd->add_option("--max-evals", max_evals_flag, "evaluation budget (0 = unbounded)");
    run_cmd->add_option("--backend", backend_flag, "simulated | local");
    run_cmd->add_option("--data", data_flag, "dataset manifest (local backend)");
    run_cmd->add_option("--out", run_out, "run directory");
    run_cmd->callback([&] {
        nas::orchestrator::SearchConfig cfg;
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw nas::ConfigError("missing config: " + config_path);
            json j;
            try {
                f >> j;
            } catch (const std::exception& e) {
                throw nas::ConfigError(std::string("bad config json: ") + e.what());
            }
            cfg = nas::orchestrator::SearchConfig::from_json(j);
        }
        if (!strategy_flag.empty())
            cfg.strategy = nas::orchestrator::strategy_from_string(strategy_flag);
        if (agents_flag > 0) cfg.num_agents = agents_flag;
        if (workers_flag > 0) cfg.workers_per_agent = workers_flag;
        if (!run_space_flag.empty()) cfg.space = run_space_flag;
        if (seed_flag >= 0) cfg.seed = static_cast<uint64_t>(seed_flag);
        if (budget_flag > 0) cfg.wall_clock_budget = budget_flag;
        if (max_evals_flag >= 0) cfg.max_evaluations = max_evals_flag;
        if (!backend_flag.empty()) {
            if (backend_flag == "simulated")
                cfg.backend = nas::orchestrator::BackendKind::simulated;
            else if (backend_flag == "local")
                cfg.backend = nas::orchestrator::BackendKind::local;
            else
                throw nas::ConfigError("unknown backend: " + backend_flag);
        }
        if (!data_flag.empty()) {
            cfg.dataset_manifest = data_flag;
            if (backend_flag.empty() && config_path.empty())
                cfg.backend = nas::orchestrator::BackendKind::local;
        }
        cfg.validate();
        fs::create_directories(run_out);
        auto out = nas::orchestrator::run_search(cfg, run_out);
        auto st = nas::analytics::stats(out.log);
        std::cout << "evaluations: " << st.evaluations << " (cache hits " << st.cache_hits
                  << ")\nunique architectures: " << st.unique_architectures
                  << "\nbest reward: " << st.best_reward << "\nend: " << st.end_reason
                  << "\nlog: " << (fs::path(run_out) / "log.jsonl").string() << "\n";
    });

    // ---- analyze ----
    auto* analyze_cmd = app.add_subcommand("analyze", "Derive analytics from a run log");
    analyze_cmd->require_subcommand(1);
    std::string log_path, analyze_out_dir;
    double bin_seconds = 0.0;
    int workers_opt = 0;
    int topk_k = 50;
    std::vector<std::string> quantile_logs;

    auto add_common = [&](CLI::App* c, bool needs_log = true) {
        if (needs_log) c->add_option("--log", log_path, "run log (jsonl)")->required();
        c->add_option("--out-dir", analyze_out_dir, "output directory (default: log's)");
    };

    auto* traj_cmd = analyze_cmd->add_subcommand("trajectory", "Reward over time");
    add_common(traj_cmd);
    traj_cmd->add_option("--bin", bin_seconds, "bin width in seconds");
    traj_cmd->callback([&] {
        auto log = read_log(log_path);
        double bin = bin_seconds > 0 ? bin_seconds : std::max(1.0, nas::analytics::stats(log).makespan / 50.0);
        auto raw = nas::analytics::reward_events(log);
        auto bins = nas::analytics::trajectory(log, bin);
        std::string dir = out_dir_for(log_path, analyze_out_dir);
        nas::analytics::write_trajectory_csv((fs::path(dir) / "trajectory.csv").string(), raw, bins);
        nas::analytics::write_line_svg((fs::path(dir) / "trajectory.svg").string(),
                                       "best reward over time", best_series(log));
        std::cout << (fs::path(dir) / "trajectory.csv").string() << "\n";
    });

    auto* util_cmd = analyze_cmd->add_subcommand("utilization", "Worker busy fraction over time");
    add_common(util_cmd);
    util_cmd->add_option("--bin", bin_seconds, "bin width in seconds");
    util_cmd->add_option("--workers", workers_opt, "worker count (default: from log meta)");
    util_cmd->callback([&] {
        auto log = read_log(log_path);
        int workers = workers_opt;
        if (workers <= 0) {
            const auto* meta = log.meta();
            if (!meta || !meta->contains("workers_total"))
                throw nas::ConfigError("log has no worker count; pass --workers");
            workers = (*meta)["workers_total"].get<int>();
        }
        double bin = bin_seconds > 0 ? bin_seconds : std::max(1.0, nas::analytics::stats(log).makespan / 50.0);
        auto series = nas::analytics::utilization(log, bin, workers);
        std::string dir = out_dir_for(log_path, analyze_out_dir);
        nas::analytics::write_utilization_csv((fs::path(dir) / "utilization.csv").string(),
                                              series, bin);
        std::vector<std::pair<double, double>> sv;
        for (size_t i = 0; i < series.size(); ++i) sv.emplace_back((i + 0.5) * bin, series[i]);
        nas::analytics::write_line_svg((fs::path(dir) / "utilization.svg").string(),
                                       "worker utilization", sv);
        std::cout << "mean utilization: " << nas::analytics::mean_utilization(log, workers)
                  << "\n" << (fs::path(dir) / "utilization.csv").string() << "\n";
    });

    auto* quant_cmd = analyze_cmd->add_subcommand("quantiles",
                                                  "Best-so-far quantile bands across replications");
    quant_cmd->add_option("--logs", quantile_logs, "replication logs (jsonl)")
        ->required()
        ->expected(-2);
    quant_cmd->add_option("--bin", bin_seconds, "bin width in seconds");
    quant_cmd->add_option("--out-dir", analyze_out_dir, "output directory");
    quant_cmd->callback([&] {
        std::vector<nas::logging::SearchLog> logs;
        for (const auto& p : quantile_logs) logs.push_back(read_log(p));
        double span = 0.0;
        for (const auto& l : logs) span = std::max(span, nas::analytics::stats(l).makespan);
        double bin = bin_seconds > 0 ? bin_seconds : std::max(1.0, span / 50.0);
        auto bands = nas::analytics::quantile_bands(logs, bin);
        std::string dir = out_dir_for(quantile_logs.front(), analyze_out_dir);
        nas::analytics::write_bands_csv((fs::path(dir) / "quantiles.csv").string(), bands,
                                        {0.1, 0.5, 0.9});
        std::vector<std::pair<double, double>> med;
        for (const auto& b : bands) med.emplace_back(b.t, b.q[1]);
        nas::analytics::write_line_svg((fs::path(dir) / "quantiles.svg").string(),
                                       "median best-so-far across replications", med);
        std::cout << (fs::path(dir) / "quantiles.csv").string() << "\n";
    });

    auto* topk_cmd = analyze_cmd->add_subcommand("topk", "Best unique architectures");
    add_common(topk_cmd);
    topk_cmd->add_option("--k", topk_k, "how many");
    topk_cmd->callback([&] {
        auto log = read_log(log_path);
        auto entries = nas::analytics::top_k(log, topk_k);
        std::string dir = out_dir_for(log_path, analyze_out_dir);
        nas::analytics::write_topk_json((fs::path(dir) / "topk.json").string(), entries);
        for (const auto& e : entries) {
            json j = e.encoding;
            std::cout << j.dump() << " reward " << e.reward << "\n";
        }
    });

    auto* stats_cmd = analyze_cmd->add_subcommand("stats", "Run summary");
    add_common(stats_cmd);
    stats_cmd->callback([&] {
        auto log = read_log(log_path);
        auto s = nas::analytics::stats(log);
        json j = {{"evaluations", s.evaluations},
                  {"cache_hits", s.cache_hits},
                  {"unique_architectures", s.unique_architectures},
                  {"gradient_updates", s.gradient_updates},
                  {"agents", s.agents},
                  {"best_reward", s.best_reward},
                  {"makespan", s.makespan},
                  {"end_reason", s.end_reason}};
        std::cout << j.dump(2) << "\n";
    });

    // ---- post-train ----
    auto* post_cmd = app.add_subcommand("post-train", "Retrain top architectures at full fidelity");
    std::string post_log, post_baseline, post_data, post_space, post_out;
    int post_top = 50, post_epochs = 20, post_batch = 32;
    uint64_t post_seed = 1;
    post_cmd->add_option("--log", post_log, "run log (jsonl)")->required();
    post_cmd->add_option("--top", post_top, "architectures to retrain");
    post_cmd->add_option("--epochs", post_epochs, "training epochs");
    post_cmd->add_option("--batch", post_batch, "batch size");
    post_cmd->add_option("--seed", post_seed, "training seed");
    post_cmd->add_option("--baseline", post_baseline, "baseline record JSON")->required();
    post_cmd->add_option("--data", post_data, "dataset manifest JSON")->required();
    post_cmd->add_option("--space", post_space, "space (default: from log meta)");
    post_cmd->add_option("--out-dir", post_out, "output directory (default: log's)");
    post_cmd->callback([&] {
        auto log = read_log(post_log);
        std::optional<nas::space::SearchSpace> spc;
        if (!post_space.empty()) {
            spc = build_space_arg(post_space);
        } else {
            const auto* meta = log.meta();
            if (!meta || !meta->contains("space_spec"))
                throw nas::ConfigError("log has no embedded space; pass --space");
            spc = nas::space::SearchSpace::build(
                nas::space::SpaceSpec::from_json((*meta)["space_spec"]));
        }
        auto picks = nas::analytics::top_k(log, post_top);
        auto data = nas::netbench::load_dataset(post_data);
        auto baseline = nas::analytics::BaselineRecord::from_json_file(post_baseline);
        nas::analytics::PostTrainOptions opt;
        opt.epochs = post_epochs;
        opt.batch_size = post_batch;
        opt.seed = post_seed;
        auto rows = nas::analytics::post_train(*spc, picks, data, baseline, opt);
        std::string dir = out_dir_for(post_log, post_out);
        nas::analytics::write_ratios_csv((fs::path(dir) / "ratios.csv").string(), rows);
        std::cout << (fs::path(dir) / "ratios.csv").string() << "\n";
    });

    // ---- data ----
    auto* data_cmd = app.add_subcommand("data", "Synthetic dataset tools");
    auto* gen_cmd = data_cmd->add_subcommand("gen", "Generate a seeded synthetic dataset");
    std::string gen_preset = "combo-mini", gen_out = "data";
    uint64_t gen_seed = 1;
    long gen_rows = 2000;
    gen_cmd->add_option("--preset", gen_preset, "combo-mini | uno-mini | nt3-mini");
    gen_cmd->add_option("--seed", gen_seed, "generator seed");
    gen_cmd->add_option("--rows", gen_rows, "training rows");
    gen_cmd->add_option("--out", gen_out, "output directory");
    gen_cmd->callback([&] {
        std::cout << nas::netbench::generate_dataset(gen_preset, gen_seed, gen_rows, gen_out)
                  << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const nas::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
