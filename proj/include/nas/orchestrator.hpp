#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "nas/controller.hpp"
#include "nas/evaluator.hpp"
#include "nas/search_log.hpp"
#include "nas/space.hpp"

namespace nas::orchestrator {

enum class Strategy { a3c, a2c, random };
enum class BackendKind { simulated, local };
enum class DurationModelKind { constant, uniform, flops };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct SearchConfig {
    Strategy strategy = Strategy::a3c;
    int num_agents = 21;
    int workers_per_agent = 11;
    double wall_clock_budget = 21600.0;  // seconds; simulated time on the sim backend
    long max_evaluations = 0;            // 0 = no cap
    uint64_t seed = 42;

    std::string space = "combo_small";  // builtin name or spec file path
    BackendKind backend = BackendKind::simulated;

    // simulated backend: reward surface + duration model
    uint64_t landscape_seed = 7;
    int landscape_interactions = 4;
    DurationModelKind duration_model = DurationModelKind::constant;
    double duration_const = 1.0;
    double duration_min = 1.0, duration_max = 10.0;
    double dispatch_latency = 0.0;
    double flops_per_second = 1e9;  // flops duration model: params-proportional cost

    // local backend
    std::string dataset_manifest;

    netbench::FidelityBudget fidelity{};

    // controller / PPO
    double ppo_clip = 0.2;
    int ppo_epochs = 4;
    double learning_rate = 0.001;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    controller::GradientMode gradient_mode = controller::GradientMode::cumulative_delta;
    int hidden = 32;
    int embed = 16;

    int async_window = 4;       // gradients averaged per async update
    int convergence_rounds = 3;  // consecutive all-cached rounds per agent
    int checkpoint_every = 0;    // PS updates between checkpoints; 0 = off

    nlohmann::json to_json() const;
    static SearchConfig from_json(const nlohmann::json& j);
    void validate() const;
};

// Holds the canonical policy and the single Adam state. Synchronous rounds
// average one packet per agent; asynchronous updates average a recency window
// and serve the updated parameters to the sender only.
class ParameterServer {
public:
    ParameterServer(controller::PolicyParams init, double lr, int window);

    long version() const { return version_; }
    const controller::PolicyParams& params() const { return params_; }

    const controller::PolicyParams& step_sync(
        const std::vector<controller::GradientPacket>& packets);

    struct AsyncReply {
        long staleness = 0;
        long version = 0;
    };
    AsyncReply step_async(const controller::GradientPacket& packet);

private:
    void apply(const std::vector<double>& grad);
    controller::PolicyParams params_;
    AdamState adam_;
    long version_ = 0;
    size_t window_cap_;
    std::deque<std::vector<double>> window_;
};

struct RunOutput {
    logging::SearchLog log;
    std::optional<controller::PolicyParams> final_policy;
};

// Runs the multi-agent search to completion. When `out_dir` is non-empty the
// log (log.jsonl) and policy checkpoints are written there.
RunOutput run_search(const SearchConfig& cfg, const std::string& out_dir = "");

}  // namespace nas::orchestrator
