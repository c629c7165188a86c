#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "nas/netbench.hpp"
#include "nas/space.hpp"

namespace nas::evaluator {

struct EvalTask {
    long task_id = -1;
    int agent_id = -1;
    space::Encoding encoding;
    netbench::FidelityBudget budget;
    uint64_t seed = 0;  // agent-specific training seed
};

struct EvalResult {
    enum class Status { ok, timeout, failed };
    long task_id = -1;
    int agent_id = -1;
    space::Encoding encoding;
    Status status = Status::ok;
    double reward = 0.0;
    double train_seconds = 0.0;
    long param_count = 0;
    bool from_cache = false;
    double finish_time = 0.0;
};

const char* to_string(EvalResult::Status s);

struct BusyInterval {
    int worker = -1;
    double start = 0.0, end = 0.0;
    long task_id = -1;
};

// Execution backend behind the cache-aware front end. `wait` blocks (or, for
// the simulated cluster, advances the virtual clock) until progress is
// possible; it returns false when nothing is pending.
class Backend {
public:
    virtual ~Backend() = default;
    virtual void submit(const EvalTask& task) = 0;
    virtual std::vector<EvalResult> poll() = 0;
    virtual bool wait() = 0;
    virtual double now() const = 0;
    virtual std::vector<BusyInterval> drain_busy() = 0;
    virtual size_t pending() const = 0;
};

// Asynchronous evaluation front end: submission, nonblocking collection, and
// a per-agent result cache (never shared across agents).
class Evaluator {
public:
    explicit Evaluator(std::unique_ptr<Backend> backend);

    // Cache hits resolve immediately and consume no worker; misses are
    // forwarded FIFO. Never blocks. Throws on a duplicate live task id.
    void add_eval_batch(const std::vector<EvalTask>& tasks);

    // All results completed since the last call, each delivered exactly once.
    std::vector<EvalResult> get_finished_evals();

    // Blocks until new results can appear; false when nothing is in flight.
    bool wait_for_activity();

    double now() const;
    size_t num_pending() const { return live_.size(); }
    std::vector<BusyInterval> drain_busy_intervals() { return backend_->drain_busy(); }

private:
    std::unique_ptr<Backend> backend_;
    std::map<int, std::map<space::Encoding, EvalResult>> cache_;
    std::set<long> live_;
    std::vector<EvalResult> ready_;  // resolved cache hits awaiting collection
};

// ---- simulated cluster ----

struct ClusterModel {
    int workers = 1;
    double dispatch_latency = 0.0;
};

struct SimJob {
    double ready = 0.0;
    double duration = 0.0;
    double timeout = 1e18;
};

struct SimPlacement {
    int worker = -1;
    double start = 0.0, end = 0.0;
    bool timed_out = false;
};

// List scheduling: jobs in order, each on the earliest-free worker, starting
// at max(ready + dispatch latency, worker free time). Timed-out jobs hold a
// worker for exactly the timeout.
std::pair<std::vector<SimPlacement>, std::vector<BusyInterval>> run_simulated(
    const ClusterModel& cluster, const std::vector<SimJob>& jobs);

struct SyntheticScore {
    double reward = 0.0;
    long params = 0;
    bool ok = true;
};

using DurationFn = std::function<double(const EvalTask&)>;
using ScoreFn = std::function<SyntheticScore(const EvalTask&)>;

class SimulatedBackend : public Backend {
public:
    SimulatedBackend(ClusterModel cluster, DurationFn duration, ScoreFn score);

    void submit(const EvalTask& task) override;
    std::vector<EvalResult> poll() override;
    bool wait() override;
    double now() const override { return clock_; }
    std::vector<BusyInterval> drain_busy() override;
    size_t pending() const override { return queue_.size(); }

private:
    ClusterModel cluster_;
    DurationFn duration_;
    ScoreFn score_;
    double clock_ = 0.0;
    std::vector<double> worker_free_;
    long seq_ = 0;
    std::multimap<std::pair<double, long>, EvalResult> queue_;  // keyed by (end, seq)
    std::vector<BusyInterval> busy_;
};

// ---- local thread-pool backend (actual training) ----

using TrainFn = std::function<netbench::TrainOutcome(const EvalTask&)>;

class LocalPoolBackend : public Backend {
public:
    LocalPoolBackend(int workers, TrainFn train);
    ~LocalPoolBackend() override;

    void submit(const EvalTask& task) override;
    std::vector<EvalResult> poll() override;
    bool wait() override;
    double now() const override;
    std::vector<BusyInterval> drain_busy() override;
    size_t pending() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace nas::evaluator
