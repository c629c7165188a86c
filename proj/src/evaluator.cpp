#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "nas/evaluator.hpp"

namespace nas::evaluator {

const char* to_string(EvalResult::Status s) {
    switch (s) {
        case EvalResult::Status::ok: return "ok";
        case EvalResult::Status::timeout: return "timeout";
        case EvalResult::Status::failed: return "failed";
    }
    return "?";
}

Evaluator::Evaluator(std::unique_ptr<Backend> backend) : backend_(std::move(backend)) {}

void Evaluator::add_eval_batch(const std::vector<EvalTask>& tasks) {
    for (const auto& t : tasks) {
        if (!live_.insert(t.task_id).second)
            throw Error("duplicate live task id " + std::to_string(t.task_id));
        auto& agent_cache = cache_[t.agent_id];
        if (auto hit = agent_cache.find(t.encoding); hit != agent_cache.end()) {
            EvalResult r = hit->second;
            r.task_id = t.task_id;
            r.from_cache = true;
            r.finish_time = backend_->now();
            ready_.push_back(std::move(r));
            continue;
        }
        backend_->submit(t);
    }
}

std::vector<EvalResult> Evaluator::get_finished_evals() {
    std::vector<EvalResult> out = std::move(ready_);
    ready_.clear();
    for (auto& r : backend_->poll()) {
        cache_[r.agent_id].emplace(r.encoding, r);  // keeps the first completion
        out.push_back(std::move(r));
    }
    for (const auto& r : out) live_.erase(r.task_id);
    return out;
}

bool Evaluator::wait_for_activity() {
    if (!ready_.empty()) return true;
    return backend_->wait();
}

double Evaluator::now() const { return backend_->now(); }

// ---- simulated cluster ----

std::pair<std::vector<SimPlacement>, std::vector<BusyInterval>> run_simulated(
    const ClusterModel& cluster, const std::vector<SimJob>& jobs) {
    std::vector<double> free_at(std::max(1, cluster.workers), 0.0);
    std::vector<SimPlacement> placements;
    std::vector<BusyInterval> busy;
    long id = 0;
    for (const auto& job : jobs) {
        int worker = 0;
        for (int w = 1; w < static_cast<int>(free_at.size()); ++w)
            if (free_at[w] < free_at[worker]) worker = w;
        SimPlacement p;
        p.worker = worker;
        p.start = std::max(job.ready + cluster.dispatch_latency, free_at[worker]);
        p.timed_out = job.duration > job.timeout;
        p.end = p.start + std::min(job.duration, job.timeout);
        free_at[worker] = p.end;
        busy.push_back({worker, p.start, p.end, id++});
        placements.push_back(p);
    }
    return {std::move(placements), std::move(busy)};
}

SimulatedBackend::SimulatedBackend(ClusterModel cluster, DurationFn duration, ScoreFn score)
    : cluster_(cluster), duration_(std::move(duration)), score_(std::move(score)) {
    worker_free_.assign(std::max(1, cluster_.workers), 0.0);
}

void SimulatedBackend::submit(const EvalTask& task) {
    double dur = duration_(task);
    if (dur <= 0.0) dur = 1e-9;
    int worker = 0;
    for (int w = 1; w < static_cast<int>(worker_free_.size()); ++w)
        if (worker_free_[w] < worker_free_[worker]) worker = w;
    double start = std::max(clock_ + cluster_.dispatch_latency, worker_free_[worker]);
    bool timed_out = dur > task.budget.timeout_seconds;
    double busy_len = std::min(dur, task.budget.timeout_seconds);
    double end = start + busy_len;
    worker_free_[worker] = end;
    busy_.push_back({worker, start, end, task.task_id});

    EvalResult r;
    r.task_id = task.task_id;
    r.agent_id = task.agent_id;
    r.encoding = task.encoding;
    r.finish_time = end;
    r.train_seconds = busy_len;
    if (timed_out) {
        r.status = EvalResult::Status::timeout;
        r.reward = -1.0;
    } else {
        SyntheticScore s = score_(task);
        r.status = s.ok ? EvalResult::Status::ok : EvalResult::Status::failed;
        r.reward = s.ok ? s.reward : -1.0;
        r.param_count = s.params;
    }
    queue_.emplace(std::make_pair(end, seq_++), std::move(r));
}

std::vector<EvalResult> SimulatedBackend::poll() {
    std::vector<EvalResult> out;
    while (!queue_.empty() && queue_.begin()->first.first <= clock_ + 1e-12) {
        out.push_back(std::move(queue_.begin()->second));
        queue_.erase(queue_.begin());
    }
    return out;
}

bool SimulatedBackend::wait() {
    if (queue_.empty()) return false;
    clock_ = std::max(clock_, queue_.begin()->first.first);
    return true;
}

std::vector<BusyInterval> SimulatedBackend::drain_busy() {
    std::vector<BusyInterval> out = std::move(busy_);
    busy_.clear();
    return out;
}

// ---- local thread pool ----

struct LocalPoolBackend::Impl {
    TrainFn train;
    std::vector<std::thread> threads;
    std::mutex mu;
    std::condition_variable cv_work, cv_done;
    std::deque<EvalTask> queue;
    std::vector<EvalResult> done;
    std::vector<BusyInterval> busy;
    size_t in_flight = 0;
    bool stop = false;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    void worker_loop(int wid) {
        while (true) {
            EvalTask task;
            {
                std::unique_lock lk(mu);
                cv_work.wait(lk, [&] { return stop || !queue.empty(); });
                if (stop && queue.empty()) return;
                task = std::move(queue.front());
                queue.pop_front();
            }
            double start = elapsed();
            EvalResult r;
            r.task_id = task.task_id;
            r.agent_id = task.agent_id;
            r.encoding = task.encoding;
            try {
                netbench::TrainOutcome o = train(task);
                switch (o.status) {
                    case netbench::TrainOutcome::Status::ok:
                        r.status = EvalResult::Status::ok;
                        break;
                    case netbench::TrainOutcome::Status::timeout:
                        r.status = EvalResult::Status::timeout;
                        break;
                    case netbench::TrainOutcome::Status::failed:
                        r.status = EvalResult::Status::failed;
                        break;
                }
                r.reward = o.reward;
                r.train_seconds = o.seconds;
                r.param_count = o.params;
            } catch (const std::exception&) {
                r.status = EvalResult::Status::failed;
                r.reward = -1.0;
            }
            double end = elapsed();
            r.finish_time = end;
            {
                std::lock_guard lk(mu);
                busy.push_back({wid, start, end, task.task_id});
                done.push_back(std::move(r));
                --in_flight;
            }
            cv_done.notify_all();
        }
    }
};

LocalPoolBackend::LocalPoolBackend(int workers, TrainFn train) : impl_(new Impl) {
    impl_->train = std::move(train);
    for (int w = 0; w < std::max(1, workers); ++w)
        impl_->threads.emplace_back([this, w] { impl_->worker_loop(w); });
}

LocalPoolBackend::~LocalPoolBackend() {
    {
        std::lock_guard lk(impl_->mu);
        impl_->stop = true;
    }
    impl_->cv_work.notify_all();
    for (auto& t : impl_->threads) t.join();
}

void LocalPoolBackend::submit(const EvalTask& task) {
    {
        std::lock_guard lk(impl_->mu);
        impl_->queue.push_back(task);
        ++impl_->in_flight;
    }
    impl_->cv_work.notify_one();
}

std::vector<EvalResult> LocalPoolBackend::poll() {
    std::lock_guard lk(impl_->mu);
    std::vector<EvalResult> out = std::move(impl_->done);
    impl_->done.clear();
    return out;
}

bool LocalPoolBackend::wait() {
    std::unique_lock lk(impl_->mu);
    if (impl_->in_flight == 0 && impl_->done.empty()) return false;
    impl_->cv_done.wait(lk, [&] { return !impl_->done.empty() || impl_->in_flight == 0; });
    return true;
}

double LocalPoolBackend::now() const { return impl_->elapsed(); }

std::vector<BusyInterval> LocalPoolBackend::drain_busy() {
    std::lock_guard lk(impl_->mu);
    std::vector<BusyInterval> out = std::move(impl_->busy);
    impl_->busy.clear();
    return out;
}

size_t LocalPoolBackend::pending() const {
    std::lock_guard lk(impl_->mu);
    return impl_->in_flight;
}

}  // namespace nas::evaluator
