#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nas/netbench.hpp"
#include "nas/search_log.hpp"
#include "nas/space.hpp"

namespace nas::analytics {

using logging::SearchLog;

struct TrajectoryPoint {
    double t = 0.0;
    double reward = 0.0;
    double best = 0.0;  // best-so-far at this event
    int agent = -1;
};

struct TrajectoryBin {
    double t0 = 0.0, t1 = 0.0;
    long count = 0;
    double max_reward = 0.0;
    double mean_reward = 0.0;
    double best_so_far = 0.0;
};

// Raw reward stream in time order, with the running best attached.
std::vector<TrajectoryPoint> reward_events(const SearchLog& log);

std::vector<TrajectoryBin> trajectory(const SearchLog& log, double bin_seconds);

// Per-bin busy fraction: sum of busy time / (bin width * workers).
std::vector<double> utilization(const SearchLog& log, double bin_seconds, int workers);

// Exact mean over [0, makespan].
double mean_utilization(const SearchLog& log, int workers);

// Instants where every worker should be busy under a synchronous strategy:
// t=0 plus each barrier release that was followed by submissions.
std::vector<double> round_start_times(const SearchLog& log);
double instant_utilization(const SearchLog& log, double t, int workers);

struct BandPoint {
    double t = 0.0;
    std::vector<double> q;  // parallel to the requested quantiles
};

// Empirical quantiles (linear interpolation) of best-so-far across
// replications, on a shared time grid. Throws when logs cover different
// spaces.
std::vector<BandPoint> quantile_bands(const std::vector<SearchLog>& logs, double bin_seconds,
                                      const std::vector<double>& quantiles = {0.1, 0.5, 0.9});

struct TopEntry {
    space::Encoding encoding;
    double reward = 0.0;
    double first_time = 0.0;
};

// k best unique encodings by reward; ties resolved by earlier completion then
// lexicographic encoding.
std::vector<TopEntry> top_k(const SearchLog& log, int k);

struct LogStats {
    long evaluations = 0;
    long cache_hits = 0;
    long unique_architectures = 0;
    long gradient_updates = 0;
    int agents = 0;
    double best_reward = 0.0;
    double makespan = 0.0;
    std::string end_reason;
};

LogStats stats(const SearchLog& log);

struct BaselineRecord {
    std::string name;
    long params = 0;
    double train_seconds = 0.0;
    double accuracy = 0.0;  // R^2 or classification accuracy

    static BaselineRecord from_json_file(const std::string& path);
    nlohmann::json to_json() const;
};

struct RatioRow {
    int rank = 0;
    space::Encoding encoding;
    double estimated_reward = 0.0;
    std::string status;
    double metric = 0.0;  // post-training R^2 / accuracy
    long params = 0;
    double seconds = 0.0;
    double accuracy_ratio = 0.0;  // metric / baseline
    double param_ratio = 0.0;     // baseline params / params
    double time_ratio = 0.0;      // baseline seconds / seconds
};

struct PostTrainOptions {
    int epochs = 20;
    int batch_size = 32;
    uint64_t seed = 1;
    double timeout_seconds = 1e18;  // "without a timeout"
};

// Full-fidelity retraining of the given encodings; failures are recorded per
// row and the batch continues.
std::vector<RatioRow> post_train(const space::SearchSpace& spc,
                                 const std::vector<TopEntry>& picks,
                                 const netbench::TabularDataset& data,
                                 const BaselineRecord& baseline, const PostTrainOptions& opt);

// CSV/SVG writers. CSV is the canonical output; the SVG is a dependency-free
// polyline chart.
void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& raw,
                          const std::vector<TrajectoryBin>& bins);
void write_utilization_csv(const std::string& path, const std::vector<double>& series,
                           double bin_seconds);
void write_bands_csv(const std::string& path, const std::vector<BandPoint>& bands,
                     const std::vector<double>& quantiles);
void write_topk_json(const std::string& path, const std::vector<TopEntry>& entries);
void write_ratios_csv(const std::string& path, const std::vector<RatioRow>& rows);
void write_line_svg(const std::string& path, const std::string& title,
                    const std::vector<std::pair<double, double>>& series);

}  // namespace nas::analytics
