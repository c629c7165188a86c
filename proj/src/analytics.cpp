#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nas/analytics.hpp"

namespace nas::analytics {

using logging::Event;

namespace {

std::vector<Event> sorted_events(const SearchLog& log) {
    std::vector<Event> ev = log.events();
    std::stable_sort(ev.begin(), ev.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    return ev;
}

double log_makespan(const SearchLog& log) {
    double end = 0.0;
    for (const auto& e : log.events()) {
        end = std::max(end, e.t);
        if (e.kind == Event::Kind::busy) end = std::max(end, e.end);
    }
    return end;
}

}  // namespace

std::vector<TrajectoryPoint> reward_events(const SearchLog& log) {
    std::vector<TrajectoryPoint> out;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : sorted_events(log)) {
        if (e.kind != Event::Kind::finished) continue;
        best = std::max(best, e.reward);
        out.push_back({e.t, e.reward, best, e.agent});
    }
    return out;
}

std::vector<TrajectoryBin> trajectory(const SearchLog& log, double bin_seconds) {
    if (bin_seconds <= 0.0) throw ConfigError("bin width must be > 0");
    auto raw = reward_events(log);
    std::vector<TrajectoryBin> bins;
    if (raw.empty()) return bins;
    double span = raw.back().t;
    long n_bins = static_cast<long>(span / bin_seconds) + 1;
    bins.resize(n_bins);
    for (long b = 0; b < n_bins; ++b) {
        bins[b].t0 = b * bin_seconds;
        bins[b].t1 = (b + 1) * bin_seconds;
        bins[b].max_reward = -std::numeric_limits<double>::infinity();
    }
    for (const auto& p : raw) {
        long b = std::min<long>(static_cast<long>(p.t / bin_seconds), n_bins - 1);
        bins[b].count += 1;
        bins[b].max_reward = std::max(bins[b].max_reward, p.reward);
        bins[b].mean_reward += p.reward;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (auto& b : bins) {
        if (b.count > 0) {
            b.mean_reward /= static_cast<double>(b.count);
            best = std::max(best, b.max_reward);
        } else {
            b.max_reward = 0.0;
        }
        b.best_so_far = best;
    }
    return bins;
}

std::vector<double> utilization(const SearchLog& log, double bin_seconds, int workers) {
    if (bin_seconds <= 0.0 || workers < 1) throw ConfigError("bad utilization parameters");
    double span = log_makespan(log);
    long n_bins = span > 0.0 ? static_cast<long>(std::ceil(span / bin_seconds)) : 0;
    std::vector<double> busy(n_bins, 0.0);
    for (const auto& e : log.events()) {
        if (e.kind != Event::Kind::busy) continue;
        long first = static_cast<long>(e.start / bin_seconds);
        for (long b = first; b < n_bins; ++b) {
            double lo = b * bin_seconds, hi = (b + 1) * bin_seconds;
            if (lo >= e.end) break;
            busy[b] += std::max(0.0, std::min(hi, e.end) - std::max(lo, e.start));
        }
    }
    for (auto& v : busy) v /= bin_seconds * workers;
    return busy;
}

double mean_utilization(const SearchLog& log, int workers) {
    double span = log_makespan(log);
    if (span <= 0.0) return 0.0;
    double busy = 0.0;
    for (const auto& e : log.events())
        if (e.kind == Event::Kind::busy) busy += e.end - e.start;
    return busy / (span * workers);
}

std::vector<double> round_start_times(const SearchLog& log) {
    // submission bursts: distinct submit timestamps
    std::vector<double> times;
    for (const auto& e : log.events())
        if (e.kind == Event::Kind::submitted) times.push_back(e.t);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end(),
                            [](double a, double b) { return std::abs(a - b) < 1e-9; }),
                times.end());
    return times;
}

double instant_utilization(const SearchLog& log, double t, int workers) {
    int busy = 0;
    for (const auto& e : log.events())
        if (e.kind == Event::Kind::busy && e.start <= t + 1e-9 && t < e.end - 1e-9) ++busy;
    return static_cast<double>(busy) / workers;
}

namespace {

double interp_quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    double h = (static_cast<double>(v.size()) - 1.0) * q;
    size_t lo = static_cast<size_t>(h);
    double frac = h - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace

std::vector<BandPoint> quantile_bands(const std::vector<SearchLog>& logs, double bin_seconds,
                                      const std::vector<double>& quantiles) {
    if (logs.size() < 2) throw ConfigError("quantile bands need at least 2 replications");
    if (bin_seconds <= 0.0) throw ConfigError("bin width must be > 0");

    std::string bench;
    for (const auto& log : logs) {
        const auto* meta = log.meta();
        std::string name = meta && meta->contains("space") ? (*meta)["space"].get<std::string>()
                                                           : "";
        if (bench.empty())
            bench = name;
        else if (name != bench)
            throw ConfigError("replication logs cover different spaces: '" + bench + "' vs '" +
                              name + "'");
    }

    std::vector<std::vector<TrajectoryPoint>> reps;
    double span = 0.0;
    for (const auto& log : logs) {
        reps.push_back(reward_events(log));
        if (reps.back().empty()) throw ConfigError("replication log has no rewards");
        span = std::max(span, reps.back().back().t);
    }

    std::vector<BandPoint> out;
    for (double t = bin_seconds; t <= span + bin_seconds * 0.5; t += bin_seconds) {
        std::vector<double> values;
        bool all_have = true;
        for (const auto& rep : reps) {
            // best-so-far at time t (last event with event time <= t)
            double best = 0.0;
            bool have = false;
            for (const auto& p : rep) {
                if (p.t > t) break;
                best = p.best;
                have = true;
            }
            if (!have) {
                all_have = false;
                break;
            }
            values.push_back(best);
        }
        if (!all_have) continue;  // grid point before some replication's first reward
        BandPoint bp;
        bp.t = t;
        for (double q : quantiles) bp.q.push_back(interp_quantile(values, q));
        out.push_back(std::move(bp));
    }
    return out;
}

std::vector<TopEntry> top_k(const SearchLog& log, int k) {
    std::map<space::Encoding, TopEntry> best;
    for (const auto& e : sorted_events(log)) {
        if (e.kind != Event::Kind::finished) continue;
        auto it = best.find(e.encoding);
        if (it == best.end()) {
            best.emplace(e.encoding, TopEntry{e.encoding, e.reward, e.t});
        } else if (e.reward > it->second.reward) {
            it->second.reward = e.reward;
            it->second.first_time = e.t;
        }
    }
    std::vector<TopEntry> entries;
    for (auto& [enc, entry] : best) entries.push_back(entry);
    std::sort(entries.begin(), entries.end(), [](const TopEntry& a, const TopEntry& b) {
        if (a.reward != b.reward) return a.reward > b.reward;
        if (a.first_time != b.first_time) return a.first_time < b.first_time;
        return a.encoding < b.encoding;
    });
    if (k >= 0 && static_cast<size_t>(k) < entries.size()) entries.resize(k);
    return entries;
}

LogStats stats(const SearchLog& log) {
    LogStats s;
    std::map<space::Encoding, int> uniq;
    std::map<int, int> agents;
    s.best_reward = -std::numeric_limits<double>::infinity();
    for (const auto& e : log.events()) {
        switch (e.kind) {
            case Event::Kind::finished:
                s.evaluations += 1;
                s.cache_hits += e.from_cache;
                uniq[e.encoding] += 1;
                agents[e.agent] += 1;
                s.best_reward = std::max(s.best_reward, e.reward);
                break;
            case Event::Kind::gradient: s.gradient_updates += 1; break;
            case Event::Kind::end: s.end_reason = e.reason; break;
            default: break;
        }
    }
    s.unique_architectures = static_cast<long>(uniq.size());
    s.agents = static_cast<int>(agents.size());
    s.makespan = log_makespan(log);
    if (s.evaluations == 0) s.best_reward = 0.0;
    return s;
}

BaselineRecord BaselineRecord::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("missing baseline file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad baseline json: ") + e.what());
    }
    BaselineRecord b;
    b.name = j.value("name", "baseline");
    b.params = j.at("params").get<long>();
    b.train_seconds = j.at("train_seconds").get<double>();
    b.accuracy = j.at("accuracy").get<double>();
    if (b.params <= 0 || b.train_seconds <= 0.0)
        throw ConfigError("baseline params and train_seconds must be positive");
    return b;
}

nlohmann::json BaselineRecord::to_json() const {
    return {{"name", name},
            {"params", params},
            {"train_seconds", train_seconds},
            {"accuracy", accuracy}};
}

std::vector<RatioRow> post_train(const space::SearchSpace& spc,
                                 const std::vector<TopEntry>& picks,
                                 const netbench::TabularDataset& data,
                                 const BaselineRecord& baseline, const PostTrainOptions& opt) {
    std::map<std::string, space::Shape> dims;
    for (size_t g = 0; g < data.train.group_names.size(); ++g) {
        space::Shape s = space::Shape::features(data.train.groups[g].cols);
        for (const auto& in : spc.spec().inputs)
            if (in.name == data.train.group_names[g] && in.shape.seq)
                s = space::Shape::sequence(data.train.groups[g].cols / in.shape.ch, in.shape.ch);
        dims[data.train.group_names[g]] = s;
    }
    netbench::LossKind loss = data.task == netbench::TaskKind::classification
                                  ? netbench::LossKind::cross_entropy
                                  : netbench::LossKind::mse;
    netbench::FidelityBudget budget;
    budget.epochs = opt.epochs;
    budget.subset_fraction = 1.0;
    budget.timeout_seconds = opt.timeout_seconds;
    budget.batch_size = opt.batch_size;

    std::vector<RatioRow> rows;
    int rank = 0;
    for (const auto& pick : picks) {
        RatioRow row;
        row.rank = ++rank;
        row.encoding = pick.encoding;
        row.estimated_reward = pick.reward;
        try {
            auto prog = netbench::compile(spc.decode(pick.encoding), dims, loss);
            auto outcome = netbench::train_and_score(prog, data, budget,
                                                     seed_mix(opt.seed, rank));
            row.params = outcome.params;
            row.seconds = outcome.seconds;
            row.metric = outcome.raw_metric;
            switch (outcome.status) {
                case netbench::TrainOutcome::Status::ok: row.status = "ok"; break;
                case netbench::TrainOutcome::Status::timeout: row.status = "timeout"; break;
                case netbench::TrainOutcome::Status::failed: row.status = "failed"; break;
            }
            if (outcome.status == netbench::TrainOutcome::Status::ok) {
                row.accuracy_ratio = row.metric / baseline.accuracy;
                row.param_ratio =
                    static_cast<double>(baseline.params) / static_cast<double>(row.params);
                row.time_ratio = baseline.train_seconds / std::max(row.seconds, 1e-9);
            }
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- writers ----

namespace {

std::string encoding_str(const space::Encoding& enc) {
    std::string s;
    for (size_t i = 0; i < enc.size(); ++i) s += (i ? " " : "") + std::to_string(enc[i]);
    return s;
}

}  // namespace

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& raw,
                          const std::vector<TrajectoryBin>& bins) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "kind,t0,t1,reward,mean_reward,best_so_far,count,agent\n");
    for (const auto& p : raw)
        std::fprintf(f, "raw,%.9g,%.9g,%.9g,,%.9g,1,%d\n", p.t, p.t, p.reward, p.best, p.agent);
    for (const auto& b : bins)
        std::fprintf(f, "bin,%.9g,%.9g,%.9g,%.9g,%.9g,%ld,\n", b.t0, b.t1,
                     b.count ? b.max_reward : 0.0, b.mean_reward, b.best_so_far, b.count);
    std::fclose(f);
}

void write_utilization_csv(const std::string& path, const std::vector<double>& series,
                           double bin_seconds) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "t0,t1,utilization\n");
    for (size_t i = 0; i < series.size(); ++i)
        std::fprintf(f, "%.9g,%.9g,%.9g\n", i * bin_seconds, (i + 1) * bin_seconds, series[i]);
    std::fclose(f);
}

void write_bands_csv(const std::string& path, const std::vector<BandPoint>& bands,
                     const std::vector<double>& quantiles) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f, "t");
    for (double q : quantiles) std::fprintf(f, ",q%g", q * 100.0);
    std::fprintf(f, "\n");
    for (const auto& b : bands) {
        std::fprintf(f, "%.9g", b.t);
        for (double v : b.q) std::fprintf(f, ",%.9g", v);
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

void write_topk_json(const std::string& path, const std::vector<TopEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries)
        arr.push_back({{"encoding", e.encoding}, {"reward", e.reward}, {"t", e.first_time}});
    std::ofstream f(path);
    if (!f) throw Error("cannot write " + path);
    f << arr.dump(2) << "\n";
}

void write_ratios_csv(const std::string& path, const std::vector<RatioRow>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    std::fprintf(f,
                 "rank,encoding,estimated_reward,status,metric,params,seconds,"
                 "accuracy_ratio,param_ratio,time_ratio\n");
    for (const auto& r : rows) {
        std::string status = r.status;
        for (auto& ch : status)
            if (ch == ',' || ch == '"') ch = ';';
        std::fprintf(f, "%d,\"%s\",%.9g,%s,%.9g,%ld,%.9g,%.9g,%.9g,%.9g\n", r.rank,
                     encoding_str(r.encoding).c_str(), r.estimated_reward, status.c_str(),
                     r.metric, r.params, r.seconds, r.accuracy_ratio, r.param_ratio,
                     r.time_ratio);
    }
    std::fclose(f);
}

void write_line_svg(const std::string& path, const std::string& title,
                    const std::vector<std::pair<double, double>>& series) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw Error("cannot write " + path);
    const int W = 720, H = 360, M = 40;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (!series.empty()) {
        xmin = xmax = series[0].first;
        ymin = ymax = series[0].second;
        for (const auto& [x, y] : series) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
    }
    std::fprintf(f,
                 "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                 "viewBox=\"0 0 %d %d\">\n",
                 W, H, W, H);
    std::fprintf(f, "<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n", W, H);
    std::fprintf(f, "<text x=\"%d\" y=\"20\" font-size=\"14\">%s</text>\n", M, title.c_str());
    std::fprintf(f,
                 "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>"
                 "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                 M, H - M, W - M, H - M, M, M, M, H - M);
    if (!series.empty()) {
        std::fprintf(f, "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"");
        for (const auto& [x, y] : series) {
            double px = M + (x - xmin) / (xmax - xmin) * (W - 2 * M);
            double py = H - M - (y - ymin) / (ymax - ymin) * (H - 2 * M);
            std::fprintf(f, "%.2f,%.2f ", px, py);
        }
        std::fprintf(f, "\"/>\n");
    }
    std::fprintf(f, "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3g</text>\n", 2, H - M, ymin);
    std::fprintf(f, "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3g</text>\n", 2, M + 4, ymax);
    std::fprintf(f, "</svg>\n");
    std::fclose(f);
}

}  // namespace nas::analytics
