#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nas/analytics.hpp"
#include "nas/orchestrator.hpp"

using namespace nas;
using namespace nas::analytics;
using logging::Event;
using logging::SearchLog;

namespace fs = std::filesystem;

namespace {

Event finished(double t, double reward, int agent = 0, space::Encoding enc = {0},
               bool cached = false) {
    Event e;
    e.kind = Event::Kind::finished;
    e.t = t;
    e.reward = reward;
    e.agent = agent;
    e.encoding = std::move(enc);
    e.status = "ok";
    e.from_cache = cached;
    return e;
}

Event busy(int worker, double start, double end) {
    Event e;
    e.kind = Event::Kind::busy;
    e.t = end;
    e.worker = worker;
    e.start = start;
    e.end = end;
    return e;
}

Event meta_event(const std::string& space) {
    Event e;
    e.kind = Event::Kind::meta;
    e.meta = {{"space", space}, {"workers_total", 2}};
    return e;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("best-so-far is a running maximum") {
    SearchLog log;
    log.append(finished(1.0, 0.1, 0, {0}));
    log.append(finished(2.0, 0.3, 0, {1}));
    log.append(finished(3.0, 0.2, 0, {2}, true));  // cached rewards count too
    auto raw = reward_events(log);
    REQUIRE(raw.size() == 3);
    CHECK(raw[0].best == doctest::Approx(0.1));
    CHECK(raw[1].best == doctest::Approx(0.3));
    CHECK(raw[2].best == doctest::Approx(0.3));

    auto bins = trajectory(log, 1.0);
    for (size_t i = 1; i < bins.size(); ++i) CHECK(bins[i].best_so_far >= bins[i - 1].best_so_far);

    SearchLog empty;
    CHECK(reward_events(empty).empty());
    CHECK(trajectory(empty, 1.0).empty());
}

TEST_CASE("utilization bins") {
    SearchLog log;
    log.append(busy(0, 0.0, 1.0));
    log.append(busy(1, 0.0, 1.0));
    log.append(busy(0, 2.0, 3.0));
    auto series = utilization(log, 1.0, 2);
    REQUIRE(series.size() == 3);
    CHECK(series[0] == doctest::Approx(1.0));  // both workers busy
    CHECK(series[1] == doctest::Approx(0.0));  // idle bin
    CHECK(series[2] == doctest::Approx(0.5));  // 1 of 2 busy
    CHECK(mean_utilization(log, 2) == doctest::Approx(3.0 / 6.0));
    CHECK(instant_utilization(log, 0.5, 2) == doctest::Approx(1.0));
    CHECK(instant_utilization(log, 1.5, 2) == doctest::Approx(0.0));
}

TEST_CASE("quantile bands") {
    auto make_log = [&](std::vector<double> rewards) {
        SearchLog log;
        log.append(meta_event("tiny"));
        for (size_t i = 0; i < rewards.size(); ++i)
            log.append(finished(static_cast<double>(i + 1), rewards[i]));
        return log;
    };

    SUBCASE("identical replications collapse to one line") {
        std::vector<SearchLog> logs;
        for (int i = 0; i < 10; ++i) logs.push_back(make_log({0.1, 0.2, 0.3}));
        auto bands = quantile_bands(logs, 1.0);
        REQUIRE(!bands.empty());
        for (const auto& b : bands) {
            CHECK(b.q[0] == doctest::Approx(b.q[1]));
            CHECK(b.q[1] == doctest::Approx(b.q[2]));
        }
    }

    SUBCASE("median of {0, 1} interpolates to one half") {
        std::vector<SearchLog> logs{make_log({0.0}), make_log({1.0})};
        auto bands = quantile_bands(logs, 1.0);
        REQUIRE(!bands.empty());
        CHECK(bands[0].q[1] == doctest::Approx(0.5));
    }

    SUBCASE("bands are ordered at every point") {
        std::vector<SearchLog> logs{make_log({0.1, 0.5}), make_log({0.3, 0.4}),
                                    make_log({0.2, 0.9}), make_log({0.0, 0.6})};
        for (const auto& b : quantile_bands(logs, 0.5)) {
            CHECK(b.q[0] <= b.q[1]);
            CHECK(b.q[1] <= b.q[2]);
        }
    }

    SUBCASE("mismatched benchmarks are rejected") {
        SearchLog other;
        other.append(meta_event("different"));
        other.append(finished(1.0, 0.5));
        std::vector<SearchLog> logs{make_log({0.1}), other};
        CHECK_THROWS_AS(quantile_bands(logs, 1.0), ConfigError);
    }
}

TEST_CASE("top_k dedup and tie-breaks") {
    SearchLog log;
    log.append(finished(1.0, 0.4, 0, {1, 1}));
    log.append(finished(2.0, 0.6, 1, {1, 1}));  // same encoding, better reward
    log.append(finished(3.0, 0.6, 0, {2, 2}));  // tie on reward, later time
    log.append(finished(4.0, 0.1, 0, {3, 3}));

    auto top = top_k(log, 10);  // k beyond unique count returns all
    REQUIRE(top.size() == 3);
    CHECK(top[0].encoding == space::Encoding{1, 1});
    CHECK(top[0].reward == doctest::Approx(0.6));
    CHECK(top[1].encoding == space::Encoding{2, 2});
    CHECK(top[2].reward == doctest::Approx(0.1));

    auto top1 = top_k(log, 1);
    REQUIRE(top1.size() == 1);
    CHECK(top1[0].encoding == space::Encoding{1, 1});
}

TEST_CASE("stats summarizes the run") {
    SearchLog log;
    log.append(meta_event("tiny"));
    log.append(finished(1.0, 0.4, 0, {1}));
    log.append(finished(2.0, 0.6, 1, {1}));
    log.append(finished(3.0, 0.6, 1, {1}, true));
    Event g;
    g.kind = Event::Kind::gradient;
    g.t = 2.5;
    log.append(g);
    Event end;
    end.kind = Event::Kind::end;
    end.t = 3.0;
    end.reason = "budget";
    log.append(end);

    auto s = stats(log);
    CHECK(s.evaluations == 3);
    CHECK(s.cache_hits == 1);
    CHECK(s.unique_architectures == 1);
    CHECK(s.gradient_updates == 1);
    CHECK(s.agents == 2);
    CHECK(s.best_reward == doctest::Approx(0.6));
    CHECK(s.end_reason == "budget");
}

TEST_CASE("baseline records and published ratio arithmetic") {
    fs::create_directories("/tmp/nas_analytics");
    {
        std::ofstream f("/tmp/nas_analytics/combo.json");
        f << R"({"name":"combo","params":13772001,"train_seconds":705.26,"accuracy":0.926})";
    }
    auto b = BaselineRecord::from_json_file("/tmp/nas_analytics/combo.json");
    CHECK(b.params == 13772001);
    // the published best-architecture rows
    CHECK(static_cast<double>(b.params) / 1883301.0 == doctest::Approx(7.31).epsilon(0.001));
    CHECK(164.94 / 63.53 == doctest::Approx(2.596).epsilon(0.001));

    {
        std::ofstream f("/tmp/nas_analytics/bad.json");
        f << R"({"name":"x","params":-1,"train_seconds":1,"accuracy":0.5})";
    }
    CHECK_THROWS_AS(BaselineRecord::from_json_file("/tmp/nas_analytics/bad.json"), ConfigError);
}

TEST_CASE("post_train produces self-consistent ratios") {
    auto manifest = netbench::generate_dataset("combo-mini", 3, 300, "/tmp/nas_analytics/data");
    auto data = netbench::load_dataset(manifest);
    auto spc = space::SearchSpace::build(space::builtin_space("combo_mini"));

    std::vector<TopEntry> picks;
    picks.push_back({spc.sample_random(uint64_t{1}), 0.9, 1.0});
    picks.push_back({spc.sample_random(uint64_t{2}), 0.8, 2.0});

    BaselineRecord baseline;
    baseline.name = "ref";
    baseline.params = 50000;
    baseline.train_seconds = 10.0;
    baseline.accuracy = 0.5;

    PostTrainOptions opt;
    opt.epochs = 2;
    opt.batch_size = 64;
    auto rows = post_train(spc, picks, data, baseline, opt);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        REQUIRE(r.status == "ok");
        CHECK(r.param_ratio == doctest::Approx(50000.0 / r.params));
        CHECK(r.accuracy_ratio == doctest::Approx(r.metric / 0.5));
        CHECK(r.time_ratio > 0.0);
    }

    // identical model and baseline numbers give ratio 1.0
    PostTrainOptions opt2 = opt;
    auto self = post_train(spc, {picks[0]}, data, baseline, opt2);
    BaselineRecord self_base;
    self_base.name = "self";
    self_base.params = self[0].params;
    self_base.train_seconds = self[0].seconds;
    self_base.accuracy = self[0].metric;
    auto again = post_train(spc, {picks[0]}, data, self_base, opt2);
    CHECK(again[0].accuracy_ratio == doctest::Approx(1.0));
    CHECK(again[0].param_ratio == doctest::Approx(1.0));
}

TEST_CASE("csv and svg writers are deterministic") {
    SearchLog log;
    log.append(meta_event("tiny"));
    log.append(finished(1.0, 0.1, 0, {0}));
    log.append(finished(2.0, 0.5, 1, {1}));
    log.append(busy(0, 0.0, 2.0));

    fs::create_directories("/tmp/nas_analytics/out");
    auto raw = reward_events(log);
    auto bins = trajectory(log, 1.0);
    write_trajectory_csv("/tmp/nas_analytics/out/traj.csv", raw, bins);
    write_trajectory_csv("/tmp/nas_analytics/out/traj2.csv", raw, bins);
    auto a = slurp("/tmp/nas_analytics/out/traj.csv");
    CHECK(a == slurp("/tmp/nas_analytics/out/traj2.csv"));
    CHECK(a.find("raw,") != std::string::npos);
    CHECK(a.find("bin,") != std::string::npos);

    write_utilization_csv("/tmp/nas_analytics/out/util.csv", utilization(log, 1.0, 2), 1.0);
    CHECK(slurp("/tmp/nas_analytics/out/util.csv").find("utilization") != std::string::npos);

    std::vector<std::pair<double, double>> series{{0, 0.1}, {1, 0.5}, {2, 0.4}};
    write_line_svg("/tmp/nas_analytics/out/plot.svg", "reward", series);
    auto svg = slurp("/tmp/nas_analytics/out/plot.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("polyline") != std::string::npos);

    write_topk_json("/tmp/nas_analytics/out/topk.json", top_k(log, 2));
    CHECK(slurp("/tmp/nas_analytics/out/topk.json").find("encoding") != std::string::npos);
}
