#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "nas/controller.hpp"

using namespace nas;
using namespace nas::controller;

namespace {

void check_ppo_gradient(const PolicyParams& p, const std::vector<Trajectory>& batch,
                        double clip) {
    auto grad = ppo_loss_gradient(p, batch, clip);
    PolicyParams probe = p;
    const double h = 1e-4;
    for (size_t i = 0; i < probe.w.size(); ++i) {
        double keep = probe.w[i];
        probe.w[i] = keep + h;
        double up = ppo_loss(probe, batch, clip);
        probe.w[i] = keep - h;
        double down = ppo_loss(probe, batch, clip);
        probe.w[i] = keep;
        double fd = (up - down) / (2 * h);
        double tol = 1e-6 + 1e-3 * std::max(std::abs(fd), std::abs(grad[i]));
        CHECK(std::abs(fd - grad[i]) <= tol);
    }
}

std::vector<Trajectory> rewarded_batch(const PolicyParams& p, int n, Rng& rng, Rng& reward_rng) {
    auto batch = sample_batch(p, n, rng);
    for (auto& t : batch) {
        t.reward = reward_rng.uniform();
        t.has_reward = true;
    }
    return batch;
}

}  // namespace

TEST_CASE("init_policy determinism and bookkeeping") {
    std::vector<int> arities{3, 5, 2};
    auto a = init_policy(arities, 7);
    auto b = init_policy(arities, 7);
    CHECK(a.w == b.w);
    auto c = init_policy(arities, 8);
    CHECK(a.w != c.w);

    long total = 0;
    for (const auto& e : a.map.entries) total += e.count;
    CHECK(total == a.size());
    CHECK(a.map.total == a.size());

    const auto& bias = a.map.at("lstm.b");
    for (long i = 0; i < bias.count; ++i) CHECK(a.w[bias.offset + i] == 0.0);
}

TEST_CASE("sampling basics") {
    Rng rng(3);
    auto p = init_policy({1, 4}, 5);
    auto batch = sample_batch(p, 8, rng);
    for (const auto& t : batch) {
        CHECK(t.encoding[0] == 0);  // forced choice
        CHECK(t.logp_old[0] == 0.0);
        CHECK(t.logp_old.size() == 2);
        CHECK(t.values_old.size() == 2);
    }

    Rng r1(9), r2(9);
    auto b1 = sample_batch(p, 4, r1);
    auto b2 = sample_batch(p, 4, r2);
    for (int i = 0; i < 4; ++i) {
        CHECK(b1[i].encoding == b2[i].encoding);
        CHECK(b1[i].logp_old == b2[i].logp_old);
    }
}

TEST_CASE("fresh policies sample near-uniformly") {
    auto p = init_policy({4}, 21);
    Rng rng(4);
    std::vector<int> counts(4, 0);
    const int n = 10000;
    auto batch = sample_batch(p, n, rng);
    for (const auto& t : batch) counts[t.encoding[0]] += 1;
    for (int c : counts) {
        double freq = static_cast<double>(c) / n;
        CHECK(freq >= 0.15);
        CHECK(freq <= 0.35);
    }
}

TEST_CASE("categoricals normalize and start near maximum entropy") {
    auto p = init_policy({13, 9, 4}, 33);
    space::Encoding enc{5, 3, 1};
    auto ev = evaluate_policy(p, enc);
    for (size_t t = 0; t < ev.probs.size(); ++t) {
        double sum = 0.0, entropy = 0.0;
        for (double q : ev.probs[t]) {
            sum += q;
            if (q > 0) entropy -= q * std::log(q);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(entropy >= 0.9 * std::log(static_cast<double>(p.arities[t])));
    }
}

TEST_CASE("ppo surrogate values from the clipped objective") {
    auto p = init_policy({3}, 11);
    p.cfg.value_coef = 0.0;
    p.cfg.entropy_coef = 0.0;

    auto surrogate_for = [&](double ratio, double advantage) {
        auto ev = evaluate_policy(p, {1});
        Trajectory t;
        t.encoding = {1};
        t.logp_old = {ev.logp[0] - std::log(ratio)};  // current/old = ratio
        t.values_old = {0.0};
        t.reward = advantage;  // A = R - V_old = R
        t.has_reward = true;
        PpoDiag diag;
        ppo_loss(p, std::vector<Trajectory>{t}, 0.2, &diag);
        return diag;
    };

    CHECK(surrogate_for(1.5, 1.0).surrogate == doctest::Approx(1.2));    // min(1.5, 1.2)
    CHECK(surrogate_for(1.5, 1.0).clip_fraction == doctest::Approx(1.0));
    CHECK(surrogate_for(0.5, -1.0).surrogate == doctest::Approx(-0.8));  // min(-0.5, -0.8)
    CHECK(surrogate_for(1.0, 0.0).surrogate == doctest::Approx(0.0));
    CHECK(surrogate_for(1.0, 0.7).clip_fraction == doctest::Approx(0.0));
}

TEST_CASE("zero advantage leaves policy heads untouched") {
    auto p = init_policy({4, 3}, 13);
    p.cfg.entropy_coef = 0.0;
    Rng rng(6);
    auto batch = sample_batch(p, 3, rng);
    for (auto& t : batch) {
        t.values_old.assign(t.values_old.size(), 0.25);
        t.reward = 0.25;  // A = R - V_old = 0 everywhere
        t.has_reward = true;
    }
    auto grad = ppo_loss_gradient(p, batch, 0.2);
    for (size_t k = 0; k < p.arities.size(); ++k) {
        const auto& W = p.map.at("head." + std::to_string(k) + ".W");
        const auto& b = p.map.at("head." + std::to_string(k) + ".b");
        for (long i = 0; i < W.count; ++i) CHECK(grad[W.offset + i] == 0.0);
        for (long i = 0; i < b.count; ++i) CHECK(grad[b.offset + i] == 0.0);
    }
    // the critic still learns while V != R
    const auto& cw = p.map.at("critic.w");
    double norm = 0.0;
    for (long i = 0; i < cw.count; ++i) norm += std::abs(grad[cw.offset + i]);
    CHECK(norm > 0.0);
}

TEST_CASE("gradient matches finite differences on random tiny spaces") {
    Rng meta(2024);
    for (int trial = 0; trial < 6; ++trial) {
        int slots = 1 + meta.uniform_int(4);
        std::vector<int> arities;
        for (int k = 0; k < slots; ++k) arities.push_back(1 + meta.uniform_int(5));
        ControllerConfig cfg;
        cfg.hidden = 6;
        cfg.embed = 3;
        cfg.separate_critic_trunk = trial % 3 == 2;
        auto p = init_policy(arities, meta.next(), cfg);
        Rng rng(meta.next()), rr(meta.next());
        auto batch = rewarded_batch(p, 3, rng, rr);

        check_ppo_gradient(p, batch, 0.2);

        // off-policy: evaluate at slightly moved parameters so ratios != 1
        PolicyParams moved = p;
        Rng noise(meta.next());
        for (auto& w : moved.w) w += 0.01 * noise.uniform(-1.0, 1.0);
        check_ppo_gradient(moved, batch, 0.2);
    }
}

TEST_CASE("without clipping the gradient reduces to the plain policy gradient") {
    auto p = init_policy({3, 4}, 77);
    Rng rng(5), rr(6);
    auto batch = rewarded_batch(p, 4, rng, rr);

    auto ppo = ppo_gradient(p, batch, 1e18, 1, GradientMode::first_epoch);

    // independent oracle: central differences of the log-likelihood form
    //   -mean(logp * A) + c_v mean((R - V)^2) - c_e mean(H)
    auto eq1_loss = [&](const PolicyParams& q) {
        double surr = 0.0, value = 0.0, entropy = 0.0;
        long n = 0;
        for (const auto& t : batch) {
            auto ev = evaluate_policy(q, t.encoding);
            for (size_t k = 0; k < t.encoding.size(); ++k) {
                double adv = t.reward - t.values_old[k];
                surr += ev.logp[k] * adv;
                value += (t.reward - ev.values[k]) * (t.reward - ev.values[k]);
                for (double pr : ev.probs[k])
                    if (pr > 0) entropy -= pr * std::log(pr);
                ++n;
            }
        }
        return -surr / n + q.cfg.value_coef * value / n - q.cfg.entropy_coef * entropy / n;
    };
    PolicyParams probe = p;
    const double h = 1e-5;
    for (size_t i = 0; i < probe.w.size(); ++i) {
        double keep = probe.w[i];
        probe.w[i] = keep + h;
        double up = eq1_loss(probe);
        probe.w[i] = keep - h;
        double down = eq1_loss(probe);
        probe.w[i] = keep;
        double fd = (up - down) / (2 * h);
        // at theta == theta_old the ratio and log forms share derivatives
        CHECK(std::abs(fd - ppo.g[i]) <= 1e-6 + 1e-3 * std::abs(fd));
    }
}

TEST_CASE("duplicated trajectories leave the mean gradient unchanged") {
    auto p = init_policy({4, 4}, 19);
    Rng rng(8), rr(9);
    auto batch = rewarded_batch(p, 3, rng, rr);
    auto twice = batch;
    twice.insert(twice.end(), batch.begin(), batch.end());
    auto g1 = ppo_loss_gradient(p, batch, 0.2);
    auto g2 = ppo_loss_gradient(p, twice, 0.2);
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-12));
}

TEST_CASE("gradient packet modes") {
    auto p = init_policy({3, 3}, 55);
    Rng rng(12), rr(13);
    auto batch = rewarded_batch(p, 4, rng, rr);

    auto first = ppo_gradient(p, batch, 0.2, 4, GradientMode::first_epoch);
    CHECK(first.g == ppo_loss_gradient(p, batch, 0.2));

    auto delta = ppo_gradient(p, batch, 0.2, 4, GradientMode::cumulative_delta, 0.01);
    PolicyParams work = p;
    std::vector<double> acc(p.w.size(), 0.0);
    for (int e = 0; e < 4; ++e) {
        auto g = ppo_loss_gradient(work, batch, 0.2);
        for (size_t i = 0; i < g.size(); ++i) {
            acc[i] += g[i];
            work.w[i] -= 0.01 * g[i];
        }
    }
    CHECK(delta.g == acc);

    auto single = ppo_gradient(p, batch, 0.2, 1, GradientMode::cumulative_delta, 0.01);
    CHECK(single.g == first.g);
}

TEST_CASE("rewardless trajectories are rejected") {
    auto p = init_policy({3}, 2);
    Rng rng(1);
    auto batch = sample_batch(p, 1, rng);
    CHECK_THROWS_AS(ppo_loss(p, batch, 0.2), Error);
    batch[0].reward = std::numeric_limits<double>::quiet_NaN();
    batch[0].has_reward = true;
    CHECK_THROWS_AS(ppo_loss(p, batch, 0.2), Error);
}

TEST_CASE("adam update") {
    std::vector<double> params{1.0, -2.0, 0.5};
    AdamState st(3, 0.001);
    std::vector<double> g{0.3, -4.0, 1e-3};
    auto before = params;
    adam_update(params, st, g);
    for (size_t i = 0; i < params.size(); ++i) {
        double step = std::abs(params[i] - before[i]);
        CHECK(step >= 0.9 * st.lr);
        CHECK(step <= st.lr + 1e-12);
        CHECK((params[i] < before[i]) == (g[i] > 0));
    }

    // zero gradient: first moments decay, step advances
    AdamState st2(3, 0.001);
    std::vector<double> p2{1.0, 2.0, 3.0};
    adam_update(p2, st2, std::vector<double>{0.1, 0.1, 0.1});
    auto m_before = st2.m;
    adam_update(p2, st2, std::vector<double>{0.0, 0.0, 0.0});
    CHECK(st2.step == 2);
    for (size_t i = 0; i < 3; ++i) CHECK(std::abs(st2.m[i]) < std::abs(m_before[i]));

    // determinism
    AdamState sa(2, 0.01), sb(2, 0.01);
    std::vector<double> pa{0.0, 0.0}, pb{0.0, 0.0};
    for (int i = 0; i < 5; ++i) {
        std::vector<double> gg{0.1 * i, -0.2};
        adam_update(pa, sa, gg);
        adam_update(pb, sb, gg);
    }
    CHECK(pa == pb);

    CHECK_THROWS_AS(
        adam_update(pa, sa, std::vector<double>{std::numeric_limits<double>::infinity(), 0.0}),
        Error);
}

TEST_CASE("checkpoint round trip") {
    ControllerConfig cfg;
    cfg.hidden = 8;
    cfg.embed = 4;
    auto p = init_policy({3, 7, 2}, 99, cfg);
    std::filesystem::create_directories("/tmp/nas_ckpt");
    save_checkpoint(p, "/tmp/nas_ckpt/p.bin");
    auto q = load_checkpoint("/tmp/nas_ckpt/p.bin");
    CHECK(q.w == p.w);
    CHECK(q.arities == p.arities);
    CHECK(q.cfg.hidden == 8);
    CHECK(q.map.total == p.map.total);
    CHECK_THROWS_AS(load_checkpoint("/tmp/nas_ckpt/missing.bin"), Error);
}
