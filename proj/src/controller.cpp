#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "nas/controller.hpp"

namespace nas::controller {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Layout {
    int H, E, T;
    int n_tokens;             // 1 start token + one per (slot, choice)
    std::vector<int> tok_off;  // slot -> first token id - 1
    long embed, wx, wh, b;     // offsets
    std::vector<long> head_w, head_b;
    long cwx = -1, cwh = -1, cb = -1;  // separate critic trunk
    long critic_w, critic_b;
    long total;
};

Layout make_layout(const std::vector<int>& arities, const ControllerConfig& cfg) {
    Layout L;
    L.H = cfg.hidden;
    L.E = cfg.embed;
    L.T = static_cast<int>(arities.size());
    L.n_tokens = 1;
    for (int a : arities) {
        L.tok_off.push_back(L.n_tokens - 1);
        L.n_tokens += a;
    }
    long off = 0;
    auto claim = [&](long n) {
        long at = off;
        off += n;
        return at;
    };
    L.embed = claim(static_cast<long>(L.n_tokens) * L.E);
    L.wx = claim(4L * L.H * L.E);
    L.wh = claim(4L * L.H * L.H);
    L.b = claim(4L * L.H);
    for (int a : arities) {
        L.head_w.push_back(claim(static_cast<long>(a) * L.H));
        L.head_b.push_back(claim(a));
    }
    if (cfg.separate_critic_trunk) {
        L.cwx = claim(4L * L.H * L.E);
        L.cwh = claim(4L * L.H * L.H);
        L.cb = claim(4L * L.H);
    }
    L.critic_w = claim(L.H);
    L.critic_b = claim(1);
    L.total = off;
    return L;
}

PartitionMap make_partition(const std::vector<int>& arities, const ControllerConfig& cfg) {
    Layout L = make_layout(arities, cfg);
    PartitionMap m;
    auto add = [&](const std::string& name, long offset, long count) {
        m.entries.push_back({name, offset, count});
    };
    add("embed", L.embed, static_cast<long>(L.n_tokens) * L.E);
    add("lstm.Wx", L.wx, 4L * L.H * L.E);
    add("lstm.Wh", L.wh, 4L * L.H * L.H);
    add("lstm.b", L.b, 4L * L.H);
    for (size_t k = 0; k < arities.size(); ++k) {
        add("head." + std::to_string(k) + ".W", L.head_w[k],
            static_cast<long>(arities[k]) * L.H);
        add("head." + std::to_string(k) + ".b", L.head_b[k], arities[k]);
    }
    if (cfg.separate_critic_trunk) {
        add("critic_lstm.Wx", L.cwx, 4L * L.H * L.E);
        add("critic_lstm.Wh", L.cwh, 4L * L.H * L.H);
        add("critic_lstm.b", L.cb, 4L * L.H);
    }
    add("critic.w", L.critic_w, L.H);
    add("critic.b", L.critic_b, 1);
    m.total = L.total;
    return m;
}

// One trajectory's forward caches, enough to replay the backward pass.
struct StepCache {
    int token;
    std::vector<double> i, f, g, o;  // post-nonlinearity gates
    std::vector<double> c, tc, h;    // cell, tanh(cell), hidden
    // separate critic trunk
    std::vector<double> ci, cf, cg, co, cc, ctc, ch;
    std::vector<double> probs;
    double logp = 0.0, value = 0.0, entropy = 0.0;
};

struct TrunkRef {
    const double *Wx, *Wh, *b;
};

void lstm_step(const TrunkRef& t, int H, int E, const double* x, const double* h_prev,
               const double* c_prev, std::vector<double>& gi, std::vector<double>& gf,
               std::vector<double>& gg, std::vector<double>& go, std::vector<double>& c,
               std::vector<double>& tc, std::vector<double>& h) {
    gi.assign(H, 0.0);
    gf.assign(H, 0.0);
    gg.assign(H, 0.0);
    go.assign(H, 0.0);
    c.assign(H, 0.0);
    tc.assign(H, 0.0);
    h.assign(H, 0.0);
    for (int u = 0; u < H; ++u) {
        double z[4];
        for (int gate = 0; gate < 4; ++gate) {
            int row = gate * H + u;
            double acc = t.b[row];
            const double* wx = t.Wx + static_cast<long>(row) * E;
            for (int e = 0; e < E; ++e) acc += wx[e] * x[e];
            const double* wh = t.Wh + static_cast<long>(row) * H;
            for (int v = 0; v < H; ++v) acc += wh[v] * h_prev[v];
            z[gate] = acc;
        }
        gi[u] = sigmoid(z[0]);
        gf[u] = sigmoid(z[1]);
        gg[u] = std::tanh(z[2]);
        go[u] = sigmoid(z[3]);
        c[u] = gf[u] * c_prev[u] + gi[u] * gg[u];
        tc[u] = std::tanh(c[u]);
        h[u] = go[u] * tc[u];
    }
}

// Runs the controller once. With `sampler` set, actions are drawn step by
// step and written into `actions`; otherwise the given sequence is replayed.
std::vector<StepCache> run_controller(const PolicyParams& p, const Layout& L,
                                      space::Encoding& actions, Rng* sampler) {
    const double* w = p.w.data();
    TrunkRef trunk{w + L.wx, w + L.wh, w + L.b};
    TrunkRef ctrunk{L.cwx >= 0 ? w + L.cwx : nullptr, L.cwx >= 0 ? w + L.cwh : nullptr,
                    L.cwx >= 0 ? w + L.cb : nullptr};

    std::vector<double> h(L.H, 0.0), c(L.H, 0.0);
    std::vector<double> ch(L.H, 0.0), cc(L.H, 0.0);
    std::vector<StepCache> steps(L.T);
    if (sampler) actions.assign(L.T, 0);

    for (int t = 0; t < L.T; ++t) {
        StepCache& s = steps[t];
        s.token = t == 0 ? 0 : 1 + L.tok_off[t - 1] + actions[t - 1];
        const double* x = w + L.embed + static_cast<long>(s.token) * L.E;

        lstm_step(trunk, L.H, L.E, x, h.data(), c.data(), s.i, s.f, s.g, s.o, s.c, s.tc, s.h);
        h = s.h;
        c = s.c;

        const double* hv = s.h.data();
        if (L.cwx >= 0) {
            lstm_step(ctrunk, L.H, L.E, x, ch.data(), cc.data(), s.ci, s.cf, s.cg, s.co, s.cc,
                      s.ctc, s.ch);
            ch = s.ch;
            cc = s.cc;
            hv = s.ch.data();
        }

        int a = p.arities[t];
        const double* W = w + L.head_w[t];
        const double* bias = w + L.head_b[t];
        std::vector<double> logits(a);
        for (int j = 0; j < a; ++j) {
            double acc = bias[j];
            const double* wr = W + static_cast<long>(j) * L.H;
            for (int u = 0; u < L.H; ++u) acc += wr[u] * s.h[u];
            if (!std::isfinite(acc)) throw Error("non-finite policy logits (diverged)");
            logits[j] = acc;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double lse = 0.0;
        for (double z : logits) lse += std::exp(z - mx);
        lse = mx + std::log(lse);
        s.probs.resize(a);
        s.entropy = 0.0;
        for (int j = 0; j < a; ++j) {
            s.probs[j] = std::exp(logits[j] - lse);
            if (s.probs[j] > 0.0) s.entropy -= s.probs[j] * std::log(s.probs[j]);
        }

        if (sampler) {
            double u = sampler->uniform();
            int pick = a - 1;  // rounding tail falls on the last choice
            double cum = 0.0;
            for (int j = 0; j < a; ++j) {
                cum += s.probs[j];
                if (u < cum) {
                    pick = j;
                    break;
                }
            }
            actions[t] = pick;
        }
        s.logp = logits[actions[t]] - lse;

        double v = w[L.critic_b];
        const double* cw = w + L.critic_w;
        for (int u = 0; u < L.H; ++u) v += cw[u] * hv[u];
        s.value = v;
    }
    return steps;
}

std::vector<StepCache> forward_pass(const PolicyParams& p, const Layout& L,
                                    const space::Encoding& actions) {
    space::Encoding fixed = actions;
    return run_controller(p, L, fixed, nullptr);
}

// BPTT through one trunk. g_h[t] holds dL/dh_t contributions from the heads;
// token gradients land in the embedding rows, weight gradients in `grad`.
void trunk_backward(const Layout& L, const double* w, long wx, long wh, long b, bool critic_trunk,
                    const std::vector<StepCache>& steps, std::vector<std::vector<double>>& g_h,
                    std::vector<double>& grad) {
    const int H = L.H, E = L.E;
    std::vector<double> g_c(H, 0.0);
    std::vector<double> gz(4 * H);
    for (int t = L.T - 1; t >= 0; --t) {
        const StepCache& s = steps[t];
        const auto& gi = critic_trunk ? s.ci : s.i;
        const auto& gf = critic_trunk ? s.cf : s.f;
        const auto& gg = critic_trunk ? s.cg : s.g;
        const auto& go = critic_trunk ? s.co : s.o;
        const auto& tc = critic_trunk ? s.ctc : s.tc;

        const double* c_prev =
            t == 0 ? nullptr : (critic_trunk ? steps[t - 1].cc.data() : steps[t - 1].c.data());
        const double* h_prev =
            t == 0 ? nullptr : (critic_trunk ? steps[t - 1].ch.data() : steps[t - 1].h.data());

        for (int u = 0; u < H; ++u) {
            double gh = g_h[t][u];
            double g_o_ = gh * tc[u];
            double g_c_ = g_c[u] + gh * go[u] * (1.0 - tc[u] * tc[u]);
            double cp = c_prev ? c_prev[u] : 0.0;
            double g_f_ = g_c_ * cp;
            double g_i_ = g_c_ * gg[u];
            double g_g_ = g_c_ * gi[u];
            g_c[u] = g_c_ * gf[u];  // flows to t-1
            gz[0 * H + u] = g_i_ * gi[u] * (1.0 - gi[u]);
            gz[1 * H + u] = g_f_ * gf[u] * (1.0 - gf[u]);
            gz[2 * H + u] = g_g_ * (1.0 - gg[u] * gg[u]);
            gz[3 * H + u] = g_o_ * go[u] * (1.0 - go[u]);
        }

        const double* x = w + L.embed + static_cast<long>(s.token) * E;
        double* g_embed = grad.data() + L.embed + static_cast<long>(s.token) * E;
        for (int row = 0; row < 4 * H; ++row) {
            double gzr = gz[row];
            if (gzr == 0.0) continue;
            double* gwx = grad.data() + wx + static_cast<long>(row) * E;
            const double* wxr = w + wx + static_cast<long>(row) * E;
            for (int e = 0; e < E; ++e) {
                gwx[e] += gzr * x[e];
                g_embed[e] += gzr * wxr[e];
            }
            double* gwh = grad.data() + wh + static_cast<long>(row) * H;
            const double* whr = w + wh + static_cast<long>(row) * H;
            if (h_prev) {
                for (int v = 0; v < H; ++v) {
                    gwh[v] += gzr * h_prev[v];
                    g_h[t - 1][v] += gzr * whr[v];
                }
            }
            grad[b + row] += gzr;
        }
    }
}

struct LossAccum {
    double surrogate = 0.0, value = 0.0, entropy = 0.0;
    long clipped = 0, count = 0;
    double kl = 0.0;
};

}  // namespace

const PartitionMap::Entry& PartitionMap::at(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return e;
    throw Error("no partition entry '" + name + "'");
}

PolicyParams init_policy(const std::vector<int>& arities, uint64_t seed, ControllerConfig cfg) {
    if (arities.empty()) throw Error("cannot build a policy over zero decision slots");
    PolicyParams p;
    p.arities = arities;
    p.cfg = cfg;
    p.map = make_partition(arities, cfg);
    p.w.assign(p.map.total, 0.0);

    Layout L = make_layout(arities, cfg);
    Rng rng(seed);
    auto fill = [&](long off, long n, double a) {
        for (long i = 0; i < n; ++i) p.w[off + i] = rng.uniform(-a, a);
    };
    fill(L.embed, static_cast<long>(L.n_tokens) * L.E, 0.1);
    fill(L.wx, 4L * L.H * L.E, std::sqrt(6.0 / (L.E + 4.0 * L.H)));
    fill(L.wh, 4L * L.H * L.H, std::sqrt(6.0 / (L.H + 4.0 * L.H)));
    // biases zero
    for (size_t k = 0; k < arities.size(); ++k) {
        // small head weights keep every categorical near uniform at the start
        fill(L.head_w[k], static_cast<long>(arities[k]) * L.H, 0.01);
    }
    if (cfg.separate_critic_trunk) {
        fill(L.cwx, 4L * L.H * L.E, std::sqrt(6.0 / (L.E + 4.0 * L.H)));
        fill(L.cwh, 4L * L.H * L.H, std::sqrt(6.0 / (L.H + 4.0 * L.H)));
    }
    fill(L.critic_w, L.H, 0.01);
    return p;
}

PolicyParams init_policy(const space::SearchSpace& space, uint64_t seed, ControllerConfig cfg) {
    return init_policy(space.arities(), seed, cfg);
}

PolicyEval evaluate_policy(const PolicyParams& p, const space::Encoding& actions) {
    if (actions.size() != p.arities.size())
        throw Error("encoding length does not match the policy's decision slots");
    Layout L = make_layout(p.arities, p.cfg);
    auto steps = forward_pass(p, L, actions);
    PolicyEval out;
    for (const auto& s : steps) {
        out.probs.push_back(s.probs);
        out.logp.push_back(s.logp);
        out.values.push_back(s.value);
    }
    return out;
}

std::vector<Trajectory> sample_batch(const PolicyParams& p, int batch, Rng& rng) {
    Layout L = make_layout(p.arities, p.cfg);
    std::vector<Trajectory> out;
    out.reserve(batch);
    for (int i = 0; i < batch; ++i) {
        Trajectory traj;
        auto steps = run_controller(p, L, traj.encoding, &rng);
        for (const auto& s : steps) {
            traj.logp_old.push_back(s.logp);
            traj.values_old.push_back(s.value);
        }
        out.push_back(std::move(traj));
    }
    return out;
}

namespace {

// Shared core of ppo_loss / ppo_loss_gradient. When `grad` is non-null the
// full backward pass runs.
double ppo_eval(const PolicyParams& p, std::span<const Trajectory> batch, double clip_eps,
                PpoDiag* diag, std::vector<double>* grad) {
    if (batch.empty()) throw Error("empty trajectory batch");
    Layout L = make_layout(p.arities, p.cfg);
    const double inv_n = 1.0 / (static_cast<double>(batch.size()) * L.T);
    const double c_v = p.cfg.value_coef, c_e = p.cfg.entropy_coef;
    const double lo = 1.0 - clip_eps, hi = 1.0 + clip_eps;

    LossAccum acc;
    if (grad) grad->assign(p.w.size(), 0.0);

    for (const Trajectory& traj : batch) {
        if (!traj.has_reward || !std::isfinite(traj.reward))
            throw Error("trajectory reward missing or non-finite");
        if (traj.encoding.size() != static_cast<size_t>(L.T) ||
            traj.logp_old.size() != static_cast<size_t>(L.T) ||
            traj.values_old.size() != static_cast<size_t>(L.T))
            throw Error("trajectory does not match the policy's decision slots");

        auto steps = forward_pass(p, L, traj.encoding);
        const double R = traj.reward;

        std::vector<std::vector<double>> g_h(L.T, std::vector<double>(L.H, 0.0));
        std::vector<std::vector<double>> g_ch;
        if (grad && L.cwx >= 0) g_ch.assign(L.T, std::vector<double>(L.H, 0.0));

        for (int t = 0; t < L.T; ++t) {
            const StepCache& s = steps[t];
            const int a = traj.encoding[t];
            const double adv = R - traj.values_old[t];
            const double ratio = std::exp(s.logp - traj.logp_old[t]);
            const double s1 = ratio * adv;
            const double s2 = std::clamp(ratio, lo, hi) * adv;
            acc.surrogate += std::min(s1, s2);
            acc.value += (R - s.value) * (R - s.value);
            acc.entropy += s.entropy;
            acc.kl += traj.logp_old[t] - s.logp;
            acc.clipped += ratio < lo || ratio > hi;
            acc.count += 1;

            if (!grad) continue;

            // d(-mean surr)/dlogp, with the inactive min/clip branch zeroed
            double surr_factor;
            if (s1 <= s2)
                surr_factor = 1.0;
            else
                surr_factor = (ratio > lo && ratio < hi) ? 1.0 : 0.0;
            double g_logp = -inv_n * ratio * adv * surr_factor;

            // head gradients: g_logits = g_logp (e_a - probs) + entropy term
            const double* W = p.w.data() + L.head_w[t];
            double* gW = grad->data() + L.head_w[t];
            double* gb = grad->data() + L.head_b[t];
            const int ar = p.arities[t];
            for (int j = 0; j < ar; ++j) {
                double ind = j == a ? 1.0 : 0.0;
                double g_logit = g_logp * (ind - s.probs[j]);
                if (s.probs[j] > 0.0)
                    g_logit += c_e * inv_n * s.probs[j] * (std::log(s.probs[j]) + s.entropy);
                if (g_logit == 0.0) continue;
                const double* wr = W + static_cast<long>(j) * L.H;
                double* gwr = gW + static_cast<long>(j) * L.H;
                for (int u = 0; u < L.H; ++u) {
                    gwr[u] += g_logit * s.h[u];
                    g_h[t][u] += g_logit * wr[u];
                }
                gb[j] += g_logit;
            }

            // critic head
            double g_v = c_v * inv_n * 2.0 * (s.value - R);
            const double* cw = p.w.data() + L.critic_w;
            double* gcw = grad->data() + L.critic_w;
            const double* hv = L.cwx >= 0 ? s.ch.data() : s.h.data();
            auto& g_hv = L.cwx >= 0 ? g_ch[t] : g_h[t];
            for (int u = 0; u < L.H; ++u) {
                gcw[u] += g_v * hv[u];
                g_hv[u] += g_v * cw[u];
            }
            (*grad)[L.critic_b] += g_v;
        }

        if (grad) {
            trunk_backward(L, p.w.data(), L.wx, L.wh, L.b, false, steps, g_h, *grad);
            if (L.cwx >= 0)
                trunk_backward(L, p.w.data(), L.cwx, L.cwh, L.cb, true, steps, g_ch, *grad);
        }
    }

    double n = static_cast<double>(acc.count);
    double loss = -acc.surrogate / n + c_v * acc.value / n - c_e * acc.entropy / n;
    if (diag) {
        diag->loss = loss;
        diag->surrogate = acc.surrogate / n;
        diag->value_loss = acc.value / n;
        diag->entropy = acc.entropy / n;
        diag->clip_fraction = static_cast<double>(acc.clipped) / n;
        diag->approx_kl = acc.kl / n;
    }
    return loss;
}

}  // namespace

double ppo_loss(const PolicyParams& p, std::span<const Trajectory> batch, double clip_eps,
                PpoDiag* diag) {
    return ppo_eval(p, batch, clip_eps, diag, nullptr);
}

std::vector<double> ppo_loss_gradient(const PolicyParams& p, std::span<const Trajectory> batch,
                                      double clip_eps, PpoDiag* diag) {
    std::vector<double> grad;
    ppo_eval(p, batch, clip_eps, diag, &grad);
    return grad;
}

GradientPacket ppo_gradient(const PolicyParams& p, std::span<const Trajectory> batch,
                            double clip_eps, int epochs, GradientMode mode, double local_lr) {
    GradientPacket packet;
    packet.batch_size = static_cast<int>(batch.size());
    if (mode == GradientMode::first_epoch || epochs <= 1) {
        packet.g = ppo_loss_gradient(p, batch, clip_eps);
        return packet;
    }
    // local SGD refinement; the packet is the summed gradient along the path,
    // i.e. -(theta_final - theta_0) / lr
    PolicyParams work = p;
    packet.g.assign(p.w.size(), 0.0);
    for (int e = 0; e < epochs; ++e) {
        auto g = ppo_loss_gradient(work, batch, clip_eps);
        for (size_t i = 0; i < g.size(); ++i) {
            packet.g[i] += g[i];
            work.w[i] -= local_lr * g[i];
        }
    }
    return packet;
}

void save_checkpoint(const PolicyParams& p, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot write checkpoint: " + path);
    auto put_u32 = [&](uint32_t v) { std::fwrite(&v, 4, 1, f); };
    auto put_u64 = [&](uint64_t v) { std::fwrite(&v, 8, 1, f); };
    std::fwrite("NASPOLC1", 1, 8, f);
    put_u32(1);  // schema
    put_u32(static_cast<uint32_t>(p.cfg.hidden));
    put_u32(static_cast<uint32_t>(p.cfg.embed));
    put_u32(p.cfg.separate_critic_trunk ? 1 : 0);
    put_u32(static_cast<uint32_t>(p.arities.size()));
    for (int a : p.arities) put_u32(static_cast<uint32_t>(a));
    put_u32(static_cast<uint32_t>(p.map.entries.size()));
    for (const auto& e : p.map.entries) {
        put_u32(static_cast<uint32_t>(e.name.size()));
        std::fwrite(e.name.data(), 1, e.name.size(), f);
        put_u64(static_cast<uint64_t>(e.offset));
        put_u64(static_cast<uint64_t>(e.count));
    }
    put_u64(p.w.size());
    std::fwrite(p.w.data(), 8, p.w.size(), f);  // little-endian doubles
    std::fclose(f);
}

PolicyParams load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw Error("cannot read checkpoint: " + path);
    char magic[8];
    auto fail = [&](const std::string& why) {
        std::fclose(f);
        throw Error("bad checkpoint " + path + ": " + why);
    };
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, "NASPOLC1", 8) != 0)
        fail("magic mismatch");
    auto get_u32 = [&] {
        uint32_t v = 0;
        if (std::fread(&v, 4, 1, f) != 1) fail("truncated");
        return v;
    };
    if (get_u32() != 1) fail("unsupported schema");
    auto get_u64 = [&] {
        uint64_t v = 0;
        if (std::fread(&v, 8, 1, f) != 1) fail("truncated");
        return v;
    };
    ControllerConfig cfg;
    cfg.hidden = static_cast<int>(get_u32());
    cfg.embed = static_cast<int>(get_u32());
    cfg.separate_critic_trunk = get_u32() != 0;
    uint32_t slots = get_u32();
    std::vector<int> arities(slots);
    for (auto& a : arities) a = static_cast<int>(get_u32());

    PolicyParams p;
    p.arities = std::move(arities);
    p.cfg = cfg;
    p.map = make_partition(p.arities, cfg);

    // the stored partition map must agree with the rebuilt one
    uint32_t entries = get_u32();
    if (entries != p.map.entries.size()) fail("partition map mismatch");
    for (const auto& e : p.map.entries) {
        uint32_t len = get_u32();
        std::string name(len, '\0');
        if (std::fread(name.data(), 1, len, f) != len) fail("truncated");
        if (name != e.name || static_cast<long>(get_u64()) != e.offset ||
            static_cast<long>(get_u64()) != e.count)
            fail("partition map mismatch at " + name);
    }

    uint64_t n = get_u64();
    if (static_cast<long>(n) != p.map.total) fail("parameter count mismatch");
    p.w.resize(n);
    if (std::fread(p.w.data(), 8, n, f) != n) fail("truncated parameters");
    std::fclose(f);
    return p;
}

}  // namespace nas::controller
