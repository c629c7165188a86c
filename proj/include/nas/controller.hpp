#pragma once

#include <span>
#include <string>
#include <vector>

#include "nas/optim.hpp"
#include "nas/rng.hpp"
#include "nas/space.hpp"

namespace nas::controller {

struct ControllerConfig {
    int hidden = 32;
    int embed = 16;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    // when set, the critic runs its own LSTM over the same token embeddings
    // instead of reading the policy trunk's hidden state
    bool separate_critic_trunk = false;
};

struct PartitionMap {
    struct Entry {
        std::string name;
        long offset = 0;
        long count = 0;
    };
    std::vector<Entry> entries;
    long total = 0;
    const Entry& at(const std::string& name) const;
};

// Flat parameter vector for the autoregressive controller: token embeddings,
// a single-layer LSTM trunk, one categorical projection per decision slot,
// and a scalar critic head.
struct PolicyParams {
    std::vector<int> arities;
    ControllerConfig cfg;
    PartitionMap map;
    std::vector<double> w;

    long size() const { return static_cast<long>(w.size()); }
};

PolicyParams init_policy(const std::vector<int>& arities, uint64_t seed, ControllerConfig cfg = {});
PolicyParams init_policy(const space::SearchSpace& space, uint64_t seed, ControllerConfig cfg = {});

struct Trajectory {
    space::Encoding encoding;
    std::vector<double> logp_old;   // per slot, under the sampling policy
    std::vector<double> values_old; // per slot, critic at sampling time
    double reward = 0.0;
    bool has_reward = false;
};

// Autoregressive sampling: per slot a categorical over the slot's choices,
// conditioned on the previously sampled actions. Throws on non-finite logits.
std::vector<Trajectory> sample_batch(const PolicyParams& policy, int batch, Rng& rng);

// Teacher-forced replay of an action sequence: per-slot categorical
// distributions, chosen-action log-probabilities, and critic values.
struct PolicyEval {
    std::vector<std::vector<double>> probs;
    std::vector<double> logp;
    std::vector<double> values;
};
PolicyEval evaluate_policy(const PolicyParams& policy, const space::Encoding& actions);

struct PpoDiag {
    double loss = 0.0;
    double surrogate = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
};

// Clipped-surrogate objective with a critic baseline and an entropy bonus:
//   -mean min(r A, clip(r, 1-eps, 1+eps) A) + c_v mean (R - V)^2 - c_e mean H
// where A = R - V_old with V_old taken from the trajectory.
double ppo_loss(const PolicyParams& policy, std::span<const Trajectory> batch, double clip_eps,
                PpoDiag* diag = nullptr);

std::vector<double> ppo_loss_gradient(const PolicyParams& policy,
                                      std::span<const Trajectory> batch, double clip_eps,
                                      PpoDiag* diag = nullptr);

struct GradientPacket {
    int agent_id = -1;
    long policy_version = 0;
    int batch_size = 0;
    std::vector<double> g;
};

enum class GradientMode {
    first_epoch,       // exact gradient of the loss at the incoming parameters
    cumulative_delta,  // sum of per-epoch gradients along a local SGD refinement
};

GradientPacket ppo_gradient(const PolicyParams& policy, std::span<const Trajectory> batch,
                            double clip_eps, int epochs = 4,
                            GradientMode mode = GradientMode::first_epoch,
                            double local_lr = 0.001);

using nas::AdamState;
using nas::adam_update;

// Versioned little-endian binary checkpoints.
void save_checkpoint(const PolicyParams& policy, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace nas::controller
