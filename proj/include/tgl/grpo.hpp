#pragma once

#include <span>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/metrics.hpp"
#include "tgl/policy.hpp"

namespace tgl {

enum class RewardKind { iou, timestamp_aware_iou };

double trajectory_reward(const Trajectory& traj, const TemporalInterval& gt, int video_length,
                         RewardKind kind);

struct GrpoConfig {
    int group_size = 8;           // rollouts per training instance
    double beta = 0.01;           // KL-to-reference coefficient
    double learning_rate = 0.05;  // toy-scale default; 1e-6 is the large-model setting
    double norm_epsilon = 1e-8;
    RewardKind reward = RewardKind::timestamp_aware_iou;
    int max_len = 8;
};

struct GroupBatch {
    const GroundingInstance* instance = nullptr;
    std::vector<Trajectory> trajectories;
    std::vector<double> raw_rewards;
    std::vector<double> normalized_rewards;
};

// G independent rollouts from the frozen pre-update policy. Each rollout uses
// its own derived rng stream (stream id = group index), so the batch is
// identical no matter how workers interleave.
GroupBatch rollout_group(const PolicyParams& old_params, const GroundingInstance& instance,
                         int group_size, uint64_t seed, uint64_t step, uint64_t instance_tag,
                         int max_len);

void score_group(GroupBatch& batch, const TemporalInterval& gt, int video_length,
                 RewardKind kind);

// (r - mean) / (population std + epsilon). Output always has mean zero.
std::vector<double> group_normalize(std::span<const double> raw_rewards, double epsilon);

// Ascent gradient of the group surrogate
//   (1/G) sum_i w_i * r̂_i  -  beta * mean_{visited s} KL(pi_theta(.|s) || pi_ref(.|s))
// with trajectory-level importance ratio w_i = pi_theta(tau_i) / pi_old(tau_i).
// The scalar advantage r̂_i multiplies every step's score term, which is
// exactly the sparse credit assignment the dense-reward trainer removes.
void grpo_gradient(const PolicyParams& params, const PolicyParams& old_params,
                   const PolicyParams& ref_params, const GroupBatch& batch, double beta,
                   std::span<double> out);

class GrpoTrainer {
public:
    GrpoTrainer(PolicyParams initial, GrpoConfig cfg, uint64_t seed);

    // One SGD-ascent update averaged over the slice; refreshes pi_old after.
    MetricsRecord step(std::span<const GroundingInstance* const> slice, int threads = 1);

    const PolicyParams& params() const { return params_; }
    PolicyParams& mutable_params() { return params_; }
    const PolicyParams& ref_params() const { return ref_; }
    void reset_old() { old_ = params_; }
    long long steps_done() const { return step_count_; }
    void set_steps_done(long long s) { step_count_ = s; }
    long long tokens_cum() const { return tokens_cum_; }
    void set_tokens_cum(long long t) { tokens_cum_ = t; }
    const GrpoConfig& config() const { return cfg_; }

private:
    PolicyParams params_;
    PolicyParams old_;
    PolicyParams ref_;
    GrpoConfig cfg_;
    uint64_t seed_;
    long long step_count_ = 0;
    long long tokens_cum_ = 0;
};

}  // namespace tgl
