#include "tgl/grpo.hpp"

#include <chrono>
#include <cmath>

#include "tgl/error.hpp"
#include "tgl/parallel.hpp"

namespace tgl {

double trajectory_reward(const Trajectory& traj, const TemporalInterval& gt, int video_length,
                         RewardKind kind) {
    if (!traj.decoded) return 0.0;
    return kind == RewardKind::iou ? iou(*traj.decoded, gt)
                                   : timestamp_aware_iou(*traj.decoded, gt, video_length);
}

GroupBatch rollout_group(const PolicyParams& old_params, const GroundingInstance& instance,
                         int group_size, uint64_t seed, uint64_t step, uint64_t instance_tag,
                         int max_len) {
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    GroupBatch batch;
    batch.instance = &instance;
    batch.trajectories.resize(group_size);
    for (int g = 0; g < group_size; ++g) {
        Rng rng = derive_rng(seed, Stream::rollout, step, instance_tag, g);
        batch.trajectories[g] = sample_trajectory(old_params, instance, rng, max_len);
    }
    return batch;
}

void score_group(GroupBatch& batch, const TemporalInterval& gt, int video_length,
                 RewardKind kind) {
    batch.raw_rewards.resize(batch.trajectories.size());
    for (size_t i = 0; i < batch.trajectories.size(); ++i) {
        batch.raw_rewards[i] = trajectory_reward(batch.trajectories[i], gt, video_length, kind);
    }
}

std::vector<double> group_normalize(std::span<const double> raw_rewards, double epsilon) {
    if (raw_rewards.size() < 2) throw ConfigError("group normalization needs >= 2 rewards");
    // A degenerate group carries no preference at all; make the zero advantage
    // exact instead of leaving mean-subtraction residue scaled by 1/epsilon.
    bool all_equal = true;
    for (double r : raw_rewards) all_equal = all_equal && r == raw_rewards[0];
    if (all_equal) return std::vector<double>(raw_rewards.size(), 0.0);
    const double n = static_cast<double>(raw_rewards.size());
    double mean = 0.0;
    for (double r : raw_rewards) mean += r;
    mean /= n;
    double var = 0.0;
    for (double r : raw_rewards) var += (r - mean) * (r - mean);
    const double std_dev = std::sqrt(var / n);
    std::vector<double> out(raw_rewards.size());
    for (size_t i = 0; i < raw_rewards.size(); ++i) {
        out[i] = (raw_rewards[i] - mean) / (std_dev + epsilon);
    }
    return out;
}

void grpo_gradient(const PolicyParams& params, const PolicyParams& old_params,
                   const PolicyParams& ref_params, const GroupBatch& batch, double beta,
                   std::span<double> out) {
    if (params.shape != old_params.shape || params.shape != ref_params.shape) {
        throw ConfigError("grpo_gradient: parameter shape mismatch");
    }
    const GroundingInstance& inst = *batch.instance;
    const double group_size = static_cast<double>(batch.trajectories.size());

    size_t n_states = 0;
    for (const auto& traj : batch.trajectories) n_states += traj.tokens.size();

    for (size_t i = 0; i < batch.trajectories.size(); ++i) {
        const auto& tokens = batch.trajectories[i].tokens;

        std::vector<StateEval> evs;
        evs.reserve(tokens.size());
        double sum_new = 0.0;
        for (size_t t = 0; t < tokens.size(); ++t) {
            PolicyState state{&inst, std::span<const Token>(tokens).subspan(0, t)};
            evs.push_back(eval_state(params, state));
            sum_new += evs.back().logps[tokens[t]];
        }
        const auto old_logps = evaluate_trajectory(old_params, inst, tokens);
        double sum_old = 0.0;
        for (double lp : old_logps) sum_old += lp;
        const double ratio = std::exp(sum_new - sum_old);

        const double advantage_scale = ratio * batch.normalized_rewards[i] / group_size;
        std::vector<double> dlogits(params.shape.vocab);
        for (size_t t = 0; t < tokens.size(); ++t) {
            PolicyState state{&inst, std::span<const Token>(tokens).subspan(0, t)};
            if (advantage_scale != 0.0) {
                for (int tok = 0; tok < params.shape.vocab; ++tok) {
                    dlogits[tok] = (tok == tokens[t] ? 1.0 : 0.0) - evs[t].probs[tok];
                }
                accumulate_logit_grad(params, state, evs[t], dlogits, advantage_scale, out);
            }
            if (beta != 0.0 && n_states > 0) {
                const auto ref_probs = token_distribution(ref_params, state);
                accumulate_reverse_kl_grad(params, state, ref_probs, out,
                                           -beta / static_cast<double>(n_states));
            }
        }
    }
}

GrpoTrainer::GrpoTrainer(PolicyParams initial, GrpoConfig cfg, uint64_t seed)
    : params_(initial), old_(initial), ref_(std::move(initial)), cfg_(cfg), seed_(seed) {}

MetricsRecord GrpoTrainer::step(std::span<const GroundingInstance* const> slice, int threads) {
    if (slice.empty()) throw ConfigError("grpo_step: empty pool slice");
    const auto t0 = std::chrono::steady_clock::now();
    const uint64_t step_id = static_cast<uint64_t>(step_count_) + 1;

    const size_t n = slice.size();
    std::vector<GradientAccumulator> grads(n);
    std::vector<double> reward_sums(n, 0.0);
    std::vector<long long> token_counts(n, 0);

    parallel_for(n, threads, [&](size_t j) {
        const GroundingInstance& inst = *slice[j];
        GroupBatch batch = rollout_group(old_, inst, cfg_.group_size, seed_, step_id,
                                         hash_str(inst.id), cfg_.max_len);
        score_group(batch, inst.gt, inst.video_length, cfg_.reward);
        batch.normalized_rewards = group_normalize(batch.raw_rewards, cfg_.norm_epsilon);
        grads[j].assign(params_.shape.param_count(), 0.0);
        grpo_gradient(params_, old_, ref_, batch, cfg_.beta, grads[j]);
        for (double r : batch.raw_rewards) reward_sums[j] += r;
        for (const auto& traj : batch.trajectories) {
            token_counts[j] += static_cast<long long>(traj.tokens.size());
        }
    });

    // Ordered reduction: slot 0, 1, ... regardless of worker count.
    GradientAccumulator mean_grad(params_.shape.param_count(), 0.0);
    double reward_sum = 0.0;
    long long tokens = 0;
    for (size_t j = 0; j < n; ++j) {
        axpy(1.0 / static_cast<double>(n), grads[j], mean_grad);
        reward_sum += reward_sums[j];
        tokens += token_counts[j];
    }

    axpy(cfg_.learning_rate, mean_grad, params_.data);
    old_ = params_;
    ++step_count_;
    tokens_cum_ += tokens;

    MetricsRecord rec;
    rec.step = step_count_;
    rec.algo = "grpo";
    rec.values["mean_reward"] =
        reward_sum / (static_cast<double>(n) * static_cast<double>(cfg_.group_size));
    rec.values["grad_norm"] = norm2(mean_grad);
    rec.tokens_generated = tokens;
    rec.tokens_cum = tokens_cum_;
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace tgl
