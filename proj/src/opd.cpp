#include "tgl/opd.hpp"

#include <chrono>
#include <cmath>

#include "tgl/error.hpp"
#include "tgl/parallel.hpp"

namespace tgl {

std::vector<double> dense_rewards(std::span<const double> student_logp,
                                  std::span<const double> teacher_logp) {
    if (student_logp.size() != teacher_logp.size()) {
        throw ConfigError("dense_rewards: length mismatch");
    }
    std::vector<double> r(student_logp.size());
    for (size_t t = 0; t < r.size(); ++t) r[t] = -(student_logp[t] - teacher_logp[t]);
    return r;
}

DenseRewardTrajectory make_dense_trajectory(const GroundingInstance& instance, Trajectory traj,
                                            const Policy& teacher) {
    DenseRewardTrajectory out;
    out.instance = &instance;
    out.teacher_logp = teacher.evaluate_trajectory(instance, traj.tokens);
    out.dense_r = dense_rewards(traj.logp_sampler, out.teacher_logp);
    out.traj = std::move(traj);
    return out;
}

double reverse_kl_at_state(std::span<const double> student_dist,
                           std::span<const double> teacher_dist) {
    if (student_dist.size() != teacher_dist.size()) {
        throw ConfigError("reverse_kl_at_state: length mismatch");
    }
    double kl = 0.0;
    for (size_t a = 0; a < student_dist.size(); ++a) {
        if (student_dist[a] <= 0.0) continue;
        if (teacher_dist[a] <= 0.0) {
            throw CheckError("reverse KL undefined: teacher mass zero where student positive");
        }
        kl += student_dist[a] * (std::log(student_dist[a]) - std::log(teacher_dist[a]));
    }
    return kl;
}

OpdGradStats opd_gradient(const PolicyParams& params, const PolicyParams& old_params,
                          const DenseRewardTrajectory& traj, std::span<double> out,
                          bool reward_from_snapshot) {
    if (params.shape != old_params.shape) throw ConfigError("opd_gradient: shape mismatch");
    const auto& tokens = traj.traj.tokens;
    const GroundingInstance& inst = *traj.instance;
    const auto old_logps = evaluate_trajectory(old_params, inst, tokens);

    OpdGradStats stats;
    std::vector<double> dlogits(params.shape.vocab);
    for (size_t t = 0; t < tokens.size(); ++t) {
        PolicyState state{&inst, std::span<const Token>(tokens).subspan(0, t)};
        const StateEval ev = eval_state(params, state);
        const double ratio = std::exp(ev.logps[tokens[t]] - old_logps[t]);
        const double r = reward_from_snapshot
                             ? traj.dense_r[t]
                             : -(ev.logps[tokens[t]] - traj.teacher_logp[t]);
        stats.reward_sum += r;
        ++stats.n_tokens;
        const double scale = r * ratio;
        if (scale == 0.0) continue;
        for (int tok = 0; tok < params.shape.vocab; ++tok) {
            dlogits[tok] = (tok == tokens[t] ? 1.0 : 0.0) - ev.probs[tok];
        }
        accumulate_logit_grad(params, state, ev, dlogits, scale, out);
    }
    return stats;
}

OpdTrainer::OpdTrainer(PolicyParams initial, std::shared_ptr<const Policy> teacher,
                       OpdConfig cfg, uint64_t seed)
    : params_(initial), old_(std::move(initial)), teacher_(std::move(teacher)), cfg_(cfg),
      seed_(seed) {
    if (cfg_.rollouts_per_instance != 1) {
        throw ConfigError("opd uses exactly one rollout per instance");
    }
}

MetricsRecord OpdTrainer::step(std::span<const GroundingInstance* const> slice, int threads) {
    if (slice.empty()) throw ConfigError("opd_step: empty pool slice");
    const auto t0 = std::chrono::steady_clock::now();
    const uint64_t step_id = static_cast<uint64_t>(step_count_) + 1;

    const size_t n = slice.size();
    std::vector<GradientAccumulator> grads(n);
    std::vector<OpdGradStats> stats(n);
    std::vector<long long> token_counts(n, 0);

    parallel_for(n, threads, [&](size_t j) {
        const GroundingInstance& inst = *slice[j];
        Rng rng = derive_rng(seed_, Stream::rollout, step_id, hash_str(inst.id), 0);
        Trajectory traj = sample_trajectory(old_, inst, rng, cfg_.max_len);
        token_counts[j] = static_cast<long long>(traj.tokens.size());
        DenseRewardTrajectory dtraj = make_dense_trajectory(inst, std::move(traj), *teacher_);
        grads[j].assign(params_.shape.param_count(), 0.0);
        stats[j] = opd_gradient(params_, old_, dtraj, grads[j], cfg_.reward_from_snapshot);
    });

    GradientAccumulator mean_grad(params_.shape.param_count(), 0.0);
    double reward_sum = 0.0;
    size_t n_tokens = 0;
    long long tokens = 0;
    for (size_t j = 0; j < n; ++j) {
        axpy(1.0 / static_cast<double>(n), grads[j], mean_grad);
        reward_sum += stats[j].reward_sum;
        n_tokens += stats[j].n_tokens;
        tokens += token_counts[j];
    }

    axpy(cfg_.learning_rate, mean_grad, params_.data);
    ++step_count_;
    if (cfg_.old_refresh_lag > 0 && step_count_ % cfg_.old_refresh_lag == 0) old_ = params_;
    tokens_cum_ += tokens;

    const double mean_r = n_tokens ? reward_sum / static_cast<double>(n_tokens) : 0.0;
    MetricsRecord rec;
    rec.step = step_count_;
    rec.algo = "opd";
    rec.values["mean_dense_reward"] = mean_r;
    rec.values["kl_proxy"] = -mean_r;
    rec.tokens_generated = tokens;
    rec.tokens_cum = tokens_cum_;
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace tgl
