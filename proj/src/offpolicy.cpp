#include "tgl/offpolicy.hpp"

#include <chrono>
#include <cmath>

#include "tgl/error.hpp"
#include "tgl/parallel.hpp"

namespace tgl {

CorpusTrajectory encode_gt(const GroundingInstance& instance) {
    return CorpusTrajectory{&instance, encode_interval(instance.gt)};
}

OpdGradStats oprkd_gradient(const PolicyParams& params, const PolicyParams& old_params,
                            const CorpusTrajectory& corpus, const Policy& teacher,
                            std::span<double> out) {
    DenseRewardTrajectory dtraj;
    dtraj.instance = corpus.instance;
    dtraj.traj.tokens = corpus.tokens;
    dtraj.traj.logp_sampler = evaluate_trajectory(old_params, *corpus.instance, corpus.tokens);
    dtraj.teacher_logp = teacher.evaluate_trajectory(*corpus.instance, corpus.tokens);
    dtraj.dense_r = dense_rewards(dtraj.traj.logp_sampler, dtraj.teacher_logp);
    return opd_gradient(params, old_params, dtraj, out);
}

std::vector<double> opfkd_loss(const PolicyParams& params, const CorpusTrajectory& corpus,
                               const Policy& teacher) {
    std::vector<double> losses;
    losses.reserve(corpus.tokens.size());
    const auto tokens = std::span<const Token>(corpus.tokens);
    for (size_t t = 0; t < tokens.size(); ++t) {
        PolicyState state{corpus.instance, tokens.subspan(0, t)};
        const StateEval ev = eval_state(params, state);
        const auto q = teacher.distribution(state);
        double l = 0.0;
        for (int w = 0; w < params.shape.vocab; ++w) {
            if (q[w] <= 0.0) continue;
            l += q[w] * (std::log(q[w]) - ev.logps[w]);
        }
        losses.push_back(l);
    }
    return losses;
}

double opfkd_gradient(const PolicyParams& params, const CorpusTrajectory& corpus,
                      const Policy& teacher, std::span<double> out) {
    double total_loss = 0.0;
    const auto tokens = std::span<const Token>(corpus.tokens);
    std::vector<double> dlogits(params.shape.vocab);
    for (size_t t = 0; t < tokens.size(); ++t) {
        PolicyState state{corpus.instance, tokens.subspan(0, t)};
        const StateEval ev = eval_state(params, state);
        const auto q = teacher.distribution(state);
        for (int w = 0; w < params.shape.vocab; ++w) {
            dlogits[w] = q[w] - ev.probs[w];
            if (q[w] > 0.0) total_loss += q[w] * (std::log(q[w]) - ev.logps[w]);
        }
        accumulate_logit_grad(params, state, ev, dlogits, 1.0, out);
    }
    return total_loss;
}

OffPolicyTrainer::OffPolicyTrainer(PolicyParams initial, std::shared_ptr<const Policy> teacher,
                                   OffPolicyConfig cfg)
    : params_(initial), old_(std::move(initial)), teacher_(std::move(teacher)), cfg_(cfg) {}

MetricsRecord OffPolicyTrainer::step(std::span<const GroundingInstance* const> slice,
                                     int threads) {
    if (slice.empty()) throw ConfigError("offpolicy_step: empty pool slice");
    const auto t0 = std::chrono::steady_clock::now();

    const size_t n = slice.size();
    std::vector<GradientAccumulator> grads(n);
    std::vector<double> loss_sums(n, 0.0);
    std::vector<size_t> loss_counts(n, 0);

    parallel_for(n, threads, [&](size_t j) {
        const GroundingInstance& inst = *slice[j];
        const CorpusTrajectory corpus = encode_gt(inst);
        grads[j].assign(params_.shape.param_count(), 0.0);
        if (cfg_.variant == OffPolicyVariant::oprkd) {
            const OpdGradStats stats = oprkd_gradient(params_, old_, corpus, *teacher_, grads[j]);
            loss_sums[j] = -stats.reward_sum;  // pointwise reverse-KL signal
            loss_counts[j] = stats.n_tokens;
        } else {
            loss_sums[j] = opfkd_gradient(params_, corpus, *teacher_, grads[j]);
            loss_counts[j] = corpus.tokens.size();
        }
    });

    GradientAccumulator mean_grad(params_.shape.param_count(), 0.0);
    double loss_sum = 0.0;
    size_t loss_count = 0;
    for (size_t j = 0; j < n; ++j) {
        axpy(1.0 / static_cast<double>(n), grads[j], mean_grad);
        loss_sum += loss_sums[j];
        loss_count += loss_counts[j];
    }

    axpy(cfg_.learning_rate, mean_grad, params_.data);
    old_ = params_;
    ++step_count_;

    MetricsRecord rec;
    rec.step = step_count_;
    rec.algo = cfg_.variant == OffPolicyVariant::oprkd ? "oprkd" : "opfkd";
    rec.values["mean_loss"] = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
    rec.tokens_generated = 0;  // teacher-forced passes only, nothing is sampled
    rec.tokens_cum = 0;
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace tgl
