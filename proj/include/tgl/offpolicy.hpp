#pragma once

#include <memory>
#include <span>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/metrics.hpp"
#include "tgl/opd.hpp"
#include "tgl/policy.hpp"

namespace tgl {

// A fixed training-corpus trajectory: the canonical encoding of the instance's
// ground-truth interval. Independent of the student's parameters by design.
struct CorpusTrajectory {
    const GroundingInstance* instance = nullptr;
    std::vector<Token> tokens;
};

CorpusTrajectory encode_gt(const GroundingInstance& instance);

// Reverse-KL distillation on a corpus trajectory: same token-level update as
// the on-policy trainer, differing only in where the trajectory comes from.
OpdGradStats oprkd_gradient(const PolicyParams& params, const PolicyParams& old_params,
                            const CorpusTrajectory& corpus, const Policy& teacher,
                            std::span<double> out);

// Per-token forward KL  l_t = KL(P_tea(.|s_t) || P_stu(.|s_t))  along the corpus
// trajectory; each term is >= 0 and 0 iff the distributions match.
std::vector<double> opfkd_loss(const PolicyParams& params, const CorpusTrajectory& corpus,
                               const Policy& teacher);

// Ascent gradient of -sum_t l_t (so all trainers share the sign convention):
// per state, dlogits = P_tea - P_stu.
double opfkd_gradient(const PolicyParams& params, const CorpusTrajectory& corpus,
                      const Policy& teacher, std::span<double> out);

enum class OffPolicyVariant { oprkd, opfkd };

struct OffPolicyConfig {
    OffPolicyVariant variant = OffPolicyVariant::opfkd;
    double learning_rate = 0.05;
};

class OffPolicyTrainer {
public:
    OffPolicyTrainer(PolicyParams initial, std::shared_ptr<const Policy> teacher,
                     OffPolicyConfig cfg);

    MetricsRecord step(std::span<const GroundingInstance* const> slice, int threads = 1);

    const PolicyParams& params() const { return params_; }
    PolicyParams& mutable_params() { return params_; }
    long long steps_done() const { return step_count_; }
    void set_steps_done(long long s) { step_count_ = s; }
    const OffPolicyConfig& config() const { return cfg_; }

private:
    PolicyParams params_;
    PolicyParams old_;  // refreshed every step; the OP-RKD ratio is vestigial at lag 0
    std::shared_ptr<const Policy> teacher_;
    OffPolicyConfig cfg_;
    long long step_count_ = 0;
};

}  // namespace tgl
