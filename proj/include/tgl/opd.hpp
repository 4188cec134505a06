#pragma once

#include <memory>
#include <span>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/metrics.hpp"
#include "tgl/policy.hpp"

namespace tgl {

// Per-token dense reward r_t = -(log pi_student(a_t|s_t) - log pi_teacher(a_t|s_t)).
// Positive when the teacher likes the token more than the student does.
std::vector<double> dense_rewards(std::span<const double> student_logp,
                                  std::span<const double> teacher_logp);

struct DenseRewardTrajectory {
    const GroundingInstance* instance = nullptr;
    Trajectory traj;
    std::vector<double> teacher_logp;
    std::vector<double> dense_r;  // rewards at sampling time
};

DenseRewardTrajectory make_dense_trajectory(const GroundingInstance& instance, Trajectory traj,
                                            const Policy& teacher);

// Full-vocabulary reverse KL at one state: sum_a p_stu(a) (log p_stu(a) - log p_tea(a)).
double reverse_kl_at_state(std::span<const double> student_dist,
                           std::span<const double> teacher_dist);

struct OpdGradStats {
    double reward_sum = 0.0;
    size_t n_tokens = 0;
};

// Ascent gradient sum_t r_t * (pi_theta(a_t|s_t)/pi_old(a_t|s_t)) * grad log pi_theta(a_t|s_t).
// r_t is recomputed under the current params (and treated as a constant in the
// gradient); set reward_from_snapshot to reuse the sampling-time rewards instead.
OpdGradStats opd_gradient(const PolicyParams& params, const PolicyParams& old_params,
                          const DenseRewardTrajectory& traj, std::span<double> out,
                          bool reward_from_snapshot = false);

struct OpdConfig {
    double learning_rate = 0.05;
    int max_len = 8;
    int rollouts_per_instance = 1;  // the framework's defining economy; fixed
    int old_refresh_lag = 1;        // steps between pi_old refreshes
    bool reward_from_snapshot = false;
};

class OpdTrainer {
public:
    OpdTrainer(PolicyParams initial, std::shared_ptr<const Policy> teacher, OpdConfig cfg,
               uint64_t seed);

    MetricsRecord step(std::span<const GroundingInstance* const> slice, int threads = 1);

    const PolicyParams& params() const { return params_; }
    PolicyParams& mutable_params() { return params_; }
    long long steps_done() const { return step_count_; }
    void set_steps_done(long long s) { step_count_ = s; }
    long long tokens_cum() const { return tokens_cum_; }
    void set_tokens_cum(long long t) { tokens_cum_ = t; }
    void reset_old() { old_ = params_; }
    const OpdConfig& config() const { return cfg_; }

private:
    PolicyParams params_;
    PolicyParams old_;
    std::shared_ptr<const Policy> teacher_;
    OpdConfig cfg_;
    uint64_t seed_;
    long long step_count_ = 0;
    long long tokens_cum_ = 0;
};

}  // namespace tgl
