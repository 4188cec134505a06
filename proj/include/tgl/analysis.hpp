#pragma once

#include <map>
#include <string>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/grpo.hpp"
#include "tgl/policy.hpp"

namespace tgl {

enum class EstimatorKind { grpo, opd };

// n x dim matrix of single-trajectory gradient estimates, row-major.
struct GradientSamples {
    size_t dim = 0;
    std::vector<double> flat;
    size_t count() const { return dim ? flat.size() / dim : 0; }
    const double* row(size_t i) const { return flat.data() + i * dim; }
};

struct VarianceDecomposition {
    double sum_var_terms = 0.0;
    double sum_cov_terms = 0.0;
    double total = 0.0;  // measured independently from the per-step pieces
};

struct VarianceReport {
    EstimatorKind estimator;
    int n_samples = 0;
    double trace_cov = 0.0;              // full parameter vector
    std::vector<double> per_coord_var;   // full parameter vector
    VarianceDecomposition decomposition; // output-weight slice
};

struct VarianceContext {
    const Policy* teacher = nullptr;  // required for the dense-reward estimator
    RewardKind reward = RewardKind::timestamp_aware_iou;
    int group_size = 8;  // group used to normalize rewards for the sparse estimator
    int max_len = 8;
};

// Draws n_samples single-trajectory gradient estimates at frozen params and
// reports per-coordinate variance, its trace, and the decomposition of
// Var(sum_t A_t g_t) into per-step variances plus cross-time covariances on
// the output-weight slice. A_t is the group-normalized scalar reward for the
// sparse estimator (constant in t) and the dense per-token reward otherwise.
// Importance ratios are 1 by construction (estimates taken at the sampler).
// If keep != nullptr the raw estimates are stored there for bootstrapping.
VarianceReport measure_variance(EstimatorKind kind, const PolicyParams& params,
                                const VarianceContext& ctx, const GroundingInstance& instance,
                                int n_samples, uint64_t seed, int threads = 1,
                                GradientSamples* keep = nullptr);

double trace_of(const GradientSamples& samples);

struct DominanceResult {
    double trace_a = 0.0;
    double trace_b = 0.0;
    double diff_ci_lo = 0.0;  // 2.5th percentile of trace_b* - trace_a*
    double diff_ci_hi = 0.0;  // 97.5th percentile
    bool a_below_b = false;   // trace(a) < trace(b) at 95% bootstrap confidence
};

DominanceResult bootstrap_trace_dominance(const GradientSamples& a, const GradientSamples& b,
                                          int n_boot, uint64_t seed, int threads = 1);

struct KlIdentityReport {
    std::vector<double> mc_update_mean;  // Monte-Carlo mean of r * grad log pi
    std::vector<double> analytic;        // -grad KL(pi || teacher), the exact expectation
    std::vector<double> z;               // per-coordinate z-scores
    double max_abs_z = 0.0;
    double kl = 0.0;
};

// The ascent update E_{a~pi}[r(a) grad log pi(a|s)] equals the descent
// direction of the reverse KL at that state; the analytic side is computed by
// the logit chain rule, the MC side by sampling tokens.
KlIdentityReport kl_identity_check(const PolicyParams& params, const Policy& teacher,
                                   const PolicyState& state, int n_samples, uint64_t seed);

struct EvalPoint {
    long long step = 0;
    long long tokens_cum = 0;
    double wallclock_cum_ms = 0.0;
    double mean_iou = 0.0;
};

struct BudgetRow {
    std::string algo;
    bool reached = false;
    long long tokens_to_target = 0;
    double wallclock_to_target_ms = 0.0;
};

// First cumulative token/wallclock budget at which each stream's held-out
// mean IoU reaches the target.
std::vector<BudgetRow> budget_compare(
    const std::map<std::string, std::vector<EvalPoint>>& streams, double target_miou);

}  // namespace tgl
