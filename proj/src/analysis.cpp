#include "tgl/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "tgl/error.hpp"
#include "tgl/opd.hpp"
#include "tgl/parallel.hpp"

namespace tgl {

namespace {

// Per-step contributions A_t * g_t of one single-trajectory estimate.
struct Estimate {
    std::vector<double> full;                    // sum over steps, all coordinates
    std::vector<std::vector<double>> step_slice; // per step, output-weight slice
};

Estimate single_estimate(EstimatorKind kind, const PolicyParams& params,
                         const VarianceContext& ctx, const GroundingInstance& inst,
                         const Trajectory& traj, double scalar_advantage) {
    const PolicyShape& sh = params.shape;
    const size_t slice_lo = sh.w_offset();
    const size_t slice_n = static_cast<size_t>(sh.vocab) * sh.d_state();

    Estimate est;
    est.full.assign(sh.param_count(), 0.0);
    est.step_slice.resize(traj.tokens.size());

    std::vector<double> step_grad(sh.param_count());
    for (size_t t = 0; t < traj.tokens.size(); ++t) {
        PolicyState state{&inst, std::span<const Token>(traj.tokens).subspan(0, t)};
        double a_t = scalar_advantage;
        if (kind == EstimatorKind::opd) {
            a_t = -(traj.logp_sampler[t] -
                    ctx.teacher->log_prob(state, traj.tokens[t]));
        }
        std::fill(step_grad.begin(), step_grad.end(), 0.0);
        grad_log_prob(params, state, traj.tokens[t], step_grad, a_t);
        for (size_t c = 0; c < step_grad.size(); ++c) est.full[c] += step_grad[c];
        est.step_slice[t].assign(step_grad.begin() + slice_lo,
                                 step_grad.begin() + slice_lo + slice_n);
    }
    return est;
}

}  // namespace

VarianceReport measure_variance(EstimatorKind kind, const PolicyParams& params,
                                const VarianceContext& ctx, const GroundingInstance& instance,
                                int n_samples, uint64_t seed, int threads,
                                GradientSamples* keep) {
    if (n_samples < 2) throw ConfigError("measure_variance: need n_samples >= 2");
    if (kind == EstimatorKind::opd && ctx.teacher == nullptr) {
        throw ConfigError("measure_variance: dense estimator needs a teacher");
    }

    const PolicyShape& sh = params.shape;
    const size_t dim = sh.param_count();
    const size_t slice_n = static_cast<size_t>(sh.vocab) * sh.d_state();
    const int t_max = ctx.max_len;
    const uint64_t kind_tag = kind == EstimatorKind::grpo ? 1 : 2;

    // Work in fixed-size chunks reduced in order, so stats never depend on the
    // thread count. For the sparse estimator a chunk is a whole group.
    const int group = kind == EstimatorKind::grpo ? ctx.group_size : 1;
    const int n_units = n_samples / group;
    const int n = n_units * group;

    struct ChunkAcc {
        std::vector<double> sum_full, sumsq_full;
        std::vector<double> m1;         // t_max x slice_n step means (sums)
        std::vector<double> pair_dot;   // t_max x t_max sums of <X_t, X_t'>
        std::vector<double> sum_y, sumsq_y;
    };
    constexpr int kChunkUnits = 16;
    const int n_chunks = (n_units + kChunkUnits - 1) / kChunkUnits;
    std::vector<ChunkAcc> acc(n_chunks);
    for (auto& a : acc) {
        a.sum_full.assign(dim, 0.0);
        a.sumsq_full.assign(dim, 0.0);
        a.m1.assign(static_cast<size_t>(t_max) * slice_n, 0.0);
        a.pair_dot.assign(static_cast<size_t>(t_max) * t_max, 0.0);
        a.sum_y.assign(slice_n, 0.0);
        a.sumsq_y.assign(slice_n, 0.0);
    }
    std::vector<std::vector<double>> kept;
    if (keep) kept.resize(n);

    parallel_for(n_chunks, threads, [&](size_t chunk) {
        ChunkAcc& a = acc[chunk];

        const int unit_lo = static_cast<int>(chunk) * kChunkUnits;
        const int unit_hi = std::min(unit_lo + kChunkUnits, n_units);
        for (int unit = unit_lo; unit < unit_hi; ++unit) {
            // One unit = one group (sparse) or one trajectory (dense).
            std::vector<Trajectory> trajs(group);
            for (int g = 0; g < group; ++g) {
                Rng rng = derive_rng(seed, Stream::analysis, kind_tag,
                                     static_cast<uint64_t>(unit), static_cast<uint64_t>(g));
                trajs[g] = sample_trajectory(params, instance, rng, ctx.max_len);
            }
            std::vector<double> advantages(group, 0.0);
            if (kind == EstimatorKind::grpo) {
                std::vector<double> raw(group);
                for (int g = 0; g < group; ++g) {
                    raw[g] = trajectory_reward(trajs[g], instance.gt, instance.video_length,
                                               ctx.reward);
                }
                advantages = group_normalize(raw, 1e-8);
            }

            for (int g = 0; g < group; ++g) {
                const Estimate est = single_estimate(kind, params, ctx, instance, trajs[g],
                                                     advantages[g]);
                if (keep) kept[static_cast<size_t>(unit) * group + g] = est.full;

                for (size_t c = 0; c < dim; ++c) {
                    a.sum_full[c] += est.full[c];
                    a.sumsq_full[c] += est.full[c] * est.full[c];
                }
                std::vector<double> y(slice_n, 0.0);
                const size_t steps = est.step_slice.size();
                for (size_t t = 0; t < steps; ++t) {
                    const auto& xt = est.step_slice[t];
                    double* m1t = a.m1.data() + t * slice_n;
                    for (size_t c = 0; c < slice_n; ++c) {
                        m1t[c] += xt[c];
                        y[c] += xt[c];
                    }
                    for (size_t t2 = 0; t2 <= t; ++t2) {
                        double d = 0.0;
                        const auto& xt2 = est.step_slice[t2];
                        for (size_t c = 0; c < slice_n; ++c) d += xt[c] * xt2[c];
                        a.pair_dot[t * t_max + t2] += d;
                    }
                }
                for (size_t c = 0; c < slice_n; ++c) {
                    a.sum_y[c] += y[c];
                    a.sumsq_y[c] += y[c] * y[c];
                }
            }
        }
    });

    // Ordered reduction over chunks.
    std::vector<double> sum_full(dim, 0.0), sumsq_full(dim, 0.0);
    std::vector<double> m1(static_cast<size_t>(t_max) * slice_n, 0.0);
    std::vector<double> pair_dot(static_cast<size_t>(t_max) * t_max, 0.0);
    std::vector<double> sum_y(slice_n, 0.0), sumsq_y(slice_n, 0.0);
    for (const auto& a : acc) {
        for (size_t c = 0; c < dim; ++c) {
            sum_full[c] += a.sum_full[c];
            sumsq_full[c] += a.sumsq_full[c];
        }
        for (size_t i = 0; i < m1.size(); ++i) m1[i] += a.m1[i];
        for (size_t i = 0; i < pair_dot.size(); ++i) pair_dot[i] += a.pair_dot[i];
        for (size_t c = 0; c < slice_n; ++c) {
            sum_y[c] += a.sum_y[c];
            sumsq_y[c] += a.sumsq_y[c];
        }
    }

    VarianceReport report;
    report.estimator = kind;
    report.n_samples = n;
    report.per_coord_var.resize(dim);
    const double dn = static_cast<double>(n);
    for (size_t c = 0; c < dim; ++c) {
        const double mean = sum_full[c] / dn;
        report.per_coord_var[c] = sumsq_full[c] / dn - mean * mean;
        report.trace_cov += report.per_coord_var[c];
    }

    // Decomposition on the output-weight slice. The per-step route:
    //   sum_t Var(X_t) + 2 sum_{t<t'} Cov(X_t, X_t')
    // must equal the directly measured Var(sum_t X_t); both use this sample set.
    double sum_var = 0.0, sum_cov = 0.0;
    for (int t = 0; t < t_max; ++t) {
        double mean_sq = 0.0;
        const double* m1t = m1.data() + static_cast<size_t>(t) * slice_n;
        for (size_t c = 0; c < slice_n; ++c) mean_sq += (m1t[c] / dn) * (m1t[c] / dn);
        sum_var += pair_dot[static_cast<size_t>(t) * t_max + t] / dn - mean_sq;
        for (int t2 = 0; t2 < t; ++t2) {
            double mean_dot = 0.0;
            const double* m1t2 = m1.data() + static_cast<size_t>(t2) * slice_n;
            for (size_t c = 0; c < slice_n; ++c) mean_dot += (m1t[c] / dn) * (m1t2[c] / dn);
            sum_cov += pair_dot[static_cast<size_t>(t) * t_max + t2] / dn - mean_dot;
        }
    }
    double total = 0.0;
    for (size_t c = 0; c < slice_n; ++c) {
        const double mean = sum_y[c] / dn;
        total += sumsq_y[c] / dn - mean * mean;
    }
    report.decomposition = {sum_var, sum_cov, total};

    if (keep) {
        keep->dim = dim;
        keep->flat.resize(static_cast<size_t>(n) * dim);
        for (int i = 0; i < n; ++i) {
            std::copy(kept[i].begin(), kept[i].end(), keep->flat.begin() + static_cast<size_t>(i) * dim);
        }
    }
    return report;
}

double trace_of(const GradientSamples& samples) {
    const size_t n = samples.count();
    if (n < 2) throw ConfigError("trace_of: need >= 2 samples");
    double trace = 0.0;
    for (size_t c = 0; c < samples.dim; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double v = samples.row(i)[c];
            sum += v;
            sumsq += v * v;
        }
        const double mean = sum / static_cast<double>(n);
        trace += sumsq / static_cast<double>(n) - mean * mean;
    }
    return trace;
}

static double resampled_trace(const GradientSamples& s, Rng& rng) {
    const size_t n = s.count();
    std::vector<double> sum(s.dim, 0.0), sumsq(s.dim, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* row = s.row(static_cast<size_t>(rng.next_int(static_cast<int>(n))));
        for (size_t c = 0; c < s.dim; ++c) {
            sum[c] += row[c];
            sumsq[c] += row[c] * row[c];
        }
    }
    double trace = 0.0;
    for (size_t c = 0; c < s.dim; ++c) {
        const double mean = sum[c] / static_cast<double>(n);
        trace += sumsq[c] / static_cast<double>(n) - mean * mean;
    }
    return trace;
}

DominanceResult bootstrap_trace_dominance(const GradientSamples& a, const GradientSamples& b,
                                          int n_boot, uint64_t seed, int threads) {
    DominanceResult res;
    res.trace_a = trace_of(a);
    res.trace_b = trace_of(b);
    std::vector<double> diffs(n_boot);
    parallel_for(static_cast<size_t>(n_boot), threads, [&](size_t i) {
        Rng rng_a = derive_rng(seed, Stream::analysis, 0xb007, i, 0);
        Rng rng_b = derive_rng(seed, Stream::analysis, 0xb007, i, 1);
        diffs[i] = resampled_trace(b, rng_b) - resampled_trace(a, rng_a);
    });
    std::sort(diffs.begin(), diffs.end());
    const auto pct = [&](double q) {
        const size_t idx = std::min(diffs.size() - 1,
                                    static_cast<size_t>(q * static_cast<double>(diffs.size())));
        return diffs[idx];
    };
    res.diff_ci_lo = pct(0.025);
    res.diff_ci_hi = pct(0.975);
    res.a_below_b = res.diff_ci_lo > 0.0;
    return res;
}

KlIdentityReport kl_identity_check(const PolicyParams& params, const Policy& teacher,
                                   const PolicyState& state, int n_samples, uint64_t seed) {
    if (n_samples < 1000) throw ConfigError("kl_identity_check: need n_samples >= 1000");
    const PolicyShape& sh = params.shape;
    const size_t dim = sh.param_count();

    const StateEval ev = eval_state(params, state);
    const auto teacher_probs = teacher.distribution(state);

    // The state is fixed, so each token's estimate vector can be precomputed.
    std::vector<std::vector<double>> token_est(sh.vocab);
    for (int tok = 0; tok < sh.vocab; ++tok) {
        const double r = -(ev.logps[tok] - std::log(teacher_probs[tok]));
        token_est[tok].assign(dim, 0.0);
        grad_log_prob(params, state, tok, token_est[tok], r);
    }

    KlIdentityReport report;
    report.analytic.assign(dim, 0.0);
    report.kl = accumulate_reverse_kl_grad(params, state, teacher_probs, report.analytic, -1.0);

    std::vector<double> sum(dim, 0.0), sumsq(dim, 0.0);
    Rng rng = derive_rng(seed, Stream::analysis, 0x1d, 0, 0);
    for (int i = 0; i < n_samples; ++i) {
        const Token tok = rng.next_weighted(ev.probs);
        const auto& est = token_est[tok];
        for (size_t c = 0; c < dim; ++c) {
            sum[c] += est[c];
            sumsq[c] += est[c] * est[c];
        }
    }

    report.mc_update_mean.resize(dim);
    report.z.resize(dim);
    const double dn = static_cast<double>(n_samples);
    for (size_t c = 0; c < dim; ++c) {
        const double mean = sum[c] / dn;
        report.mc_update_mean[c] = mean;
        const double var = std::max(0.0, (sumsq[c] - dn * mean * mean) / (dn - 1.0));
        const double se = std::sqrt(var / dn);
        const double diff = mean - report.analytic[c];
        report.z[c] = se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : 1e300);
        report.max_abs_z = std::max(report.max_abs_z, std::abs(report.z[c]));
    }
    return report;
}

std::vector<BudgetRow> budget_compare(
    const std::map<std::string, std::vector<EvalPoint>>& streams, double target_miou) {
    std::vector<BudgetRow> rows;
    for (const auto& [algo, points] : streams) {
        BudgetRow row;
        row.algo = algo;
        for (const auto& p : points) {
            if (p.mean_iou >= target_miou) {
                row.reached = true;
                row.tokens_to_target = p.tokens_cum;
                row.wallclock_to_target_ms = p.wallclock_cum_ms;
                break;
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace tgl
