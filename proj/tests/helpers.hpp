#pragma once

#include <cmath>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/policy.hpp"

namespace tgl::test {

inline GroundingInstance make_instance(uint64_t seed = 0, EnvConfig cfg = {}) {
    return generate_instance(seed, cfg);
}

inline PolicyParams random_params(uint64_t seed, PolicyShape shape = {}, double scale = 0.5) {
    Rng rng(seed);
    return make_random_params(shape, rng, scale);
}

inline std::vector<double> random_dist(Rng& rng, int n) {
    std::vector<double> logits(n);
    for (double& v : logits) v = rng.next_range(-2.0, 2.0);
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double z = 0.0;
    std::vector<double> p(n);
    for (int i = 0; i < n; ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

// Relative agreement between an analytic gradient and a finite-difference one.
inline double rel_err(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::max(std::sqrt(na), std::sqrt(nb));
    return scale > 0 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

// Central finite differences of a scalar function of the flat parameters.
template <typename F>
std::vector<double> finite_diff(PolicyParams params, F&& f, double h = 1e-5) {
    std::vector<double> grad(params.data.size());
    for (size_t c = 0; c < params.data.size(); ++c) {
        const double saved = params.data[c];
        params.data[c] = saved + h;
        const double hi = f(params);
        params.data[c] = saved - h;
        const double lo = f(params);
        params.data[c] = saved;
        grad[c] = (hi - lo) / (2.0 * h);
    }
    return grad;
}

// Chi-squared statistic for observed counts against expected probabilities.
inline double chi2_stat(std::span<const long long> counts, std::span<const double> probs) {
    long long total = 0;
    for (long long c : counts) total += c;
    double stat = 0.0;
    for (size_t i = 0; i < counts.size(); ++i) {
        const double expected = probs[i] * static_cast<double>(total);
        if (expected > 0) stat += (counts[i] - expected) * (counts[i] - expected) / expected;
    }
    return stat;
}

}  // namespace tgl::test
