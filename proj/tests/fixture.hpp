#pragma once

// The standard fixture shared by the directional acceptance criteria:
// video_length=20, n_symbols=4, spans in [3,6], d=8, 512 train / 128 holdout
// instances, seeds {1,2,3}. Post-training arms all start from the same base
// model: a supervised warmup toward jittered annotations, which yields
// well-formatted but imprecisely localized predictions (the usual starting
// profile for post-training).

#include <memory>
#include <vector>

#include "tgl/curriculum.hpp"
#include "tgl/grpo.hpp"
#include "tgl/offpolicy.hpp"
#include "tgl/opd.hpp"
#include "tgl/policy.hpp"

namespace tgl::fixture {

constexpr int kPoolSize = 512;
constexpr int kHoldoutSize = 128;
constexpr int kBatch = 32;
constexpr int kMaxLen = 8;
constexpr int kJitter = 3;
constexpr double kTeacherSharpness = 10.0;
constexpr int kWarmupSteps = 5000;
constexpr double kWarmupLr = 0.2;
inline const std::vector<double> kThresholds{0.3, 0.5, 0.7};

inline std::vector<GroundingInstance> make_pool(uint64_t seed, int tag, int n,
                                                const char* prefix) {
    EnvConfig env{20, 4, 3, 6};
    std::vector<GroundingInstance> pool(n);
    for (int i = 0; i < n; ++i) {
        Rng r = derive_rng(seed, Stream::pool_gen, tag, i);
        pool[i] = generate_instance(r.next_u64(), env);
        pool[i].id = std::string(prefix) + "-" + std::to_string(i);
    }
    return pool;
}

inline std::vector<const GroundingInstance*> ptrs(std::span<const GroundingInstance> pool) {
    std::vector<const GroundingInstance*> out;
    out.reserve(pool.size());
    for (const auto& p : pool) out.push_back(&p);
    return out;
}

// Round-robin batch of kBatch instances for step s (1-based).
inline std::vector<const GroundingInstance*> batch_at(
    const std::vector<const GroundingInstance*>& pool, long long s, int batch = kBatch) {
    std::vector<const GroundingInstance*> slice;
    slice.reserve(batch);
    for (int j = 0; j < batch; ++j) slice.push_back(pool[(s * batch + j) % pool.size()]);
    return slice;
}

struct SeedFixture {
    uint64_t seed = 0;
    std::vector<GroundingInstance> train;
    std::vector<GroundingInstance> holdout;
    std::vector<const GroundingInstance*> train_ptrs;
    PolicyParams base{};
    std::shared_ptr<OracleTeacher> clean_teacher;  // sharpness 10, no corruption
};

inline SeedFixture make_seed_fixture(uint64_t seed, int threads = 4) {
    SeedFixture f;
    f.seed = seed;
    f.train = make_pool(seed, 0, kPoolSize, "tr");
    f.holdout = make_pool(seed, 1, kHoldoutSize, "ho");
    f.train_ptrs = ptrs(f.train);
    f.clean_teacher =
        std::make_shared<OracleTeacher>(OracleTeacherConfig{kTeacherSharpness, 0.0, seed});

    const auto blurred = jitter_pool(f.train, kJitter);
    const auto bptrs = ptrs(blurred);
    PolicyShape shape{4, vocab::kSize, 8};
    Rng prng = derive_rng(seed, Stream::param_init);
    OffPolicyTrainer warm(make_random_params(shape, prng, 0.1), f.clean_teacher,
                          {OffPolicyVariant::opfkd, kWarmupLr});
    for (int s = 1; s <= kWarmupSteps; ++s) warm.step(batch_at(bptrs, s), threads);
    f.base = warm.params();
    return f;
}

struct CurvePoint {
    long long step;
    long long tokens;
    double miou;
};

// Trains for `steps`, evaluating the held-out pool every `eval_every` steps.
template <typename Trainer>
std::vector<CurvePoint> train_with_curve(Trainer& trainer, const SeedFixture& f,
                                         long long steps, long long eval_every,
                                         int threads = 4) {
    std::vector<CurvePoint> curve;
    for (long long s = 1; s <= steps; ++s) {
        trainer.step(batch_at(f.train_ptrs, s), threads);
        if (s % eval_every == 0) {
            const auto rep =
                greedy_eval(trainer.params(), f.holdout, kMaxLen, kThresholds, threads);
            long long tokens = 0;
            if constexpr (!std::is_same_v<Trainer, OffPolicyTrainer>) {
                tokens = trainer.tokens_cum();
            }
            curve.push_back({s, tokens, rep.mean_iou});
        }
    }
    return curve;
}

inline long long first_crossing_tokens(const std::vector<CurvePoint>& curve, double target) {
    for (const auto& p : curve) {
        if (p.miou >= target) return p.tokens;
    }
    return -1;
}

}  // namespace tgl::fixture
