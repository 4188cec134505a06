#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/rng.hpp"

namespace tgl {

// --- Parameters -------------------------------------------------------------
//
// Linear-softmax policy over pooled embeddings. Flat layout shared by
// PolicyParams::data and every GradientAccumulator:
//
//   [0, n_symbols*d)              context_embed, row-major by symbol
//   [ctx, ctx + vocab*d)          token_embed, row-major by token
//   [tok, tok + vocab*2d)         output weights, row-major by token (d_state = 2d)
//   [w,   w + vocab)              output bias
//
// Keeping gradients in the identical layout makes SGD a single axpy and lets
// the finite-difference tests perturb coordinates by flat index.
struct PolicyShape {
    int n_symbols = 4;
    int vocab = vocab::kSize;
    int d = 8;

    int d_state() const { return 2 * d; }
    size_t ctx_offset() const { return 0; }
    size_t tok_offset() const { return static_cast<size_t>(n_symbols) * d; }
    size_t w_offset() const { return tok_offset() + static_cast<size_t>(vocab) * d; }
    size_t b_offset() const { return w_offset() + static_cast<size_t>(vocab) * d_state(); }
    size_t param_count() const { return b_offset() + vocab; }
    bool operator==(const PolicyShape&) const = default;
};

struct PolicyParams {
    PolicyShape shape;
    std::vector<double> data;

    std::span<double> context_embed(int symbol) {
        return {data.data() + shape.ctx_offset() + static_cast<size_t>(symbol) * shape.d,
                static_cast<size_t>(shape.d)};
    }
    std::span<const double> context_embed(int symbol) const {
        return {data.data() + shape.ctx_offset() + static_cast<size_t>(symbol) * shape.d,
                static_cast<size_t>(shape.d)};
    }
    std::span<double> token_embed(Token t) {
        return {data.data() + shape.tok_offset() + static_cast<size_t>(t) * shape.d,
                static_cast<size_t>(shape.d)};
    }
    std::span<const double> token_embed(Token t) const {
        return {data.data() + shape.tok_offset() + static_cast<size_t>(t) * shape.d,
                static_cast<size_t>(shape.d)};
    }
    std::span<double> output_weight(Token t) {
        return {data.data() + shape.w_offset() + static_cast<size_t>(t) * shape.d_state(),
                static_cast<size_t>(shape.d_state())};
    }
    std::span<const double> output_weight(Token t) const {
        return {data.data() + shape.w_offset() + static_cast<size_t>(t) * shape.d_state(),
                static_cast<size_t>(shape.d_state())};
    }
    std::span<double> output_bias() {
        return {data.data() + shape.b_offset(), static_cast<size_t>(shape.vocab)};
    }
    std::span<const double> output_bias() const {
        return {data.data() + shape.b_offset(), static_cast<size_t>(shape.vocab)};
    }
};

using GradientAccumulator = std::vector<double>;

PolicyParams make_zero_params(const PolicyShape& shape);
PolicyParams make_random_params(const PolicyShape& shape, Rng& rng, double scale = 0.1);

// --- States and trajectories -------------------------------------------------

struct PolicyState {
    const GroundingInstance* instance = nullptr;
    std::span<const Token> prefix;
};

struct Trajectory {
    std::vector<Token> tokens;
    std::vector<double> logp_sampler;
    std::optional<TemporalInterval> decoded;
};

// --- Core policy math ---------------------------------------------------------

// Positional basis for one boundary value v in [0, video_length). The entries
// are digit-aligned (tens parity, units circle) so that a linear readout can
// separate boundary digits; remaining slots are Fourier features of v.
void fill_boundary_basis(int v, int video_length, std::span<double> out);

// Context basis for the query run [run_start, run_end]: first half encodes the
// start boundary, second half the end boundary.
std::vector<double> context_basis(const GroundingInstance& inst, int d);

// Feature vector [2d]: (context basis ⊙ context_embed[query]) ++ (sum of
// token_embed over the prefix). Empty prefix gives an all-zero second half;
// prefix pooling is order-invariant.
std::vector<double> state_features(const PolicyParams& params, const PolicyState& state);

struct StateEval {
    std::vector<double> phi;       // context basis, kept for the embedding backprop
    std::vector<double> features;  // [2d]
    std::vector<double> logits;    // [vocab]
    std::vector<double> probs;     // softmax, all > 0, sums to 1
    std::vector<double> logps;     // log-softmax via log-sum-exp
};

StateEval eval_state(const PolicyParams& params, const PolicyState& state);

std::vector<double> token_distribution(const PolicyParams& params, const PolicyState& state);
double log_prob(const PolicyParams& params, const PolicyState& state, Token token);

Trajectory sample_trajectory(const PolicyParams& params, const GroundingInstance& instance,
                             Rng& rng, int max_len);

// Teacher-forced per-token log-probabilities of a given token sequence.
std::vector<double> evaluate_trajectory(const PolicyParams& params,
                                        const GroundingInstance& instance,
                                        std::span<const Token> tokens);

// Backprop of an arbitrary d(objective)/d(logits) vector through the linear
// head and the pooled embeddings; accumulates scale * gradient into out.
void accumulate_logit_grad(const PolicyParams& params, const PolicyState& state,
                           const StateEval& ev, std::span<const double> dlogits,
                           double scale, std::span<double> out);

// scale * ∇ log π(token | state), the score function of the softmax head.
void grad_log_prob(const PolicyParams& params, const PolicyState& state, Token token,
                   std::span<double> out, double scale = 1.0);

// scale * ∇ KL(π_params(.|state) || teacher_probs), by the logit chain rule
// d KL / d z_c = p_c ((log p_c - log q_c) - KL). Used by the KL-regularized
// trainer and as the analytic side of the identity checks.
double accumulate_reverse_kl_grad(const PolicyParams& params, const PolicyState& state,
                                  std::span<const double> teacher_probs,
                                  std::span<double> out, double scale = 1.0);

// --- Generic policy interface --------------------------------------------------
//
// Anything that yields a per-state token distribution: a parameterized student,
// a frozen snapshot, or the rule-based oracle teacher. Scoring and sampling
// have default implementations on top of token_distribution.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::vector<double> distribution(const PolicyState& state) const = 0;
    virtual double log_prob(const PolicyState& state, Token token) const;
    virtual std::vector<double> evaluate_trajectory(const GroundingInstance& instance,
                                                    std::span<const Token> tokens) const;
    virtual Trajectory sample_trajectory(const GroundingInstance& instance, Rng& rng,
                                         int max_len) const;
};

class SoftmaxPolicy : public Policy {
public:
    explicit SoftmaxPolicy(PolicyParams params) : params_(std::move(params)) {}
    std::vector<double> distribution(const PolicyState& state) const override;
    double log_prob(const PolicyState& state, Token token) const override;
    const PolicyParams& params() const { return params_; }

private:
    PolicyParams params_;
};

// Fixed rule-based teacher. For each instance it follows one target token
// sequence (the canonical encoding of gt, or of a shifted interval when the
// instance is corrupted) with logits sharpness * one_hot(target token); the
// target token is indexed by prefix length, so the distribution is defined at
// every state. Never updated.
struct OracleTeacherConfig {
    double sharpness = 50.0;
    double corruption_rate = 0.0;
    uint64_t seed = 0;
};

class OracleTeacher : public Policy {
public:
    explicit OracleTeacher(OracleTeacherConfig cfg) : cfg_(cfg) {}

    std::vector<double> distribution(const PolicyState& state) const override;
    double log_prob(const PolicyState& state, Token token) const override;

    bool is_corrupted(const GroundingInstance& inst) const;
    TemporalInterval target_interval(const GroundingInstance& inst) const;
    std::vector<Token> target_tokens(const GroundingInstance& inst) const;
    const OracleTeacherConfig& config() const { return cfg_; }

private:
    Token target_at(const GroundingInstance& inst, size_t prefix_len) const;
    OracleTeacherConfig cfg_;
};

Trajectory greedy_decode(const Policy& policy, const GroundingInstance& instance, int max_len);
Trajectory greedy_decode(const PolicyParams& params, const GroundingInstance& instance,
                         int max_len);

// Argmax decoding over a pool, scored against ground truth.
EvalReport greedy_eval(const PolicyParams& params, std::span<const GroundingInstance> pool,
                       int max_len, std::span<const double> thresholds, int threads = 1);
EvalReport greedy_eval(const Policy& policy, std::span<const GroundingInstance> pool,
                       int max_len, std::span<const double> thresholds, int threads = 1);

// --- Checkpoints ---------------------------------------------------------------
//
// JSON header line (shapes, format version, step, config hash) followed by the
// flat little-endian float64 parameter array. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::string& config_hash, long long step,
                     long long tokens_cum = 0);
struct Checkpoint {
    PolicyParams params;
    std::string config_hash;
    long long step = 0;
    long long tokens_cum = 0;
};
Checkpoint load_checkpoint(const std::string& path);

// --- Small vector helpers --------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double norm2(std::span<const double> x);

}  // namespace tgl
