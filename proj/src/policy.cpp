#include "tgl/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>

#include "json.hpp"
#include "tgl/error.hpp"
#include "tgl/parallel.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace tgl {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

double norm2(std::span<const double> x) {
    return std::sqrt(dot(x, x));
}

static void check_shape(const PolicyShape& shape) {
    if (shape.d < 2 || shape.d % 2 != 0) throw ConfigError("policy d must be even and >= 2");
    if (shape.vocab < 2) throw ConfigError("policy vocab must be >= 2");
    if (shape.n_symbols < 1) throw ConfigError("policy n_symbols must be >= 1");
}

PolicyParams make_zero_params(const PolicyShape& shape) {
    check_shape(shape);
    return PolicyParams{shape, std::vector<double>(shape.param_count(), 0.0)};
}

PolicyParams make_random_params(const PolicyShape& shape, Rng& rng, double scale) {
    PolicyParams p = make_zero_params(shape);
    for (double& v : p.data) v = rng.next_range(-scale, scale);
    return p;
}

// --- Features ----------------------------------------------------------------

void fill_boundary_basis(int v, int video_length, std::span<double> out) {
    const double pi = std::numbers::pi;
    for (size_t k = 0; k < out.size(); ++k) {
        switch (k) {
            case 0: out[k] = std::cos(pi * (v / 10)); break;
            case 1: out[k] = std::cos(2.0 * pi * (v % 10) / 10.0); break;
            case 2: out[k] = std::sin(2.0 * pi * (v % 10) / 10.0); break;
            case 3: out[k] = 2.0 * v / (video_length - 1) - 1.0; break;
            default: {
                const int h = static_cast<int>(k - 4) / 2 + 1;
                const double angle = 2.0 * pi * v * h / video_length;
                out[k] = (k % 2 == 0) ? std::cos(angle) : std::sin(angle);
            }
        }
    }
}

std::vector<double> context_basis(const GroundingInstance& inst, int d) {
    std::vector<double> phi(d, 0.0);
    int run_start = -1, run_end = -1;
    for (int i = 0; i < static_cast<int>(inst.context.size()); ++i) {
        if (inst.context[i] == inst.query) {
            if (run_start < 0) run_start = i;
            run_end = i;
        }
    }
    if (run_start < 0) return phi;  // query absent: no localization signal
    const int half = d / 2;
    fill_boundary_basis(run_start, inst.video_length, std::span<double>(phi.data(), half));
    fill_boundary_basis(run_end, inst.video_length, std::span<double>(phi.data() + half, half));
    return phi;
}

std::vector<double> state_features(const PolicyParams& params, const PolicyState& state) {
    const int d = params.shape.d;
    std::vector<double> f(2 * d, 0.0);
    const auto phi = context_basis(*state.instance, d);
    const auto qe = params.context_embed(state.instance->query);
    for (int j = 0; j < d; ++j) f[j] = phi[j] * qe[j];
    for (Token t : state.prefix) {
        const auto te = params.token_embed(t);
        for (int j = 0; j < d; ++j) f[d + j] += te[j];
    }
    return f;
}

StateEval eval_state(const PolicyParams& params, const PolicyState& state) {
    StateEval ev;
    const int d = params.shape.d;
    const int vocab = params.shape.vocab;
    ev.phi = context_basis(*state.instance, d);
    ev.features.assign(2 * d, 0.0);
    const auto qe = params.context_embed(state.instance->query);
    for (int j = 0; j < d; ++j) ev.features[j] = ev.phi[j] * qe[j];
    for (Token t : state.prefix) {
        const auto te = params.token_embed(t);
        for (int j = 0; j < d; ++j) ev.features[d + j] += te[j];
    }

    ev.logits.resize(vocab);
    const auto bias = params.output_bias();
    for (int tok = 0; tok < vocab; ++tok) {
        ev.logits[tok] = dot(params.output_weight(tok), ev.features) + bias[tok];
        if (!std::isfinite(ev.logits[tok])) throw CheckError("non-finite logits");
    }

    const double m = *std::max_element(ev.logits.begin(), ev.logits.end());
    double z = 0.0;
    ev.probs.resize(vocab);
    for (int tok = 0; tok < vocab; ++tok) {
        ev.probs[tok] = std::exp(ev.logits[tok] - m);
        z += ev.probs[tok];
    }
    const double logz = m + std::log(z);
    ev.logps.resize(vocab);
    for (int tok = 0; tok < vocab; ++tok) {
        ev.probs[tok] /= z;
        ev.logps[tok] = ev.logits[tok] - logz;
    }
    return ev;
}

std::vector<double> token_distribution(const PolicyParams& params, const PolicyState& state) {
    return eval_state(params, state).probs;
}

double log_prob(const PolicyParams& params, const PolicyState& state, Token token) {
    return eval_state(params, state).logps[token];
}

Trajectory sample_trajectory(const PolicyParams& params, const GroundingInstance& instance,
                             Rng& rng, int max_len) {
    Trajectory traj;
    for (int t = 0; t < max_len; ++t) {
        PolicyState state{&instance, traj.tokens};
        const StateEval ev = eval_state(params, state);
        const Token tok = rng.next_weighted(ev.probs);
        traj.tokens.push_back(tok);
        traj.logp_sampler.push_back(ev.logps[tok]);
        if (tok == vocab::kEos) break;
    }
    traj.decoded = decode_trajectory(traj.tokens, instance.video_length,
                                     digits_for(instance.video_length));
    return traj;
}

std::vector<double> evaluate_trajectory(const PolicyParams& params,
                                        const GroundingInstance& instance,
                                        std::span<const Token> tokens) {
    std::vector<double> logps;
    logps.reserve(tokens.size());
    for (size_t t = 0; t < tokens.size(); ++t) {
        PolicyState state{&instance, tokens.subspan(0, t)};
        logps.push_back(eval_state(params, state).logps[tokens[t]]);
    }
    return logps;
}

// --- Gradients -----------------------------------------------------------------

void accumulate_logit_grad(const PolicyParams& params, const PolicyState& state,
                           const StateEval& ev, std::span<const double> dlogits,
                           double scale, std::span<double> out) {
    const PolicyShape& sh = params.shape;
    const int d = sh.d;

    // Output layer.
    for (int tok = 0; tok < sh.vocab; ++tok) {
        const double g = scale * dlogits[tok];
        if (g == 0.0) continue;
        double* w = out.data() + sh.w_offset() + static_cast<size_t>(tok) * sh.d_state();
        for (int j = 0; j < sh.d_state(); ++j) w[j] += g * ev.features[j];
        out[sh.b_offset() + tok] += g;
    }

    // Backprop into the feature vector, then through the pooling.
    std::vector<double> df(sh.d_state(), 0.0);
    for (int tok = 0; tok < sh.vocab; ++tok) {
        if (dlogits[tok] == 0.0) continue;
        axpy(dlogits[tok], params.output_weight(tok), df);
    }

    double* ctx = out.data() + sh.ctx_offset() + static_cast<size_t>(state.instance->query) * d;
    for (int j = 0; j < d; ++j) ctx[j] += scale * df[j] * ev.phi[j];

    for (Token t : state.prefix) {
        double* te = out.data() + sh.tok_offset() + static_cast<size_t>(t) * d;
        for (int j = 0; j < d; ++j) te[j] += scale * df[d + j];
    }
}

void grad_log_prob(const PolicyParams& params, const PolicyState& state, Token token,
                   std::span<double> out, double scale) {
    const StateEval ev = eval_state(params, state);
    std::vector<double> dlogits(params.shape.vocab);
    for (int tok = 0; tok < params.shape.vocab; ++tok) {
        dlogits[tok] = (tok == token ? 1.0 : 0.0) - ev.probs[tok];
    }
    accumulate_logit_grad(params, state, ev, dlogits, scale, out);
}

double accumulate_reverse_kl_grad(const PolicyParams& params, const PolicyState& state,
                                  std::span<const double> teacher_probs,
                                  std::span<double> out, double scale) {
    const StateEval ev = eval_state(params, state);
    const int vocab = params.shape.vocab;
    double kl = 0.0;
    std::vector<double> log_ratio(vocab);
    for (int tok = 0; tok < vocab; ++tok) {
        if (teacher_probs[tok] <= 0.0 && ev.probs[tok] > 0.0) {
            throw CheckError("reverse KL undefined: teacher mass zero where student positive");
        }
        log_ratio[tok] = ev.logps[tok] - std::log(teacher_probs[tok]);
        kl += ev.probs[tok] * log_ratio[tok];
    }
    std::vector<double> dlogits(vocab);
    for (int tok = 0; tok < vocab; ++tok) {
        dlogits[tok] = ev.probs[tok] * (log_ratio[tok] - kl);
    }
    accumulate_logit_grad(params, state, ev, dlogits, scale, out);
    return kl;
}

// --- Policy interface -------------------------------------------------------------

double Policy::log_prob(const PolicyState& state, Token token) const {
    return std::log(distribution(state)[token]);
}

std::vector<double> Policy::evaluate_trajectory(const GroundingInstance& instance,
                                                std::span<const Token> tokens) const {
    std::vector<double> logps;
    logps.reserve(tokens.size());
    for (size_t t = 0; t < tokens.size(); ++t) {
        logps.push_back(log_prob(PolicyState{&instance, tokens.subspan(0, t)}, tokens[t]));
    }
    return logps;
}

Trajectory Policy::sample_trajectory(const GroundingInstance& instance, Rng& rng,
                                     int max_len) const {
    Trajectory traj;
    for (int t = 0; t < max_len; ++t) {
        PolicyState state{&instance, traj.tokens};
        const auto probs = distribution(state);
        const Token tok = rng.next_weighted(probs);
        traj.tokens.push_back(tok);
        traj.logp_sampler.push_back(log_prob(state, tok));
        if (tok == vocab::kEos) break;
    }
    traj.decoded = decode_trajectory(traj.tokens, instance.video_length,
                                     digits_for(instance.video_length));
    return traj;
}

std::vector<double> SoftmaxPolicy::distribution(const PolicyState& state) const {
    return token_distribution(params_, state);
}

double SoftmaxPolicy::log_prob(const PolicyState& state, Token token) const {
    return tgl::log_prob(params_, state, token);
}

// --- Oracle teacher -----------------------------------------------------------------

bool OracleTeacher::is_corrupted(const GroundingInstance& inst) const {
    if (cfg_.corruption_rate <= 0.0) return false;
    Rng r(mix_u64(hash_str(inst.id), cfg_.seed));
    return r.next_unit() < cfg_.corruption_rate;
}

TemporalInterval OracleTeacher::target_interval(const GroundingInstance& inst) const {
    if (!is_corrupted(inst)) return inst.gt;
    const int L = inst.video_length;
    const int shift = L / 4;
    TemporalInterval shifted{std::min(inst.gt.start + shift, L - 1),
                             std::min(inst.gt.end + shift, L - 1)};
    if (shifted == inst.gt) {
        // Clipping collapsed the forward shift; shift backwards instead so a
        // corrupted teacher is always wrong.
        shifted = {std::max(inst.gt.start - shift, 0), std::max(inst.gt.end - shift, 0)};
    }
    return shifted;
}

std::vector<Token> OracleTeacher::target_tokens(const GroundingInstance& inst) const {
    return encode_interval(target_interval(inst));
}

Token OracleTeacher::target_at(const GroundingInstance& inst, size_t prefix_len) const {
    const auto target = target_tokens(inst);
    return prefix_len < target.size() ? target[prefix_len] : vocab::kEos;
}

std::vector<double> OracleTeacher::distribution(const PolicyState& state) const {
    const Token target = target_at(*state.instance, state.prefix.size());
    const double e = std::exp(-cfg_.sharpness);
    const double denom = 1.0 + (vocab::kSize - 1) * e;
    std::vector<double> p(vocab::kSize, e / denom);
    p[target] = 1.0 / denom;
    return p;
}

double OracleTeacher::log_prob(const PolicyState& state, Token token) const {
    const Token target = target_at(*state.instance, state.prefix.size());
    const double log_denom = std::log1p((vocab::kSize - 1) * std::exp(-cfg_.sharpness));
    return token == target ? -log_denom : -cfg_.sharpness - log_denom;
}

// --- Greedy decoding -----------------------------------------------------------------

static Trajectory greedy_decode_impl(const std::function<std::vector<double>(const PolicyState&)>& dist,
                                     const GroundingInstance& instance, int max_len) {
    Trajectory traj;
    for (int t = 0; t < max_len; ++t) {
        PolicyState state{&instance, traj.tokens};
        const auto probs = dist(state);
        const Token tok = static_cast<Token>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        traj.tokens.push_back(tok);
        traj.logp_sampler.push_back(std::log(probs[tok]));
        if (tok == vocab::kEos) break;
    }
    traj.decoded = decode_trajectory(traj.tokens, instance.video_length,
                                     digits_for(instance.video_length));
    return traj;
}

Trajectory greedy_decode(const Policy& policy, const GroundingInstance& instance, int max_len) {
    return greedy_decode_impl([&](const PolicyState& s) { return policy.distribution(s); },
                              instance, max_len);
}

Trajectory greedy_decode(const PolicyParams& params, const GroundingInstance& instance,
                         int max_len) {
    return greedy_decode_impl(
        [&](const PolicyState& s) { return token_distribution(params, s); }, instance, max_len);
}

EvalReport greedy_eval(const PolicyParams& params, std::span<const GroundingInstance> pool,
                       int max_len, std::span<const double> thresholds, int threads) {
    std::vector<std::optional<TemporalInterval>> preds(pool.size());
    std::vector<TemporalInterval> gts(pool.size());
    parallel_for(pool.size(), threads, [&](size_t i) {
        preds[i] = greedy_decode(params, pool[i], max_len).decoded;
        gts[i] = pool[i].gt;
    });
    return evaluate(preds, gts, thresholds);
}

EvalReport greedy_eval(const Policy& policy, std::span<const GroundingInstance> pool,
                       int max_len, std::span<const double> thresholds, int threads) {
    std::vector<std::optional<TemporalInterval>> preds(pool.size());
    std::vector<TemporalInterval> gts(pool.size());
    parallel_for(pool.size(), threads, [&](size_t i) {
        preds[i] = greedy_decode(policy, pool[i], max_len).decoded;
        gts[i] = pool[i].gt;
    });
    return evaluate(preds, gts, thresholds);
}

// --- Checkpoints -----------------------------------------------------------------------

void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::string& config_hash, long long step, long long tokens_cum) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open checkpoint for writing: " + path);
    nlohmann::json header{{"format_version", 1},
                          {"kind", "policy"},
                          {"n_symbols", params.shape.n_symbols},
                          {"vocab", params.shape.vocab},
                          {"d", params.shape.d},
                          {"count", params.data.size()},
                          {"step", step},
                          {"tokens_cum", tokens_cum},
                          {"config_hash", config_hash}};
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(params.data.data()),
              static_cast<std::streamsize>(params.data.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("checkpoint missing header: " + path);
    auto j = nlohmann::json::parse(line);
    if (j.value("format_version", 0) != 1 || j.value("kind", "") != "policy") {
        throw ConfigError("unsupported checkpoint format: " + path);
    }
    Checkpoint ckpt;
    ckpt.params.shape =
        PolicyShape{j.at("n_symbols").get<int>(), j.at("vocab").get<int>(), j.at("d").get<int>()};
    const size_t count = j.at("count").get<size_t>();
    if (count != ckpt.params.shape.param_count()) {
        throw ConfigError("checkpoint parameter count does not match its shape");
    }
    ckpt.params.data.resize(count);
    in.read(reinterpret_cast<char*>(ckpt.params.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<size_t>(in.gcount()) != count * sizeof(double)) {
        throw ConfigError("checkpoint truncated: " + path);
    }
    ckpt.config_hash = j.value("config_hash", "");
    ckpt.step = j.value("step", 0LL);
    ckpt.tokens_cum = j.value("tokens_cum", 0LL);
    return ckpt;
}

}  // namespace tgl
