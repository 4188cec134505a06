#include "tgl/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "tgl/error.hpp"
#include "tgl/opd.hpp"
#include "tgl/parallel.hpp"

namespace tgl {

static double key_of(const ScoredSample& s, SortKey key) {
    return key == SortKey::delta ? s.delta : s.disagreement;
}

ReliabilityResult teacher_reliability(const Policy& teacher, const GroundingInstance& instance,
                                      int top_k_preds, double threshold, Rng& rng, int max_len) {
    if (top_k_preds < 1) throw ConfigError("top_k_preds must be >= 1");
    double sum = 0.0;
    for (int k = 0; k < top_k_preds; ++k) {
        const Trajectory traj = teacher.sample_trajectory(instance, rng, max_len);
        if (traj.decoded) sum += iou(*traj.decoded, instance.gt);
    }
    const double mean = sum / top_k_preds;
    return {mean, mean >= threshold};
}

static double mean_topk_iou_params(const PolicyParams& params, const GroundingInstance& instance,
                                   int top_k_preds, Rng& rng, int max_len) {
    double sum = 0.0;
    for (int k = 0; k < top_k_preds; ++k) {
        const Trajectory traj = sample_trajectory(params, instance, rng, max_len);
        if (traj.decoded) sum += iou(*traj.decoded, instance.gt);
    }
    return sum / top_k_preds;
}

double disagreement_score(const PolicyParams& student, const Policy& teacher,
                          const GroundingInstance& instance, Rng& rng, int max_len) {
    const Trajectory traj = sample_trajectory(student, instance, rng, max_len);
    double total = 0.0;
    const auto tokens = std::span<const Token>(traj.tokens);
    for (size_t t = 0; t < tokens.size(); ++t) {
        PolicyState state{&instance, tokens.subspan(0, t)};
        const auto p = token_distribution(student, state);
        const auto q = teacher.distribution(state);
        total += reverse_kl_at_state(p, q);
    }
    return total;
}

std::vector<ScoredSample> score_pool(const PolicyParams& student, const Policy& teacher,
                                     std::span<const GroundingInstance> pool,
                                     const CurriculumConfig& cfg, uint64_t seed,
                                     uint64_t round_tag, int threads) {
    if (pool.empty()) throw ConfigError("score_pool: empty pool");
    std::vector<ScoredSample> scored(pool.size());
    parallel_for(pool.size(), threads, [&](size_t i) {
        const GroundingInstance& inst = pool[i];
        const uint64_t tag = hash_str(inst.id);
        ScoredSample s;
        s.instance = &inst;
        s.id = inst.id;

        Rng rng_teacher = derive_rng(seed, Stream::curriculum, round_tag, tag, 1);
        const auto rel = teacher_reliability(teacher, inst, cfg.top_k_preds,
                                             cfg.reliability_threshold, rng_teacher, cfg.max_len);
        s.teacher_iou = rel.mean_iou;
        s.reliable = rel.reliable;

        Rng rng_student = derive_rng(seed, Stream::curriculum, round_tag, tag, 2);
        s.student_iou =
            mean_topk_iou_params(student, inst, cfg.top_k_preds, rng_student, cfg.max_len);
        s.delta = s.teacher_iou - s.student_iou;

        Rng rng_dis = derive_rng(seed, Stream::curriculum, round_tag, tag, 3);
        s.disagreement = disagreement_score(student, teacher, inst, rng_dis, cfg.max_len);
        scored[i] = std::move(s);
    });
    return scored;
}

std::vector<ScoredSample> filter_reliable(std::span<const ScoredSample> scored) {
    std::vector<ScoredSample> out;
    for (const auto& s : scored) {
        if (s.reliable) out.push_back(s);
    }
    return out;
}

std::vector<ScoredSample> sort_scored(std::span<const ScoredSample> scored, SortKey key) {
    std::vector<ScoredSample> sorted(scored.begin(), scored.end());
    std::sort(sorted.begin(), sorted.end(), [key](const ScoredSample& a, const ScoredSample& b) {
        const double ka = key_of(a, key), kb = key_of(b, key);
        if (ka != kb) return ka > kb;
        return a.id < b.id;
    });
    return sorted;
}

// Evenly spaced 1-based ranks j_t = round(1 + (n-1) t / (k-1)), half-to-even.
static std::vector<int> dsus_ranks(int n, int k) {
    std::vector<int> ranks(k);
    for (int t = 0; t < k; ++t) {
        const double x = 1.0 + static_cast<double>(n - 1) * t / (k - 1);
        ranks[t] = static_cast<int>(std::nearbyint(x));
    }
    return ranks;
}

std::vector<ScoredSample> sample_dsus(std::span<const ScoredSample> scored, int k, SortKey key) {
    const int n = static_cast<int>(scored.size());
    if (k < 2 || k > n) throw ConfigError("dsus: need 2 <= k <= n");
    const auto sorted = sort_scored(scored, key);
    std::vector<ScoredSample> out;
    out.reserve(k);
    for (int rank : dsus_ranks(n, k)) out.push_back(sorted[rank - 1]);
    return out;
}

std::vector<ScoredSample> sample_topk(std::span<const ScoredSample> scored, int k, SortKey key) {
    const int n = static_cast<int>(scored.size());
    if (k < 1 || k > n) throw ConfigError("topk: need 1 <= k <= n");
    auto sorted = sort_scored(scored, key);
    sorted.resize(k);
    return sorted;
}

std::vector<int> bbds_allocations(int k, int buckets) {
    if (buckets < 1) throw ConfigError("bbds: need >= 1 bucket");
    std::vector<int> alloc(buckets, k / buckets);
    for (int b = 0; b < k % buckets; ++b) ++alloc[b];
    return alloc;
}

std::vector<ScoredSample> sample_bbds(std::span<const ScoredSample> scored, int k, int buckets,
                                      SortKey key) {
    const int n = static_cast<int>(scored.size());
    if (k < 1 || k > n) throw ConfigError("bbds: need 1 <= k <= n");
    const auto sorted = sort_scored(scored, key);

    double lo = key_of(sorted.back(), key), hi = key_of(sorted.front(), key);
    if (lo == hi) {
        // Degenerate range: one bucket holding everything, selection falls back
        // to tie-break order.
        return {sorted.begin(), sorted.begin() + k};
    }

    const double width = (hi - lo) / buckets;
    std::vector<std::vector<ScoredSample>> bucket(buckets);
    for (const auto& s : sorted) {  // already key-descending inside each bucket
        int b = static_cast<int>((key_of(s, key) - lo) / width);
        b = std::clamp(b, 0, buckets - 1);  // top edge belongs to the last bucket
        bucket[b].push_back(s);
    }

    const auto alloc = bbds_allocations(k, buckets);
    std::vector<ScoredSample> out;
    std::vector<std::vector<bool>> taken(buckets);
    for (int b = 0; b < buckets; ++b) taken[b].assign(bucket[b].size(), false);

    auto take_evenly = [&](int b, int want) {
        const int nb = static_cast<int>(bucket[b].size());
        const int got = std::min(want, nb);
        if (got == 0) return 0;
        std::vector<int> ranks;
        if (got == 1) {
            ranks = {1};
        } else if (got == nb) {
            ranks.resize(nb);
            for (int i = 0; i < nb; ++i) ranks[i] = i + 1;
        } else {
            ranks = dsus_ranks(nb, got);
        }
        for (int rank : ranks) {
            out.push_back(bucket[b][rank - 1]);
            taken[b][rank - 1] = true;
        }
        return got;
    };

    int carry = 0;
    for (int b = 0; b < buckets; ++b) {
        const int want = alloc[b] + carry;
        carry = want - take_evenly(b, want);
    }
    // Any remaining shortfall wraps around, topping buckets up in index order.
    for (int b = 0; carry > 0 && b < buckets; ++b) {
        for (size_t i = 0; carry > 0 && i < bucket[b].size(); ++i) {
            if (taken[b][i]) continue;
            out.push_back(bucket[b][i]);
            taken[b][i] = true;
            --carry;
        }
    }
    return out;
}

std::vector<double> gaussian_weights(std::span<const double> values, double center, double sigma) {
    if (sigma <= 0.0) throw ConfigError("gaussian weights: sigma must be positive");
    std::vector<double> w(values.size());
    double z = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        w[i] = std::exp(-(values[i] - center) * (values[i] - center) / (2.0 * sigma * sigma));
        z += w[i];
    }
    for (double& x : w) x /= z;
    return w;
}

std::vector<int> weighted_sample_without_replacement(std::span<const double> weights, int k,
                                                     Rng& rng) {
    if (k < 0 || k > static_cast<int>(weights.size())) {
        throw ConfigError("weighted sampling: need 0 <= k <= n");
    }
    std::vector<double> w(weights.begin(), weights.end());
    std::vector<int> picked;
    picked.reserve(k);
    for (int i = 0; i < k; ++i) {
        const int idx = rng.next_weighted(w);
        picked.push_back(idx);
        w[idx] = 0.0;  // renormalization is implicit in the CDF scan
    }
    return picked;
}

std::vector<ScoredSample> sample_gwds(std::span<const ScoredSample> scored, int k, double center,
                                      double sigma, Rng& rng, SortKey key) {
    const int n = static_cast<int>(scored.size());
    if (k < 1 || k > n) throw ConfigError("gwds: need 1 <= k <= n");
    // Sorted order first so the draw sequence is independent of input order.
    const auto sorted = sort_scored(scored, key);
    std::vector<double> values(sorted.size());
    for (size_t i = 0; i < sorted.size(); ++i) values[i] = key_of(sorted[i], key);
    const auto weights = gaussian_weights(values, center, sigma);
    std::vector<ScoredSample> out;
    out.reserve(k);
    for (int idx : weighted_sample_without_replacement(weights, k, rng)) {
        out.push_back(sorted[idx]);
    }
    return out;
}

std::vector<int> difficulty_gaussian_sample(std::span<const double> ious, int k,
                                            const DifficultyConfig& cfg, Rng& rng) {
    if (k < 1 || k > static_cast<int>(ious.size())) {
        throw ConfigError("difficulty sampling: need 1 <= k <= n");
    }
    const auto weights = gaussian_weights(ious, cfg.mu, cfg.sigma);
    return weighted_sample_without_replacement(weights, k, rng);
}

std::vector<ScoredSample> select_samples(std::span<const ScoredSample> reliable,
                                         const CurriculumConfig& cfg, Rng& rng) {
    const int n = static_cast<int>(reliable.size());
    int k = cfg.k_select;
    if (k <= 0) k = std::max(1, static_cast<int>(std::lround(n * kPaperSelectFraction)));
    switch (cfg.strategy) {
        case SelectionStrategy::dsus: return sample_dsus(reliable, k, cfg.sort_key);
        case SelectionStrategy::topk: return sample_topk(reliable, k, cfg.sort_key);
        case SelectionStrategy::bbds:
            return sample_bbds(reliable, k, cfg.bbds_buckets, cfg.sort_key);
        case SelectionStrategy::gwds:
            return sample_gwds(reliable, k, cfg.gwds_center, cfg.gwds_sigma, rng, cfg.sort_key);
    }
    throw ConfigError("unknown selection strategy");
}

std::vector<RoundResult> run_rounds(const Policy& teacher,
                                    std::span<const GroundingInstance> pool,
                                    std::span<const GroundingInstance> holdout,
                                    const CurriculumConfig& cfg, const RoundHooks& hooks,
                                    uint64_t seed, std::span<const double> thresholds,
                                    int threads) {
    if (cfg.rounds < 1) throw ConfigError("run_rounds: rounds must be >= 1");
    std::vector<RoundResult> results;
    for (int round = 1; round <= cfg.rounds; ++round) {
        const PolicyParams student = hooks.student();
        const auto scored = score_pool(student, teacher, pool, cfg, seed,
                                       static_cast<uint64_t>(round), threads);
        const auto reliable = filter_reliable(scored);

        int k = cfg.k_select;
        if (k <= 0) {
            k = std::max(1, static_cast<int>(std::lround(pool.size() * kPaperSelectFraction)));
        }
        if (static_cast<int>(reliable.size()) < k) {
            throw ConfigError("run_rounds: reliable pool has " +
                              std::to_string(reliable.size()) + " samples but k=" +
                              std::to_string(k) + " requested (shortfall " +
                              std::to_string(k - static_cast<int>(reliable.size())) + ")");
        }
        Rng sel_rng = derive_rng(seed, Stream::curriculum, static_cast<uint64_t>(round), 0, 99);
        CurriculumConfig round_cfg = cfg;
        round_cfg.k_select = k;
        const auto selected = select_samples(reliable, round_cfg, sel_rng);

        std::vector<const GroundingInstance*> slice;
        slice.reserve(selected.size());
        RoundResult rr;
        rr.round = round;
        rr.reliable_count = static_cast<int>(reliable.size());
        for (const auto& s : selected) {
            slice.push_back(s.instance);
            rr.selected_ids.push_back(s.id);
        }
        hooks.train(slice, round);

        rr.holdout_report = greedy_eval(hooks.student(), holdout, cfg.max_len, thresholds, threads);
        if (hooks.on_round) hooks.on_round(rr);
        results.push_back(std::move(rr));
    }
    return results;
}

// --- CSV -----------------------------------------------------------------------

std::string scored_to_csv(std::span<const ScoredSample> scored, const std::string& config_hash) {
    std::ostringstream os;
    os << "# config_hash=" << config_hash << "\n";
    os << "id,teacher_iou,student_iou,delta,disagreement,reliable\n";
    char buf[128];
    for (const auto& s : scored) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g", s.teacher_iou, s.student_iou,
                      s.delta, s.disagreement);
        os << s.id << ',' << buf << ',' << (s.reliable ? 1 : 0) << "\n";
    }
    return os.str();
}

std::vector<ScoredSample> scored_from_csv(const std::string& text) {
    std::vector<ScoredSample> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("id,", 0) == 0) continue;
        std::istringstream ls(line);
        std::string field;
        ScoredSample s;
        std::getline(ls, s.id, ',');
        std::getline(ls, field, ',');
        s.teacher_iou = std::stod(field);
        std::getline(ls, field, ',');
        s.student_iou = std::stod(field);
        std::getline(ls, field, ',');
        s.delta = std::stod(field);
        std::getline(ls, field, ',');
        s.disagreement = std::stod(field);
        std::getline(ls, field, ',');
        s.reliable = field == "1" || field == "true";
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ScoredSample> scored_from_csv(const std::string& text,
                                          std::span<const GroundingInstance> pool) {
    std::unordered_map<std::string, const GroundingInstance*> by_id;
    for (const auto& inst : pool) by_id[inst.id] = &inst;
    std::vector<ScoredSample> out = scored_from_csv(text);
    for (auto& s : out) {
        auto it = by_id.find(s.id);
        if (it == by_id.end()) throw ConfigError("scored CSV references unknown id: " + s.id);
        s.instance = it->second;
    }
    return out;
}

}  // namespace tgl
