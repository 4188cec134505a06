#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tgl/env.hpp"
#include "tgl/policy.hpp"

namespace tgl {

struct ScoredSample {
    const GroundingInstance* instance = nullptr;
    std::string id;
    double teacher_iou = 0.0;   // mean top-k teacher IoU vs gt (reliability gate)
    double student_iou = 0.0;   // same procedure applied to the student
    double delta = 0.0;         // teacher_iou - student_iou
    double disagreement = 0.0;  // aggregated reverse KL along a student trajectory
    bool reliable = false;
};

enum class SelectionStrategy { dsus, topk, bbds, gwds };
enum class SortKey { delta, disagreement };

// Default selection budget when k_select is left at 0: the fraction a
// 2,500-sample selection keeps out of a 96,586-sample corpus.
constexpr double kPaperSelectFraction = 2500.0 / 96586.0;

struct CurriculumConfig {
    int k_select = 0;  // 0: scale kPaperSelectFraction to the pool size
    int top_k_preds = 4;
    double reliability_threshold = 0.5;
    SelectionStrategy strategy = SelectionStrategy::topk;
    int bbds_buckets = 5;
    double gwds_center = 0.9;
    double gwds_sigma = 0.2;
    int rounds = 1;
    SortKey sort_key = SortKey::delta;
    int max_len = 8;
};

struct DifficultyConfig {
    double mu = 0.3;
    double sigma = 0.2;
};

struct ReliabilityResult {
    double mean_iou = 0.0;
    bool reliable = false;
};

// Reliability pre-validation: mean IoU of top_k_preds independently sampled teacher predictions
// against gt (decode failures score 0); reliable iff mean >= threshold.
ReliabilityResult teacher_reliability(const Policy& teacher, const GroundingInstance& instance,
                                      int top_k_preds, double threshold, Rng& rng, int max_len);

// Disagreement score: sample one student trajectory and sum the full-distribution reverse KL
// between student and teacher at every visited state.
double disagreement_score(const PolicyParams& student, const Policy& teacher,
                          const GroundingInstance& instance, Rng& rng, int max_len);

// Scores every pool instance (parallel, per-instance rng streams). Unreliable
// samples stay in the list but must never reach a selection strategy.
std::vector<ScoredSample> score_pool(const PolicyParams& student, const Policy& teacher,
                                     std::span<const GroundingInstance> pool,
                                     const CurriculumConfig& cfg, uint64_t seed,
                                     uint64_t round_tag, int threads = 1);

std::vector<ScoredSample> filter_reliable(std::span<const ScoredSample> scored);

// Sort by the configured key descending, ties by id ascending. All strategies
// below expect the reliable-only list and return exactly k samples.
std::vector<ScoredSample> sort_scored(std::span<const ScoredSample> scored, SortKey key);

std::vector<ScoredSample> sample_dsus(std::span<const ScoredSample> scored, int k,
                                      SortKey key = SortKey::delta);
std::vector<ScoredSample> sample_topk(std::span<const ScoredSample> scored, int k,
                                      SortKey key = SortKey::delta);
std::vector<ScoredSample> sample_bbds(std::span<const ScoredSample> scored, int k, int buckets,
                                      SortKey key = SortKey::delta);
std::vector<ScoredSample> sample_gwds(std::span<const ScoredSample> scored, int k, double center,
                                      double sigma, Rng& rng, SortKey key = SortKey::delta);

std::vector<ScoredSample> select_samples(std::span<const ScoredSample> reliable,
                                         const CurriculumConfig& cfg, Rng& rng);

// BBDS per-bucket allocation: floor(k/B) + 1 for the first (k mod B) buckets.
std::vector<int> bbds_allocations(int k, int buckets);

// Normalized Gaussian weights exp(-(x - center)^2 / (2 sigma^2)) / Z.
std::vector<double> gaussian_weights(std::span<const double> values, double center, double sigma);

// Draw k indices without replacement, renormalizing after each draw.
std::vector<int> weighted_sample_without_replacement(std::span<const double> weights, int k,
                                                     Rng& rng);

// Difficulty sampler over per-instance IoU values: identical
// mechanics to GWDS but centered on the base model's IoU.
std::vector<int> difficulty_gaussian_sample(std::span<const double> ious, int k,
                                            const DifficultyConfig& cfg, Rng& rng);

// --- Multi-round orchestration ------------------------------------------------

struct RoundResult {
    int round = 0;
    std::vector<std::string> selected_ids;
    EvalReport holdout_report;
    int reliable_count = 0;
};

struct RoundHooks {
    // Current student parameters, re-queried every round so scoring adapts.
    std::function<PolicyParams()> student;
    // Train on the selected slice for one round.
    std::function<void(std::span<const GroundingInstance* const>, int round)> train;
    // Optional per-round persistence (checkpoints, selection files).
    std::function<void(const RoundResult&)> on_round = nullptr;
};

std::vector<RoundResult> run_rounds(const Policy& teacher,
                                    std::span<const GroundingInstance> pool,
                                    std::span<const GroundingInstance> holdout,
                                    const CurriculumConfig& cfg, const RoundHooks& hooks,
                                    uint64_t seed, std::span<const double> thresholds,
                                    int threads = 1);

// --- CSV interchange (score -> select -> train) --------------------------------

std::string scored_to_csv(std::span<const ScoredSample> scored, const std::string& config_hash);
std::vector<ScoredSample> scored_from_csv(const std::string& text,
                                          std::span<const GroundingInstance> pool);
// Values-only parse (instances left null); enough for selection.
std::vector<ScoredSample> scored_from_csv(const std::string& text);

}  // namespace tgl
