#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tgl/analysis.hpp"
#include "tgl/config.hpp"
#include "tgl/curriculum.hpp"
#include "tgl/env.hpp"
#include "tgl/io.hpp"
#include "tgl/policy.hpp"

namespace tgl {

std::shared_ptr<const Policy> make_teacher(const ExperimentConfig& cfg);
PolicyParams make_initial_params(const ExperimentConfig& cfg);

struct GenOutcome {
    std::string train_path;
    std::string holdout_path;
};

// Deterministic disjoint train/holdout pools under out_dir.
GenOutcome run_gen(const ExperimentConfig& cfg, const std::string& out_dir);

struct TrainOutcome {
    PolicyParams final_params{};
    EvalReport final_eval;
    std::vector<EvalPoint> evals;
    std::vector<RoundResult> rounds;  // curriculum runs only
    std::string metrics_path;
    std::string checkpoint_path;
};

// stop_after_steps > 0 ends the session early at that step (it simulates an
// interruption; resume later with resume=true).
TrainOutcome run_train(const ExperimentConfig& cfg, const std::string& train_pool_path,
                       const std::string& holdout_path, const std::string& out_dir,
                       bool resume = false, const std::string& selection_path = "",
                       long long stop_after_steps = 0);

EvalReport run_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    const std::string& pool_path, const std::string& out_json);

std::string run_score(const ExperimentConfig& cfg, const std::string& student_checkpoint,
                      const std::string& pool_path, const std::string& out_csv);

std::vector<std::string> run_select(const ExperimentConfig& cfg, const std::string& scored_csv,
                                    const std::string& out_ids);

struct VarianceOutcome {
    VarianceReport grpo;
    VarianceReport opd;
    DominanceResult dominance;
};

VarianceOutcome run_variance(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                             const std::string& pool_path, int n_samples, int n_boot,
                             const std::string& out_dir);

KlIdentityReport run_kl_check(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                              const std::string& pool_path, int n_samples, double z_threshold,
                              const std::string& out_json);

std::vector<BudgetRow> run_compare(const std::vector<std::string>& metrics_paths,
                                   double target_miou, const std::string& out_dir);

}  // namespace tgl
