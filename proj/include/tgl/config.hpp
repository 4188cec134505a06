#pragma once

#include <string>
#include <vector>

#include "tgl/curriculum.hpp"
#include "tgl/env.hpp"
#include "tgl/grpo.hpp"
#include "tgl/offpolicy.hpp"
#include "tgl/opd.hpp"
#include "tgl/policy.hpp"

namespace tgl {

enum class Algo { grpo, opd, oprkd, opfkd };

struct TeacherSpec {
    std::string kind = "oracle";  // oracle | checkpoint
    double sharpness = 10.0;
    double corruption_rate = 0.0;
    uint64_t seed = 7;
    std::string checkpoint;
};

// Flat, versioned key=value experiment configuration. Two runs with the same
// config and seed produce byte-identical metrics streams (wallclock aside);
// threads and output paths are deliberately excluded from the hash.
struct ExperimentConfig {
    uint64_t seed = 1;

    EnvConfig env;
    int gt_jitter = 0;  // gen also emits an imprecisely-annotated train copy when > 0
    int policy_d = 8;
    double policy_init_scale = 0.1;

    Algo algo = Algo::opd;
    long long train_steps = 2000;
    int batch_size = 32;
    std::string init_checkpoint;  // start from this checkpoint instead of a fresh init

    GrpoConfig grpo;
    OpdConfig opd;
    OffPolicyConfig offpolicy;
    TeacherSpec teacher;

    bool curriculum_enabled = false;
    CurriculumConfig curriculum;
    long long curriculum_round_steps = 400;

    int pool_train_size = 512;
    int holdout_size = 128;
    std::vector<double> thresholds{0.3, 0.5, 0.7};
    long long eval_every = 50;

    int max_len = 8;
    int threads = 1;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides = {});
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Canonical serialization (sorted keys, one per line); its FNV hash identifies
// every artifact the run produces.
std::string config_to_text(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

const char* algo_name(Algo algo);
Algo algo_from_name(const std::string& name);

}  // namespace tgl
