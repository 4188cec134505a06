#include "tgl/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "tgl/error.hpp"
#include "tgl/io.hpp"

namespace tgl {

const char* algo_name(Algo algo) {
    switch (algo) {
        case Algo::grpo: return "grpo";
        case Algo::opd: return "opd";
        case Algo::oprkd: return "oprkd";
        case Algo::opfkd: return "opfkd";
    }
    return "?";
}

Algo algo_from_name(const std::string& name) {
    if (name == "grpo") return Algo::grpo;
    if (name == "opd") return Algo::opd;
    if (name == "oprkd") return Algo::oprkd;
    if (name == "opfkd") return Algo::opfkd;
    throw ConfigError("unknown algo: " + name);
}

static const char* strategy_name(SelectionStrategy s) {
    switch (s) {
        case SelectionStrategy::dsus: return "dsus";
        case SelectionStrategy::topk: return "topk";
        case SelectionStrategy::bbds: return "bbds";
        case SelectionStrategy::gwds: return "gwds";
    }
    return "?";
}

static SelectionStrategy strategy_from_name(const std::string& name) {
    if (name == "dsus") return SelectionStrategy::dsus;
    if (name == "topk") return SelectionStrategy::topk;
    if (name == "bbds") return SelectionStrategy::bbds;
    if (name == "gwds") return SelectionStrategy::gwds;
    throw ConfigError("unknown selection strategy: " + name);
}

static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

static double to_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError("bad numeric value for " + key + ": " + v);
    }
}

static long long to_ll(const std::string& key, const std::string& v) {
    try {
        return std::stoll(v);
    } catch (...) {
        throw ConfigError("bad integer value for " + key + ": " + v);
    }
}

static bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("bad boolean value for " + key + ": " + v);
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "config_version") {
        if (to_ll(key, v) != 1) throw ConfigError("unsupported config_version: " + v);
    } else if (key == "seed") {
        cfg.seed = static_cast<uint64_t>(to_ll(key, v));
    } else if (key == "env.video_length") {
        cfg.env.video_length = static_cast<int>(to_ll(key, v));
    } else if (key == "env.n_symbols") {
        cfg.env.n_symbols = static_cast<int>(to_ll(key, v));
    } else if (key == "env.min_span") {
        cfg.env.min_span = static_cast<int>(to_ll(key, v));
    } else if (key == "env.max_span") {
        cfg.env.max_span = static_cast<int>(to_ll(key, v));
    } else if (key == "env.gt_jitter") {
        cfg.gt_jitter = static_cast<int>(to_ll(key, v));
    } else if (key == "policy.d") {
        cfg.policy_d = static_cast<int>(to_ll(key, v));
    } else if (key == "policy.init_scale") {
        cfg.policy_init_scale = to_double(key, v);
    } else if (key == "algo") {
        cfg.algo = algo_from_name(v);
    } else if (key == "train.steps") {
        cfg.train_steps = to_ll(key, v);
    } else if (key == "train.batch_size") {
        cfg.batch_size = static_cast<int>(to_ll(key, v));
    } else if (key == "train.init_checkpoint") {
        cfg.init_checkpoint = v;
    } else if (key == "grpo.group_size") {
        cfg.grpo.group_size = static_cast<int>(to_ll(key, v));
    } else if (key == "grpo.beta") {
        cfg.grpo.beta = to_double(key, v);
    } else if (key == "grpo.learning_rate") {
        cfg.grpo.learning_rate = to_double(key, v);
    } else if (key == "grpo.epsilon") {
        cfg.grpo.norm_epsilon = to_double(key, v);
    } else if (key == "grpo.reward") {
        if (v == "iou") {
            cfg.grpo.reward = RewardKind::iou;
        } else if (v == "timestamp_aware_iou") {
            cfg.grpo.reward = RewardKind::timestamp_aware_iou;
        } else {
            throw ConfigError("unknown reward kind: " + v);
        }
    } else if (key == "opd.learning_rate") {
        cfg.opd.learning_rate = to_double(key, v);
    } else if (key == "opd.old_refresh_lag") {
        cfg.opd.old_refresh_lag = static_cast<int>(to_ll(key, v));
    } else if (key == "opd.reward_from_snapshot") {
        cfg.opd.reward_from_snapshot = to_bool(key, v);
    } else if (key == "offpolicy.learning_rate") {
        cfg.offpolicy.learning_rate = to_double(key, v);
    } else if (key == "teacher.kind") {
        if (v != "oracle" && v != "checkpoint") throw ConfigError("unknown teacher kind: " + v);
        cfg.teacher.kind = v;
    } else if (key == "teacher.sharpness") {
        cfg.teacher.sharpness = to_double(key, v);
    } else if (key == "teacher.corruption_rate") {
        cfg.teacher.corruption_rate = to_double(key, v);
    } else if (key == "teacher.seed") {
        cfg.teacher.seed = static_cast<uint64_t>(to_ll(key, v));
    } else if (key == "teacher.checkpoint") {
        cfg.teacher.checkpoint = v;
    } else if (key == "curriculum.enabled") {
        cfg.curriculum_enabled = to_bool(key, v);
    } else if (key == "curriculum.k_select") {
        cfg.curriculum.k_select = static_cast<int>(to_ll(key, v));
    } else if (key == "curriculum.top_k_preds") {
        cfg.curriculum.top_k_preds = static_cast<int>(to_ll(key, v));
    } else if (key == "curriculum.reliability_threshold") {
        cfg.curriculum.reliability_threshold = to_double(key, v);
    } else if (key == "curriculum.strategy") {
        cfg.curriculum.strategy = strategy_from_name(v);
    } else if (key == "curriculum.bbds_buckets") {
        cfg.curriculum.bbds_buckets = static_cast<int>(to_ll(key, v));
    } else if (key == "curriculum.gwds_center") {
        cfg.curriculum.gwds_center = to_double(key, v);
    } else if (key == "curriculum.gwds_sigma") {
        cfg.curriculum.gwds_sigma = to_double(key, v);
    } else if (key == "curriculum.rounds") {
        cfg.curriculum.rounds = static_cast<int>(to_ll(key, v));
    } else if (key == "curriculum.sort_key") {
        if (v == "delta") {
            cfg.curriculum.sort_key = SortKey::delta;
        } else if (v == "disagreement") {
            cfg.curriculum.sort_key = SortKey::disagreement;
        } else {
            throw ConfigError("unknown sort key: " + v);
        }
    } else if (key == "curriculum.round_steps") {
        cfg.curriculum_round_steps = to_ll(key, v);
    } else if (key == "pool.train_size") {
        cfg.pool_train_size = static_cast<int>(to_ll(key, v));
    } else if (key == "eval.holdout_size") {
        cfg.holdout_size = static_cast<int>(to_ll(key, v));
    } else if (key == "eval.thresholds") {
        cfg.thresholds.clear();
        std::istringstream is(v);
        std::string item;
        while (std::getline(is, item, ',')) cfg.thresholds.push_back(to_double(key, item));
        if (cfg.thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
    } else if (key == "eval.every") {
        cfg.eval_every = to_ll(key, v);
    } else if (key == "max_len") {
        cfg.max_len = static_cast<int>(to_ll(key, v));
    } else if (key == "threads") {
        cfg.threads = static_cast<int>(to_ll(key, v));
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + t);
        }
        apply_override(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : parse_config_text(read_file(path));
    for (const auto& [k, v] : overrides) apply_override(cfg, k, v);
    return cfg;
}

static std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string config_to_text(const ExperimentConfig& cfg) {
    // std::map keeps the canonical output sorted; threads and paths outside the
    // run's semantics are excluded on purpose.
    std::map<std::string, std::string> kv;
    kv["config_version"] = "1";
    kv["seed"] = std::to_string(cfg.seed);
    kv["env.video_length"] = std::to_string(cfg.env.video_length);
    kv["env.n_symbols"] = std::to_string(cfg.env.n_symbols);
    kv["env.min_span"] = std::to_string(cfg.env.min_span);
    kv["env.max_span"] = std::to_string(cfg.env.max_span);
    kv["env.gt_jitter"] = std::to_string(cfg.gt_jitter);
    kv["policy.d"] = std::to_string(cfg.policy_d);
    kv["policy.init_scale"] = fmt_double(cfg.policy_init_scale);
    kv["algo"] = algo_name(cfg.algo);
    kv["train.steps"] = std::to_string(cfg.train_steps);
    kv["train.batch_size"] = std::to_string(cfg.batch_size);
    kv["train.init_checkpoint"] = cfg.init_checkpoint;
    kv["grpo.group_size"] = std::to_string(cfg.grpo.group_size);
    kv["grpo.beta"] = fmt_double(cfg.grpo.beta);
    kv["grpo.learning_rate"] = fmt_double(cfg.grpo.learning_rate);
    kv["grpo.epsilon"] = fmt_double(cfg.grpo.norm_epsilon);
    kv["grpo.reward"] =
        cfg.grpo.reward == RewardKind::iou ? "iou" : "timestamp_aware_iou";
    kv["opd.learning_rate"] = fmt_double(cfg.opd.learning_rate);
    kv["opd.old_refresh_lag"] = std::to_string(cfg.opd.old_refresh_lag);
    kv["opd.reward_from_snapshot"] = cfg.opd.reward_from_snapshot ? "1" : "0";
    kv["offpolicy.learning_rate"] = fmt_double(cfg.offpolicy.learning_rate);
    kv["teacher.kind"] = cfg.teacher.kind;
    kv["teacher.sharpness"] = fmt_double(cfg.teacher.sharpness);
    kv["teacher.corruption_rate"] = fmt_double(cfg.teacher.corruption_rate);
    kv["teacher.seed"] = std::to_string(cfg.teacher.seed);
    kv["teacher.checkpoint"] = cfg.teacher.checkpoint;
    kv["curriculum.enabled"] = cfg.curriculum_enabled ? "1" : "0";
    kv["curriculum.k_select"] = std::to_string(cfg.curriculum.k_select);
    kv["curriculum.top_k_preds"] = std::to_string(cfg.curriculum.top_k_preds);
    kv["curriculum.reliability_threshold"] = fmt_double(cfg.curriculum.reliability_threshold);
    kv["curriculum.strategy"] = strategy_name(cfg.curriculum.strategy);
    kv["curriculum.bbds_buckets"] = std::to_string(cfg.curriculum.bbds_buckets);
    kv["curriculum.gwds_center"] = fmt_double(cfg.curriculum.gwds_center);
    kv["curriculum.gwds_sigma"] = fmt_double(cfg.curriculum.gwds_sigma);
    kv["curriculum.rounds"] = std::to_string(cfg.curriculum.rounds);
    kv["curriculum.sort_key"] =
        cfg.curriculum.sort_key == SortKey::delta ? "delta" : "disagreement";
    kv["curriculum.round_steps"] = std::to_string(cfg.curriculum_round_steps);
    kv["pool.train_size"] = std::to_string(cfg.pool_train_size);
    kv["eval.holdout_size"] = std::to_string(cfg.holdout_size);
    {
        std::ostringstream os;
        for (size_t i = 0; i < cfg.thresholds.size(); ++i) {
            if (i) os << ',';
            os << fmt_double(cfg.thresholds[i]);
        }
        kv["eval.thresholds"] = os.str();
    }
    kv["eval.every"] = std::to_string(cfg.eval_every);
    kv["max_len"] = std::to_string(cfg.max_len);

    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
    return os.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    const uint64_t h = hash_str(config_to_text(cfg));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace tgl
