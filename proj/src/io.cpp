#include "tgl/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "tgl/error.hpp"

namespace tgl {

using ordered_json = nlohmann::ordered_json;

std::string metrics_header_line(const std::string& config_hash, const std::string& algo,
                                uint64_t seed) {
    ordered_json j;
    j["type"] = "header";
    j["config_hash"] = config_hash;
    j["algo"] = algo;
    j["seed"] = seed;
    j["format"] = 1;
    return j.dump();
}

std::string train_record_line(const MetricsRecord& rec) {
    ordered_json j;
    j["step"] = rec.step;
    j["algo"] = rec.algo;
    // Fixed field order per algorithm schema.
    static const std::map<std::string, std::vector<std::string>> kOrder{
        {"grpo", {"mean_reward", "grad_norm"}},
        {"opd", {"mean_dense_reward", "kl_proxy"}},
        {"oprkd", {"mean_loss"}},
        {"opfkd", {"mean_loss"}},
    };
    auto it = kOrder.find(rec.algo);
    if (it != kOrder.end()) {
        for (const auto& key : it->second) {
            auto v = rec.values.find(key);
            if (v != rec.values.end()) j[key] = v->second;
        }
    } else {
        for (const auto& [k, v] : rec.values) j[k] = v;
    }
    j["tokens_generated"] = rec.tokens_generated;
    j["wallclock_ms"] = rec.wallclock_ms;
    return j.dump();
}

std::string eval_record_line(long long step, const std::string& algo, long long tokens_cum,
                             double wallclock_cum_ms, const EvalReport& report) {
    ordered_json j;
    j["type"] = "eval";
    j["step"] = step;
    j["algo"] = algo;
    j["tokens_cum"] = tokens_cum;
    j["mean_iou"] = report.mean_iou;
    ordered_json recall;
    for (const auto& [t, r] : report.recall_at) {
        std::ostringstream key;
        key << t;
        recall[key.str()] = r;
    }
    j["recall"] = recall;
    j["n"] = report.n_instances;
    j["wallclock_cum_ms"] = wallclock_cum_ms;
    return j.dump();
}

MetricsStream parse_metrics_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metrics file: " + path);
    MetricsStream stream;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        const std::string type = j.value("type", "train");
        if (type == "header") {
            stream.config_hash = j.value("config_hash", "");
            stream.algo = j.value("algo", "");
        } else if (type == "eval") {
            EvalPoint p;
            p.step = j.value("step", 0LL);
            p.tokens_cum = j.value("tokens_cum", 0LL);
            p.wallclock_cum_ms = j.value("wallclock_cum_ms", 0.0);
            p.mean_iou = j.value("mean_iou", 0.0);
            stream.evals.push_back(p);
            if (stream.algo.empty()) stream.algo = j.value("algo", "");
        } else {
            ++stream.n_train_records;
            if (stream.algo.empty()) stream.algo = j.value("algo", "");
        }
    }
    return stream;
}

std::string strip_wallclock(const std::string& jsonl_content) {
    std::istringstream in(jsonl_content);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = ordered_json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            out << line << "\n";
            continue;
        }
        for (auto it = j.begin(); it != j.end();) {
            if (it.key().find("wallclock") != std::string::npos) {
                it = j.erase(it);
            } else {
                ++it;
            }
        }
        out << j.dump() << "\n";
    }
    return out.str();
}

// --- Reports ------------------------------------------------------------------

std::string eval_report_to_json(const EvalReport& report, const std::string& config_hash) {
    ordered_json j;
    j["config_hash"] = config_hash;
    j["n_instances"] = report.n_instances;
    j["mean_iou"] = report.mean_iou;
    ordered_json recall;
    for (const auto& [t, r] : report.recall_at) {
        std::ostringstream key;
        key << t;
        recall[key.str()] = r;
    }
    j["recall"] = recall;
    return j.dump(2);
}

std::string eval_report_table(const EvalReport& report) {
    std::ostringstream os;
    os << "instances: " << report.n_instances << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& [t, r] : report.recall_at) {
        os << "R@" << std::setprecision(2) << t << std::setprecision(4) << "     " << r << "\n";
    }
    os << "mIoU      " << report.mean_iou << "\n";
    return os.str();
}

std::string variance_report_to_json(const VarianceReport& report,
                                    const DominanceResult* dominance,
                                    const std::string& config_hash) {
    ordered_json j;
    j["config_hash"] = config_hash;
    j["estimator"] = report.estimator == EstimatorKind::grpo ? "grpo" : "opd";
    // Sparse estimates are per-trajectory contributions at matched token
    // budget (group-normalized rewards, ratios 1 at the sampling point).
    j["note"] = "single-trajectory estimates at frozen params";
    j["n_samples"] = report.n_samples;
    j["trace_cov"] = report.trace_cov;
    j["decomposition"] = {{"sum_var_terms", report.decomposition.sum_var_terms},
                          {"sum_cov_terms", report.decomposition.sum_cov_terms},
                          {"total", report.decomposition.total}};
    if (dominance) {
        j["dominance"] = {{"trace_opd", dominance->trace_a},
                          {"trace_grpo", dominance->trace_b},
                          {"diff_ci_lo", dominance->diff_ci_lo},
                          {"diff_ci_hi", dominance->diff_ci_hi},
                          {"opd_below_grpo_95", dominance->a_below_b}};
    }
    j["per_coord_var"] = report.per_coord_var;
    return j.dump(2);
}

std::string budget_rows_to_json(const std::vector<BudgetRow>& rows, double target,
                                const std::string& config_hash) {
    ordered_json j;
    j["config_hash"] = config_hash;
    j["target_miou"] = target;
    ordered_json arr = ordered_json::array();
    for (const auto& row : rows) {
        ordered_json r;
        r["algo"] = row.algo;
        r["reached"] = row.reached;
        if (row.reached) {
            r["tokens_to_target"] = row.tokens_to_target;
            r["wallclock_to_target_ms"] = row.wallclock_to_target_ms;
        }
        arr.push_back(r);
    }
    j["rows"] = arr;
    return j.dump(2);
}

std::string budget_rows_table(const std::vector<BudgetRow>& rows, double target) {
    std::ostringstream os;
    os << "target mIoU " << target << "\n";
    os << std::left << std::setw(8) << "algo" << std::setw(18) << "tokens" << "wallclock_ms\n";
    for (const auto& row : rows) {
        os << std::left << std::setw(8) << row.algo;
        if (row.reached) {
            os << std::setw(18) << row.tokens_to_target << row.wallclock_to_target_ms;
        } else {
            os << std::setw(18) << "not reached" << "-";
        }
        os << "\n";
    }
    return os.str();
}

std::string budget_rows_csv(const std::vector<BudgetRow>& rows) {
    std::ostringstream os;
    os << "algo,reached,tokens_to_target,wallclock_to_target_ms\n";
    for (const auto& row : rows) {
        os << row.algo << ',' << (row.reached ? 1 : 0) << ',';
        if (row.reached) {
            os << row.tokens_to_target << ',' << row.wallclock_to_target_ms;
        } else {
            os << ",";
        }
        os << "\n";
    }
    return os.str();
}

// --- Files ---------------------------------------------------------------------

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open file for writing: " + path);
    out << content;
}

void append_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw ConfigError("cannot open file for appending: " + path);
    out << content;
}

void write_manifest(const std::string& out_dir, const std::string& config_hash,
                    const std::vector<std::string>& files) {
    ordered_json j;
    j["config_hash"] = config_hash;
    j["files"] = files;
    write_file(out_dir + "/MANIFEST.json", j.dump(2) + "\n");
}

}  // namespace tgl
