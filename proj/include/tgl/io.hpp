#pragma once

#include <map>
#include <string>
#include <vector>

#include "tgl/analysis.hpp"
#include "tgl/env.hpp"
#include "tgl/metrics.hpp"

namespace tgl {

// --- Metrics JSONL ---------------------------------------------------------
//
// One record per line. Train records follow the per-algorithm schema
// ({step, algo, <fields>, tokens_generated, wallclock_ms}); eval records are
// tagged "type":"eval" and carry cumulative budget plus the held-out report.
// wallclock fields are the only non-deterministic bytes and are stripped
// before any determinism comparison.

std::string metrics_header_line(const std::string& config_hash, const std::string& algo,
                                uint64_t seed);
std::string train_record_line(const MetricsRecord& rec);
std::string eval_record_line(long long step, const std::string& algo, long long tokens_cum,
                             double wallclock_cum_ms, const EvalReport& report);

struct MetricsStream {
    std::string algo;
    std::string config_hash;
    std::vector<EvalPoint> evals;
    int n_train_records = 0;
};

MetricsStream parse_metrics_file(const std::string& path);

// Canonical form for byte comparisons: wallclock keys removed, all other
// bytes kept verbatim.
std::string strip_wallclock(const std::string& jsonl_content);

// --- Reports ----------------------------------------------------------------

std::string eval_report_to_json(const EvalReport& report, const std::string& config_hash);
std::string eval_report_table(const EvalReport& report);

std::string variance_report_to_json(const VarianceReport& report,
                                    const DominanceResult* dominance,
                                    const std::string& config_hash);
std::string budget_rows_to_json(const std::vector<BudgetRow>& rows, double target,
                                const std::string& config_hash);
std::string budget_rows_table(const std::vector<BudgetRow>& rows, double target);
std::string budget_rows_csv(const std::vector<BudgetRow>& rows);

// --- Small file helpers --------------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);
void append_file(const std::string& path, const std::string& content);

void write_manifest(const std::string& out_dir, const std::string& config_hash,
                    const std::vector<std::string>& files);

}  // namespace tgl
