#pragma once

#include <map>
#include <string>

namespace tgl {

// One JSONL record in a metrics stream. Train records carry the per-algorithm
// fields listed in `values`; eval records additionally carry recall/miou.
// wallclock fields are flagged non-deterministic and excluded from diffs.
struct MetricsRecord {
    std::string type = "train";  // "train" | "eval" | "header"
    long long step = 0;
    std::string algo;
    std::map<std::string, double> values;
    long long tokens_generated = 0;
    long long tokens_cum = 0;
    double wallclock_ms = 0.0;
};

}  // namespace tgl
