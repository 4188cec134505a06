#include "tgl/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tgl/error.hpp"

namespace tgl {

int digits_for(int video_length) {
    int max_index = video_length - 1;
    int d = 1;
    while (max_index >= 10) {
        max_index /= 10;
        ++d;
    }
    return d;
}

GroundingInstance generate_instance(uint64_t seed, const EnvConfig& cfg) {
    if (cfg.min_span < 1) throw ConfigError("min_span must be >= 1");
    if (cfg.max_span > cfg.video_length) throw ConfigError("max_span exceeds video_length");
    if (cfg.min_span > cfg.max_span) throw ConfigError("min_span exceeds max_span");
    if (cfg.n_symbols < 2) throw ConfigError("need at least 2 symbols");
    if (cfg.video_length < 2) throw ConfigError("video_length must be >= 2");

    Rng rng(seed);
    GroundingInstance inst;
    inst.video_length = cfg.video_length;

    const int span = cfg.min_span + rng.next_int(cfg.max_span - cfg.min_span + 1);
    const int start = rng.next_int(cfg.video_length - span + 1);
    inst.gt = {start, start + span - 1};
    inst.query = rng.next_int(cfg.n_symbols);

    inst.context.resize(cfg.video_length);
    for (int i = 0; i < cfg.video_length; ++i) {
        if (i >= inst.gt.start && i <= inst.gt.end) {
            inst.context[i] = inst.query;
        } else {
            // Any symbol except the query, so the gt run stays the only one.
            int s = rng.next_int(cfg.n_symbols - 1);
            inst.context[i] = s >= inst.query ? s + 1 : s;
        }
    }

    char buf[32];
    std::snprintf(buf, sizeof(buf), "i-%016llx", static_cast<unsigned long long>(seed));
    inst.id = buf;
    return inst;
}

GroundingInstance jitter_annotation(const GroundingInstance& inst, int max_shift) {
    GroundingInstance out = inst;
    Rng rng(mix_u64(hash_str(inst.id), 0xb1));
    int shift = 0;
    while (shift == 0) shift = rng.next_int(2 * max_shift + 1) - max_shift;
    const int last = inst.video_length - 1;
    out.gt.start = std::clamp(inst.gt.start + shift, 0, last);
    out.gt.end = std::clamp(inst.gt.end + shift, 0, last);
    if (out.gt.start > out.gt.end) std::swap(out.gt.start, out.gt.end);
    return out;
}

std::vector<GroundingInstance> jitter_pool(std::span<const GroundingInstance> pool,
                                           int max_shift) {
    std::vector<GroundingInstance> out;
    out.reserve(pool.size());
    for (const auto& inst : pool) out.push_back(jitter_annotation(inst, max_shift));
    return out;
}

std::optional<TemporalInterval> decode_trajectory(std::span<const Token> tokens,
                                                  int video_length, int max_digits) {
    size_t i = 0;
    auto parse_number = [&]() -> std::optional<int> {
        int n_digits = 0;
        long long value = 0;
        while (i < tokens.size() && vocab::is_digit(tokens[i])) {
            value = value * 10 + tokens[i];
            ++n_digits;
            ++i;
            if (n_digits > max_digits) return std::nullopt;
        }
        if (n_digits == 0) return std::nullopt;
        return static_cast<int>(value);
    };

    auto start = parse_number();
    if (!start) return std::nullopt;
    if (i >= tokens.size() || tokens[i] != vocab::kSep) return std::nullopt;
    ++i;
    auto end = parse_number();
    if (!end) return std::nullopt;
    if (i >= tokens.size() || tokens[i] != vocab::kEos) return std::nullopt;
    ++i;
    if (i != tokens.size()) return std::nullopt;

    if (*start > *end || *end >= video_length) return std::nullopt;
    return TemporalInterval{*start, *end};
}

std::vector<Token> encode_interval(const TemporalInterval& iv) {
    std::vector<Token> out;
    auto push_number = [&out](int v) {
        std::string s = std::to_string(v);
        for (char c : s) out.push_back(c - '0');
    };
    push_number(iv.start);
    out.push_back(vocab::kSep);
    push_number(iv.end);
    out.push_back(vocab::kEos);
    return out;
}

double iou(const TemporalInterval& a, const TemporalInterval& b) {
    const int inter = std::min(a.end, b.end) - std::max(a.start, b.start) + 1;
    if (inter <= 0) return 0.0;
    const int uni = a.length() + b.length() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double timestamp_aware_iou(const TemporalInterval& pred, const TemporalInterval& gt,
                           int video_length) {
    const double base = iou(pred, gt);
    const double dev = std::abs(pred.start - gt.start) + std::abs(pred.end - gt.end);
    const double factor = 1.0 - dev / (2.0 * video_length);
    return std::clamp(base * factor, 0.0, 1.0);
}

EvalReport evaluate(std::span<const std::optional<TemporalInterval>> predictions,
                    std::span<const TemporalInterval> gts,
                    std::span<const double> thresholds) {
    if (predictions.empty() || predictions.size() != gts.size()) {
        throw ConfigError("evaluate: empty or mismatched prediction/gt lists");
    }
    EvalReport report;
    report.n_instances = static_cast<int>(predictions.size());
    std::vector<double> ious(predictions.size());
    double sum = 0.0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        ious[i] = predictions[i] ? iou(*predictions[i], gts[i]) : 0.0;
        sum += ious[i];
    }
    report.mean_iou = sum / static_cast<double>(predictions.size());
    for (double t : thresholds) {
        int hits = 0;
        for (double v : ious) {
            if (v >= t) ++hits;
        }
        report.recall_at[t] = static_cast<double>(hits) / static_cast<double>(predictions.size());
    }
    return report;
}

// --- JSONL ----------------------------------------------------------------

std::string instance_to_jsonl(const GroundingInstance& inst) {
    std::ostringstream os;
    os << "{\"id\":\"" << inst.id << "\",\"context\":[";
    for (size_t i = 0; i < inst.context.size(); ++i) {
        if (i) os << ',';
        os << inst.context[i];
    }
    os << "],\"query\":" << inst.query << ",\"gt_start\":" << inst.gt.start
       << ",\"gt_end\":" << inst.gt.end << ",\"video_length\":" << inst.video_length << "}";
    return os.str();
}

GroundingInstance instance_from_jsonl(const std::string& line) {
    auto j = nlohmann::json::parse(line);
    GroundingInstance inst;
    inst.id = j.at("id").get<std::string>();
    inst.context = j.at("context").get<std::vector<int>>();
    inst.query = j.at("query").get<int>();
    inst.gt.start = j.at("gt_start").get<int>();
    inst.gt.end = j.at("gt_end").get<int>();
    inst.video_length = j.at("video_length").get<int>();
    return inst;
}

void write_pool(const std::string& path, std::span<const GroundingInstance> pool,
                const std::string& config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open pool file for writing: " + path);
    out << "{\"type\":\"header\",\"config_hash\":\"" << config_hash << "\"}\n";
    for (const auto& inst : pool) out << instance_to_jsonl(inst) << "\n";
}

std::vector<GroundingInstance> read_pool(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open pool file: " + path);
    std::vector<GroundingInstance> pool;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.find("\"type\":\"header\"") != std::string::npos) continue;
        pool.push_back(instance_from_jsonl(line));
    }
    return pool;
}

}  // namespace tgl
