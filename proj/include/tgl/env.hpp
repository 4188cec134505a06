#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgl/rng.hpp"

namespace tgl {

// --- Action vocabulary ---------------------------------------------------
//
// 12 tokens: digits 0..9, SEP ("to"), EOS. Dense ids 0..11.
namespace vocab {
constexpr int kSep = 10;
constexpr int kEos = 11;
constexpr int kSize = 12;
inline bool is_digit(int t) { return t >= 0 && t <= 9; }
}  // namespace vocab

using Token = int;

// Inclusive bin interval [start, end]; length = end - start + 1.
struct TemporalInterval {
    int start = 0;
    int end = 0;

    int length() const { return end - start + 1; }
    bool operator==(const TemporalInterval&) const = default;
};

struct EnvConfig {
    int video_length = 20;
    int n_symbols = 4;
    int min_span = 3;
    int max_span = 6;
};

// One synthetic video/query pair. The context holds exactly one maximal run
// of the query symbol and that run is the ground-truth interval.
struct GroundingInstance {
    std::string id;
    std::vector<int> context;
    int query = 0;
    TemporalInterval gt;
    int video_length = 0;
};

struct EvalReport {
    std::map<double, double> recall_at;
    double mean_iou = 0.0;
    int n_instances = 0;
};

// Number of digits needed to spell the largest bin index, e.g. 2 for video_length 20.
int digits_for(int video_length);

GroundingInstance generate_instance(uint64_t seed, const EnvConfig& cfg);

// Copy of an instance whose gt annotation is shifted by a nonzero offset in
// [-max_shift, max_shift] derived from the instance id. The context is left
// untouched, so the copy mimics an imprecisely annotated sample; supervised
// warmups on such copies yield well-formatted but imprecise base models.
GroundingInstance jitter_annotation(const GroundingInstance& inst, int max_shift);
std::vector<GroundingInstance> jitter_pool(std::span<const GroundingInstance> pool,
                                           int max_shift);

// Grammar D{1..max_digits} SEP D{1..max_digits} EOS, digits concatenating
// base-10. Returns nullopt (a value, not an error) on any violation,
// start > end, or end >= video_length; trainers score failures as reward 0.
std::optional<TemporalInterval> decode_trajectory(std::span<const Token> tokens,
                                                  int video_length, int max_digits);

// Canonical token encoding of an interval: minimal digits, SEP, minimal digits, EOS.
std::vector<Token> encode_interval(const TemporalInterval& iv);

double iou(const TemporalInterval& a, const TemporalInterval& b);

// iou * (1 - (|ds| + |de|) / (2 L)), clamped to [0,1]. The boundary-deviation
// factor keeps the reward comparable to plain IoU while penalizing offsets.
double timestamp_aware_iou(const TemporalInterval& pred, const TemporalInterval& gt,
                           int video_length);

EvalReport evaluate(std::span<const std::optional<TemporalInterval>> predictions,
                    std::span<const TemporalInterval> gts,
                    std::span<const double> thresholds);

// --- Pool serialization (JSONL, byte-stable field order) ------------------

std::string instance_to_jsonl(const GroundingInstance& inst);
GroundingInstance instance_from_jsonl(const std::string& line);

void write_pool(const std::string& path, std::span<const GroundingInstance> pool,
                const std::string& config_hash);
std::vector<GroundingInstance> read_pool(const std::string& path);

}  // namespace tgl
