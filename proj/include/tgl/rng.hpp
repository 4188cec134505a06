#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace tgl {

// Counter-free splittable RNG. Every consumer derives its own stream from
// (seed, purpose, indices...), so results never depend on execution order
// or thread count. Generation itself is splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [0, n). Rejection-free modulo is fine at our n (<= a few thousand).
    int next_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

    double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Index drawn from an unnormalized weight vector by CDF scan.
    int next_weighted(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = next_unit() * total;
        double acc = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

private:
    uint64_t state_;
};

inline uint64_t mix_u64(uint64_t h, uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Stream ids. Keeping them in one place makes collisions auditable.
enum class Stream : uint64_t {
    pool_gen = 1,
    rollout = 2,
    teacher_sample = 3,
    epoch_shuffle = 4,
    param_init = 5,
    curriculum = 6,
    analysis = 7,
};

inline Rng derive_rng(uint64_t seed, Stream stream, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = mix_u64(seed, static_cast<uint64_t>(stream));
    h = mix_u64(h, a);
    h = mix_u64(h, b);
    h = mix_u64(h, c);
    return Rng(h);
}

}  // namespace tgl
