#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace crisp {

// Seeded random source. The engine is std::mt19937_64; the distributions are
// written out here instead of using <random>'s, whose output is
// implementation-defined, so that seeded artifacts are identical across
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(mix(seed)) {}

    // Independent stream for (seed, a, b): used to give every training step or
    // every query its own generator without threading state through callers.
    static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        return Rng(mix(seed ^ mix(a + 0x9e3779b97f4a7c15ULL) ^ mix(b * 0xbf58476d1ce4e5b9ULL + 1)));
    }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do { x = engine_(); } while (x >= limit);
        return x % n;
    }
    int uniform_int(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo) + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; the second variate is discarded so the
    // state after each call depends only on the number of calls.
    double normal();

    std::uint64_t fork_seed() { return engine_(); }

    std::string serialize() const;
    void deserialize(const std::string& text);

    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace crisp
