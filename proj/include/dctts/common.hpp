#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dctts {

// User-facing error taxonomy. The CLI maps these onto exit codes:
// ConfigError/InputError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Counter-based RNG. Every draw is a pure function of (seed, stream, a, b, c),
// so results do not depend on evaluation order or thread count.
namespace rng {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = splitmix64(seed ^ 0x2545f4914f6cdd1dULL);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// uniform in [0, 1)
inline double uniform(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    return static_cast<double>(mix(seed, a, b, c) >> 11) * 0x1.0p-53;
}

inline double normal(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    // Box-Muller from two keyed uniforms.
    double u1 = uniform(seed, a, b, 2 * c);
    double u2 = uniform(seed, a, b, 2 * c + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline uint64_t below(uint64_t n, uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    return mix(seed, a, b, c) % n;
}

}  // namespace rng

// Sequential convenience wrapper over the counter RNG, for places where a
// stream of draws is natural (parameter init, corpus synthesis).
class SeqRng {
public:
    explicit SeqRng(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    double uniform() { return rng::uniform(seed_, stream_, counter_++); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return mean + stddev * rng::normal(seed_, stream_, counter_++);
    }
    uint64_t below(uint64_t n) { return rng::below(n, seed_, stream_, counter_++); }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t stream_;
    uint64_t counter_ = 0;
};

}  // namespace dctts
