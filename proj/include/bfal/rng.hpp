#ifndef BFAL_RNG_HPP
#define BFAL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace bfal {

// splitmix64 finalizer; used to derive independent stream seeds from a base
// seed plus an arbitrary number of integer tags.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base) { return mix_seed(base); }

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, Tags... rest) {
    return derive_seed(mix_seed(base ^ mix_seed(tag)), rest...);
}

// Deterministic RNG stream. Distributions are implemented by hand (rather
// than through std::*_distribution) so that two builds of this library
// produce identical draws for identical seeds.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    // Fresh independent stream derived from this stream's seed and tags.
    // Does not consume state from this stream.
    template <typename... Tags>
    Rng stream(std::uint64_t tag, Tags... rest) const {
        return Rng(derive_seed(seed_, tag, rest...));
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Marsaglia polar method with one cached deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double mul = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * mul;
        has_spare_ = true;
        return u * mul;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();  // rejection avoids modulo bias
        } while (x >= limit);
        return x % n;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named substreams so the call sites stay legible.
namespace stream_tag {
constexpr std::uint64_t kTestSet = 1;
constexpr std::uint64_t kInitialDesign = 2;
constexpr std::uint64_t kTraining = 3;
constexpr std::uint64_t kAcquisition = 4;
constexpr std::uint64_t kOracle = 5;
constexpr std::uint64_t kCandidatePool = 6;
constexpr std::uint64_t kTestPoints = 7;
constexpr std::uint64_t kJitter = 8;
constexpr std::uint64_t kRandomPick = 9;
constexpr std::uint64_t kInducing = 10;
constexpr std::uint64_t kRestart = 11;
}  // namespace stream_tag

}  // namespace bfal

#endif  // BFAL_RNG_HPP
