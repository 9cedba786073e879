#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace ideodepth {

/// Seeded generator with portable draws.
///
/// The standard distributions are implementation-defined, so every draw here
/// is computed from raw 64-bit engine output. Runs with the same seed produce
/// identical streams on any conforming toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    /// Independent stream for a named consumer, e.g. substream(root, "irt").
    static Rng substream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform integer on [0, bound).
    std::uint64_t below(std::uint64_t bound);
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }
    /// Gamma(shape, 1) by Marsaglia-Tsang.
    double gamma(double shape);
    double beta(double a, double b);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// SplitMix64 finalizer; used to derive seeds.
std::uint64_t mix_seed(std::uint64_t x);
/// FNV-1a over bytes.
std::uint64_t hash_name(std::string_view name);

}  // namespace ideodepth
