#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace mvit {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_label(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent stream seed from (seed, purpose, indices...). Streams keyed this way
/// make results independent of the order in which samples are visited.
inline std::uint64_t substream(std::uint64_t seed, std::string_view purpose,
                               std::initializer_list<std::uint64_t> keys = {}) {
    std::uint64_t h = mix64(seed ^ mix64(hash_label(purpose)));
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::string_view purpose,
                    std::initializer_list<std::uint64_t> keys = {}) {
    return Rng(substream(seed, purpose, keys));
}

/// Uniform double in [0, 1) built from the top 53 bits; identical across standard libraries.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller. Avoids std::normal_distribution, whose output is
/// implementation-defined.
double standard_normal(Rng& rng);

/// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
double truncated_normal(Rng& rng, double std);

/// Gamma(shape, 1) by Marsaglia-Tsang.
double gamma_sample(Rng& rng, double shape);

/// Beta(a, b) from two gamma draws.
double beta_sample(Rng& rng, double a, double b);

}  // namespace mvit
