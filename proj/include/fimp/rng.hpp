#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace fimp {

/// Counter-based deterministic random stream.
///
/// Every stochastic consumer in the system derives its own stream from
/// (seed, purpose, a, b) -- e.g. (seed, "train.shuffle", client_id, round) --
/// so results never depend on execution order or worker count. The generator
/// is a splitmix64-style bijective mix of a per-stream key and a draw
/// counter; identical keys replay identical sequences on any platform.
class RngStream {
public:
    RngStream() : key_(mix(0)) {}

    static RngStream derive(std::uint64_t seed, std::string_view purpose,
                            std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t k = mix(seed ^ 0x5851f42d4c957f2dULL);
        k = mix(k ^ fnv1a(purpose));
        k = mix(k ^ (a + 0x9e3779b97f4a7c15ULL));
        k = mix(k ^ (b + 0xd1b54a32d192ed03ULL));
        RngStream s;
        s.key_ = k;
        return s;
    }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

    /// Standard normal via Box-Muller; consumes exactly two raw draws.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang, with the standard boost for
    /// alpha < 1. Draw count varies (rejection sampling); streams are
    /// private to one consumer so this cannot break determinism.
    double next_gamma(double alpha) {
        if (alpha < 1.0) {
            double u = next_double();
            if (u <= 0.0) u = 0x1.0p-53;
            return next_gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = next_normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

} // namespace fimp
