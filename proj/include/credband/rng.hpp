#pragma once

// Random number plumbing. Distributions come from Boost.Random because their
// algorithms are fixed by the library (unlike std:: distributions, whose
// output is implementation-defined), which keeps CSV outputs bit-identical
// across standard libraries.

#include <cstdint>
#include <initializer_list>
#include <random>

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/student_t_distribution.hpp>
#include <boost/random/uniform_01.hpp>

namespace credband {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based stream derivation: the seed depends only on the tuple, never
/// on the order in which streams are requested.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

/// Roles distinguish independent streams belonging to the same replication.
enum class StreamRole : std::uint64_t { Data = 1, Posterior = 2, Auxiliary = 3 };

inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t n, std::uint64_t rep,
                                 StreamRole role) {
    return derive_seed({master, n, rep, static_cast<std::uint64_t>(role)});
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Gamma(shape, scale=1).
    double gamma(double shape) {
        boost::random::gamma_distribution<double> g(shape, 1.0);
        return g(engine_);
    }
    /// Inverse gamma with shape a and scale b: b / Gamma(a, 1).
    double inverse_gamma(double shape, double scale) { return scale / gamma(shape); }
    double student_t(double dof) {
        boost::random::student_t_distribution<double> t(dof);
        return t(engine_);
    }
    double rademacher() { return (engine_() >> 63) ? 1.0 : -1.0; }

    Engine& engine() { return engine_; }

private:
    Engine engine_;
    boost::random::normal_distribution<double> normal_{0.0, 1.0};
    boost::random::uniform_01<double> uniform_;
};

}  // namespace credband
