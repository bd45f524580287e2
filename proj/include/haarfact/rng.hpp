#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

#include "rational.hpp"

namespace haarfact {

// splitmix64 step; used to derive independent per-item seeds so that results
// do not depend on how work is split across threads.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// mt19937_64 wrapper with draw helpers that avoid std::uniform_* distributions
// (their output is implementation defined; these are pinned by the engine).
struct Rng {
    std::mt19937_64 eng;

    explicit Rng(uint64_t seed) : eng(seed) {}

    uint64_t u64() { return eng(); }

    uint64_t below(uint64_t n) { return n ? u64() % n : 0; }

    int sign() { return (u64() & 1) ? 1 : -1; }

    // uniform in [0,1)
    double unit() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    double gauss() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = unit();
        double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // dyadic rational k/2^bits with |value| <= 1
    Rational dyadic(int bits) {
        long long span = 1LL << bits;
        long long k = static_cast<long long>(below(static_cast<uint64_t>(2 * span + 1))) - span;
        return Rational(k) / Rational(span);
    }
};

// Deterministic fork-join map: slot i always receives fn(i), independent of
// the number of threads.
template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    unsigned workers = jobs;
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace haarfact
