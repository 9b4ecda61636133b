#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vscg/error.hpp"

namespace vscg {

/// Seedable random stream threaded explicitly through initialization, dropout
/// and data synthesis. Derives doubles from raw mt19937_64 output so that the
/// sequence does not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Standard normal via Box-Muller (cosine branch only).
    double normal() {
        double u1 = 1.0 - uniform01(); // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Uniform index in [0, n). Rejection sampling keeps the draw unbiased.
    std::size_t index(std::size_t n) {
        if (n == 0) throw ContractError("Rng::index requires n >= 1");
        const std::uint64_t n64 = n;
        const std::uint64_t max64 = std::numeric_limits<std::uint64_t>::max();
        const std::uint64_t rem = (max64 % n64 + 1) % n64;
        const std::uint64_t bound = max64 - rem; // inclusive
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x > bound);
        return static_cast<std::size_t>(x % n64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void load_state(const std::string& state) {
        std::istringstream is(state);
        is >> gen_;
        if (!is) throw FormatError("invalid rng state string");
    }

private:
    std::mt19937_64 gen_;
};

} // namespace vscg
