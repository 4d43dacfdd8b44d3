#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "tgir/uvfield.hpp"

namespace tgir {

/// Seeded generator with a portable normal sampler (std::normal_distribution is
/// implementation-defined, which would break cross-toolchain reproducibility).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi_inclusive) {
        const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
        return lo + static_cast<int>(engine_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    void fill_normal(UVField& f) {
        for (double& v : f.data()) v = normal();
    }

    /// Independent child stream, e.g. one per view or per training worker.
    Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline UVField normal_field(int h, int w, int c, Rng& rng) {
    UVField f(h, w, c);
    rng.fill_normal(f);
    return f;
}

}  // namespace tgir
