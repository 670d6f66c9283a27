#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace imm {

// Seeded generator whose output is identical across standard libraries:
// mt19937_64 is fully specified, and the derived draws below avoid the
// implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    // Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    double normal(double mean, double stddev);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace imm
