#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace rotpretext {

// Extents along (T, H, W), used for kernels, strides and paddings.
using Dims3 = std::array<int, 3>;

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-format violations carry a kind so callers can distinguish a wrong
// magic from a short read from absurd extents.
struct FormatError : std::runtime_error {
    enum class Kind { BadMagic, Truncated, ExtentOverflow, BadValue };
    Kind kind;
    FormatError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Deterministic 64-bit seedable generator. All randomness in the project
// flows through this type; identical seed => identical sample stream.
// Distributions are hand-rolled on top of the raw 64-bit draws so streams
// do not depend on the standard library's unspecified distribution
// algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n); n must be positive.
    std::size_t uniform_index(std::size_t n) {
        std::size_t i = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return i >= n ? n - 1 : i;
    }

    // Fisher-Yates; std::shuffle is not reproducible across library versions.
    template <class It>
    void shuffle(It first, It last) {
        const std::size_t n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(first[i - 1], first[uniform_index(i)]);
        }
    }

    // Derives an independent stream from this generator's seed. Used to give
    // every (iteration, slot) pair its own reproducible stream.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

std::string shape_to_string(const std::vector<int>& shape);

// Worker cap for intra-op parallelism. 1 (the default) runs everything on
// the calling thread; results are bit-identical for any setting because
// each output element is computed by exactly one worker.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over [0, n) split into contiguous chunks.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace rotpretext
