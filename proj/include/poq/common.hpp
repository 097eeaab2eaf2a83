#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace poq {

// Bad user-supplied configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad data encountered at runtime (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Set of class indices, kept sorted and duplicate-free.
using LabelSet = std::vector<int>;

inline LabelSet make_label_set(std::vector<int> classes) {
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    return classes;
}

inline bool label_set_contains(const LabelSet& set, int cls) {
    return std::binary_search(set.begin(), set.end(), cls);
}

// splitmix64; used to derive independent RNG streams from a base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(mix_seed(a) ^ (0x9e3779b97f4a7c15ull + b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> dist(lo, hi);
        return dist(engine_);
    }

    // Uniform integer in [lo, hi], inclusive.
    long uniform_int(long lo, long hi) {
        std::uniform_int_distribution<long> dist(lo, hi);
        return dist(engine_);
    }

    double gamma(double alpha) {
        std::gamma_distribution<double> dist(alpha, 1.0);
        return dist(engine_);
    }

    // Beta(alpha, alpha) via the ratio of two gamma draws.
    double beta_symmetric(double alpha) {
        double x = gamma(alpha);
        double y = gamma(alpha);
        double s = x + y;
        return s > 0.0 ? x / s : 0.5;
    }

    template <typename It>
    void shuffle(It first, It last) {
        std::shuffle(first, last, engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// FNV-1a, used to fingerprint batch streams.
inline std::uint64_t fnv1a_update(std::uint64_t h, std::uint64_t value) {
    for (int i = 0; i < 8; ++i) {
        h ^= (value >> (8 * i)) & 0xffull;
        h *= 0x100000001b3ull;
    }
    return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

} // namespace poq
