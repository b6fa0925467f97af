#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtb {

// Row-major to match the documented on-disk layout of matrices.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Errc {
    non_finite,
    empty_system,
    not_symmetric,
    index_out_of_range,
    non_smooth_activation,
    bad_size,
    projection_failure,
    config_error,
    step_failure,
    dimension_mismatch,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

// SplitMix64; used to derive independent sub-streams from a run seed.
inline std::uint64_t hash_mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return hash_mix(base ^ hash_mix(salt));
}

inline std::uint64_t derive_seed(std::uint64_t base, const std::string& label) {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return derive_seed(base, h);
}

// FNV-1a over raw bytes; used for artifact digests and subspace digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(std::uint64_t v);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double sd = 1.0) {
        return std::normal_distribution<double>(mean, sd)(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }
    std::mt19937_64& engine() { return gen_; }

    // pts is n x d; rows filled in sample order.
    Matrix uniform_box(int n, int d, double half_width = 1.0);
    Matrix gaussian(int n, int d, double sd = 1.0);

private:
    std::mt19937_64 gen_;
};

struct SamplerSpec {
    // `grid` is an equispaced cell-centered tensor grid (deterministic);
    // the natural quadrature for periodic integrands.
    enum class Kind { uniform_box, gaussian, grid } kind = Kind::uniform_box;
    int dim = 1;
    int count = 1000;  // for grid: rounded down to a per-dimension resolution
    double scale = 1.0;  // box half-width or standard deviation
    Eigen::RowVectorXd mean;  // gaussian only; empty = origin

    Matrix draw(std::uint64_t seed) const;
};

}  // namespace dtb
