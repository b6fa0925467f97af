#include "dtb/common.hpp"

#include <cstdio>

namespace dtb {

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

Matrix Rng::uniform_box(int n, int d, double half_width) {
    Matrix pts(n, d);
    std::uniform_real_distribution<double> dist(-half_width, half_width);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pts(i, j) = dist(gen_);
    return pts;
}

Matrix Rng::gaussian(int n, int d, double sd) {
    Matrix pts(n, d);
    std::normal_distribution<double> dist(0.0, sd);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pts(i, j) = dist(gen_);
    return pts;
}

Matrix SamplerSpec::draw(std::uint64_t seed) const {
    if (kind == Kind::grid) {
        const int per_dim = std::max(2, static_cast<int>(std::floor(
                                std::pow(static_cast<double>(count), 1.0 / dim) + 1e-9)));
        int total = 1;
        for (int k = 0; k < dim; ++k) total *= per_dim;
        Matrix pts(total, dim);
        for (int i = 0; i < total; ++i) {
            int rem = i;
            for (int k = dim - 1; k >= 0; --k) {
                const int idx = rem % per_dim;
                rem /= per_dim;
                pts(i, k) = scale * (-1.0 + 2.0 * (idx + 0.5) / per_dim);
            }
        }
        return pts;
    }
    Rng rng(seed);
    Matrix pts = (kind == Kind::uniform_box) ? rng.uniform_box(count, dim, scale)
                                             : rng.gaussian(count, dim, scale);
    if (kind == Kind::gaussian && mean.size() == dim) pts.rowwise() += mean;
    return pts;
}

}  // namespace dtb
