#include "dtb/targets.hpp"

#include "dtb/jet.hpp"

#include <cmath>

namespace dtb::targets {

namespace {

Jet2 wtilde(const std::vector<Jet2>& z) {
    auto c = [&](int i) { return cos(M_PI * z[i - 1]); };
    auto s = [&](int i) { return sin(M_PI * z[i - 1]); };
    return sqr(c(1)) + s(2) * sqr(s(2)) + 1.5 * sqr(s(1)) * c(5) +
           3.0 * (1.0 - exp(s(2))) / (1.0 + exp(c(4))) + 2.0 * s(1) * c(3) +
           log(2.0 + c(4) * sqr(s(1))) / exp(c(5) + 0.3 * s(4)) +
           3.0 * log(3.0 + c(2) + s(5)) / (3.0 + s(3));
}

}  // namespace

FieldPtr w5_field() {
    return std::make_shared<ClosedFormField>(5, [](const std::vector<Jet2>& z) {
        return -1.0 + 2.0 * (wtilde(z) + 6.0) / 13.0;
    });
}

FieldPtr heat_initial_2d() {
    return std::make_shared<ClosedFormField>(2, [](const std::vector<Jet2>& z) {
        Jet2 s1 = sin(M_PI * z[0]);
        Jet2 s2 = sin(M_PI * z[1]);
        return (exp(3.0 * s1 + s2) + exp(-3.0 * s1 + s2) - exp(3.0 * s1 - s2) -
                exp(-3.0 * s1 - s2)) / 100.0;
    });
}

FieldPtr sine_eigen(int dim, int axis) {
    if (axis < 0 || axis >= dim) fail(Errc::bad_size, "sine_eigen axis out of range");
    return std::make_shared<ClosedFormField>(
        dim, [axis](const std::vector<Jet2>& z) { return sin(M_PI * z[axis]); });
}

netfam::SampledFunction operator_on_w(const evolve::RhsOperator& op) {
    FieldPtr w = w5_field();
    return [w, op](const Matrix& pts) {
        Vector val, lap;
        Matrix grad;
        w->derivs_batch(pts, val, grad, lap);
        return op.apply(val, lap);
    };
}

netfam::SampledFunction field_values(FieldPtr f) {
    return [f](const Matrix& pts) { return f->values(pts); };
}

HyperplaneGrid hyperplane_points(char which, int resolution) {
    if (resolution < 2) fail(Errc::bad_size, "hyperplane resolution must be >= 2");
    using Row5 = Eigen::Matrix<double, 1, 5>;
    Row5 c = Row5::Zero(), a = Row5::Zero(), b = Row5::Zero();
    switch (which) {
        case 'a':  // -z1 = z2, z4 = (z2 - z5)/2, z3 = 0; free (z2, z5)
            a << -1, 1, 0, 0.5, 0;
            b << 0, 0, 0, -0.5, 1;
            break;
        case 'b':  // z5 = (z1 + z3)/2, z2 = z4 = 0; free (z1, z3)
            a << 1, 0, 0, 0, 0.5;
            b << 0, 0, 1, 0, 0.5;
            break;
        case 'c':  // z1 = z2 = 0.3, z5 = 0.15 - z3/2; free (z3, z4)
            c << 0.3, 0.3, 0, 0, 0.15;
            a << 0, 0, 1, 0, -0.5;
            b << 0, 0, 0, 1, 0;
            break;
        case 'd':  // z1 = 0.4 z4 + 0.6 z5, z2 = z3 = 0.8; free (z4, z5)
            c << 0, 0.8, 0.8, 0, 0;
            a << 0.4, 0, 0, 1, 0;
            b << 0.6, 0, 0, 0, 1;
            break;
        case 'e':  // z2 = 0.75 z1 + 0.25 z5, z4 = 0.25 z1 + 0.75 z5, z3 = 0.5; free (z1, z5)
            c << 0, 0, 0.5, 0, 0;
            a << 1, 0.75, 0, 0.25, 0;
            b << 0, 0.25, 0, 0.75, 1;
            break;
        default:
            fail(Errc::config_error, std::string("unknown hyperplane: ") + which);
    }

    // Largest symmetric box [-beta, beta]^2 of free parameters keeping every
    // coordinate inside [-1, 1], capped at 1.
    double beta = 1.0;
    for (int i = 0; i < 5; ++i) {
        const double denom = std::abs(a(i)) + std::abs(b(i));
        if (denom > 0.0) beta = std::min(beta, (1.0 - std::abs(c(i))) / denom);
    }

    HyperplaneGrid grid;
    grid.which = which;
    grid.resolution = resolution;
    grid.free_lo = -beta;
    grid.free_hi = beta;
    grid.axes = {a, b};
    grid.offset = c;
    grid.points.resize(static_cast<Eigen::Index>(resolution) * resolution, 5);
    for (int i = 0; i < resolution; ++i) {
        const double s = -beta + 2.0 * beta * i / (resolution - 1);
        for (int j = 0; j < resolution; ++j) {
            const double t = -beta + 2.0 * beta * j / (resolution - 1);
            grid.points.row(static_cast<Eigen::Index>(i) * resolution + j) = c + s * a + t * b;
        }
    }
    return grid;
}

}  // namespace dtb::targets
