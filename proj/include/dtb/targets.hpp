#pragma once

#include "dtb/common.hpp"
#include "dtb/evolve.hpp"
#include "dtb/field.hpp"
#include "dtb/netfam.hpp"

#include <array>
#include <string>

namespace dtb::targets {

/// The 5-D benchmark target w: [-1,1]^5 -> [-1,1], a normalized blend of
/// trigonometric, rational, exponential and logarithmic terms.
FieldPtr w5_field();

/// 2-D heat/Allen-Cahn initial condition
/// (exp(3 s1 + s2) + exp(-3 s1 + s2) - exp(3 s1 - s2) - exp(-3 s1 - s2))/100
/// with s_i = sin(pi z_i); 2-periodic and odd-symmetric.
FieldPtr heat_initial_2d();

/// sin(pi * z_axis) in `dim` dimensions; heat eigenfunction with eigenvalue
/// -pi^2 under the Laplacian.
FieldPtr sine_eigen(int dim, int axis = 0);

/// Pointwise operator applied to w via exact jets:
/// z -> nu*Lap(w) + c1*w + c3*w^3 + c4*w^4.
netfam::SampledFunction operator_on_w(const evolve::RhsOperator& op);

/// Plain values of a field as a sampled-function target.
netfam::SampledFunction field_values(FieldPtr f);

/// One of the five 2-D affine slices of [-1,1]^5. The admissible symmetric
/// free-parameter box is computed from the affine map so every emitted point
/// stays inside the unit box.
struct HyperplaneGrid {
    char which = 'a';
    int resolution = 0;
    Matrix points;                      // resolution^2 x 5
    double free_lo = -1.0, free_hi = 1.0;
    std::array<Eigen::Matrix<double, 1, 5>, 2> axes;  // direction per free parameter
    Eigen::Matrix<double, 1, 5> offset;
};

HyperplaneGrid hyperplane_points(char which, int resolution);

}  // namespace dtb::targets
