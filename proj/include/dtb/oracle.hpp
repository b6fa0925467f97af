#pragma once

#include "dtb/common.hpp"
#include "dtb/field.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dtb::oracle {

/// Uniform periodic grid on [-1,1]^d, d in {1,2}; modes per dimension must be
/// a power of two >= 16. Point index is ix*M + iy in 2-D (row-major).
struct SpectralGrid {
    int dim = 1;
    int modes = 64;

    int count() const;
    Matrix points() const;
};

enum class SpectralNonlinearity { none, allen_cahn };

enum class SpectralRule {
    strang_exact,     // exact diffusion factor, explicit RK2 reaction (IMEX default)
    crank_nicolson,   // heat only; matched trapezoidal time stepping
    forward_euler,    // heat only; matched explicit time stepping
};

struct SpectralRun {
    std::vector<double> times;
    std::vector<Vector> fields;  // grid values per snapshot
    bool aliasing_warning = false;
    double tail_fraction = 0.0;
};

/// Evolves d/dt u = nu*Lap(u) [+ u - u^3] on the periodic grid.
/// snapshot_times must align with the step grid to 1e-9.
SpectralRun spectral_evolve(const SpectralGrid& grid, double nu, SpectralNonlinearity nonlin,
                            const Vector& phi_on_grid, double T, int steps,
                            const std::vector<double>& snapshot_times,
                            SpectralRule rule = SpectralRule::strang_exact);

/// One heat step under a matched time rule; used for per-step gap probes.
Vector spectral_one_step(const SpectralGrid& grid, double nu, const Vector& field, double h,
                         SpectralRule rule);

/// Runs (M, steps) and (2M, 2*steps) and requires snapshots to agree to
/// `gate` relative before accepting the coarse run as a reference. Results
/// are cached as CSV under cache_dir keyed by a digest of the setup when
/// cache_dir is nonempty.
SpectralRun self_converged_reference(const SpectralGrid& grid, double nu,
                                     SpectralNonlinearity nonlin, const ScalarField& phi, double T,
                                     int steps, const std::vector<double>& snapshot_times,
                                     SpectralRule rule, double gate = 1e-6,
                                     const std::string& cache_dir = "", const std::string& phi_id = "");

/// Per-coordinate harmonic oscillator x'' = -omega^2 x.
void ho_closed_form(const Vector& x0, const Vector& v0, const Vector& omega, double t, Vector& x,
                    Vector& v);

/// High-order adaptive integration of du/dt = f(u) to relative/absolute
/// tolerance `tol`.
double scalar_ode_oracle(const std::function<double(double)>& f, double u0, double T,
                         double tol = 1e-10);

/// Minimum-norm least squares via a hand-rolled one-sided Jacobi SVD with a
/// hard 1e-12 * sigma_max cutoff. Shares no code with the linalg module.
Vector pinv_oracle(const Matrix& A, const Vector& b);

}  // namespace dtb::oracle
