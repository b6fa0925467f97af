#pragma once

#include "dtb/approx.hpp"
#include "dtb/common.hpp"
#include "dtb/linalg.hpp"
#include "dtb/netfam.hpp"

#include <functional>
#include <optional>

namespace dtb::wflow {

/// Particle representation of a pushforward measure: X^k = T^k(Z) with the
/// reference samples Z retained; Lambda carries velocities for Hamiltonian
/// dynamics.
struct ParticleEnsemble {
    Matrix X;
    std::optional<Matrix> Lambda;
    Matrix Z;

    int count() const { return static_cast<int>(X.rows()); }
    int dim() const { return static_cast<int>(X.cols()); }
};

/// Radial interaction kernel J(|z|) with gradient (J'(r)/r) * z; the ratio is
/// supplied directly so the gradient stays finite at the origin.
struct InteractionKernel {
    std::function<double(double)> profile;          // J(r)
    std::function<double(double)> dprofile_over_r;  // J'(r) / r

    /// |z|^4/4 - |z|^2/2; J'(r)/r = r^2 - 1, grad vanishes at 0.
    static InteractionKernel aggregation();
};

struct LinearPotential {
    std::function<double(const Eigen::RowVectorXd&)> value;
    std::function<Eigen::RowVectorXd(const Eigen::RowVectorXd&)> grad;

    /// V = (3/8) z1^2 + 1/2 sum_{i>=2} zi^2 in dimension d.
    static LinearPotential harmonic_10d(int d = 10);
};

/// drift_i = -(1/N) sum_j grad J(X_i - X_j); the self term vanishes for
/// kernels with grad J(0) = 0. O(N^2) pairwise evaluation.
Matrix interaction_drift(const InteractionKernel& kernel, const Matrix& X);

/// Interaction energy (1/2N^2) sum_ij J(|X_i - X_j|).
double interaction_energy(const InteractionKernel& kernel, const Matrix& X);

/// Ensemble Hamiltonian (1/2N) sum |Lambda_i|^2 + (1/N) sum V(X_i).
double ensemble_hamiltonian(const LinearPotential& V, const ParticleEnsemble& ens);

/// Empirical rho-weighted tangent system at the particle positions:
/// features stacked (N*d) x l and G = features^T features / N.
struct WeightedSystem {
    Matrix features;
    Matrix G;
};
WeightedSystem weighted_tangent_system(const netfam::NetworkSpec& spec,
                                       const netfam::ParamVec& theta, const IndexSet& subspace,
                                       const Matrix& X);

struct FlowOptions {
    linalg::LstsqOptions lstsq;
    bool use_gform = true;  // the rho-weighted metric route
    enum class Policy { fixed, forward } policy = Policy::fixed;
};

struct StepStats {
    double residual_rel = 0.0;
    double alpha_l2 = 0.0;
};

/// One explicit step of the projected interaction flow:
/// X += h * K_rho[-grad(J * rho)](X).
StepStats wgf_step(const netfam::NetworkSpec& spec, netfam::ParamsPtr& theta,
                   const IndexSet& subspace, ParticleEnsemble& ens, const InteractionKernel& kernel,
                   double h, const FlowOptions& opts);

/// Unprojected reference step used by comparisons: X += h * drift(X).
void plain_particle_step(ParticleEnsemble& ens, const InteractionKernel& kernel, double h);

/// One step of the projected Hamiltonian flow: the acceleration field
/// K_rho[-grad V](X^k) updates Lambda explicitly, X by the velocity average.
StepStats whf_step(const netfam::NetworkSpec& spec, netfam::ParamsPtr& theta,
                   const IndexSet& subspace, ParticleEnsemble& ens, const LinearPotential& V,
                   double h, const FlowOptions& opts);

/// Mean and standard deviation of particle distances to a center.
std::pair<double, double> radius_stats(const Matrix& X, const Eigen::RowVectorXd& center);

}  // namespace dtb::wflow
