#pragma once

#include "dtb/approx.hpp"
#include "dtb/common.hpp"
#include "dtb/field.hpp"
#include "dtb/linalg.hpp"
#include "dtb/netfam.hpp"

#include <functional>

namespace dtb::evolve {

/// Pointwise right-hand side F[u] = nu*Lap(u) + c1*u + c3*u^3 + c4*u^4.
struct RhsOperator {
    double nu = 0.0, c1 = 0.0, c3 = 0.0, c4 = 0.0;

    static RhsOperator heat(double nu) { return {nu, 0.0, 0.0, 0.0}; }
    static RhsOperator allen_cahn(double nu) { return {nu, 1.0, -1.0, 0.0}; }
    static RhsOperator composite(double nu, double c1, double c3, double c4) {
        return {nu, c1, c3, c4};
    }

    bool needs_laplacian() const { return nu != 0.0; }
    bool is_zero() const { return nu == 0.0 && c1 == 0.0 && c3 == 0.0 && c4 == 0.0; }

    Vector apply(const Vector& u, const Vector& lap) const {
        Vector out = c1 * u + c3 * u.array().cube().matrix() +
                     c4 * u.array().square().square().matrix();
        if (nu != 0.0) out += nu * lap;
        return out;
    }
};

struct UpdatePolicy {
    enum class Kind { fixed, forward, periodic_reset } kind = Kind::fixed;
    int L = 20;  // periodic_reset period
    netfam::RefitOptions refit;
    int refit_iters = 300;
    double refit_step = 1e-3;
};

struct RunReport {
    std::vector<double> times;         // end-of-step times (k+1)*h
    std::vector<double> residual_rel;  // projection residual per step
    std::vector<double> alpha_l2;
    std::vector<double> rel_l2;        // NaN where not probed
    std::vector<double> wall_ms;
    double total_wall_ms = 0.0;

    std::vector<int> reset_steps;           // periodic_reset bookkeeping
    std::vector<double> reset_loss_before;
    std::vector<double> reset_loss_after;

    std::vector<Vector> cumulative_s;  // trapezoidal runs, when recording enabled
};

struct EvolveOptions {
    linalg::LstsqOptions lstsq;
    bool use_gform = false;
    double proj_tol = 5e-2;
    int retry_budget = 3;
    bool redraw_subspace_each_step = false;  // frozen per run by default
    std::uint64_t seed = 0;
    int probe_every = 0;  // 0 = never
    std::function<double(const DtbSet&, double t, int k)> error_probe;
    bool record_cumulative = false;
};

/// Explicit first-order stepping: fit F[u^k] in the tangent subspace of the
/// current basis, advance u, then update the basis per policy.
std::pair<DtbSet, RunReport> forward_euler_run(const netfam::NetworkSpec& spec,
                                               netfam::ParamsPtr theta0, const RhsOperator& rhs,
                                               FieldPtr phi, double T, int K,
                                               const SamplerSpec& sampler, int l,
                                               const UpdatePolicy& policy,
                                               const EvolveOptions& opts);

/// Implicit trapezoidal stepping for the heat equation on a fixed periodic
/// basis: [G + (h/2)A] s^{k+1} = [G - (h/2)A] s^k + b with
/// A = nu/n sum_k (d_k features)^T (d_k features), b = nu/n features^T Lap(phi),
/// and u^k = phi + h * features . s^k.
std::pair<DtbSet, RunReport> trapezoidal_heat_run(const netfam::NetworkSpec& spec,
                                                  netfam::ParamsPtr theta0, double nu, FieldPtr phi,
                                                  double T, int K, const SamplerSpec& sampler,
                                                  int l, const EvolveOptions& opts);

/// Two-stage corrected scheme: a midpoint re-estimate of F with a secondary
/// subspace absorbing the projection residual at both stages; the basis
/// follows theta^{k+1} = theta^k + h*(alpha3 + alpha4).
std::pair<DtbSet, RunReport> ac2d_corrected_run(const netfam::NetworkSpec& spec,
                                                netfam::ParamsPtr theta0, const RhsOperator& rhs,
                                                FieldPtr phi, double T, int K,
                                                const SamplerSpec& sampler, int l1, int l2,
                                                const EvolveOptions& opts);

/// Basis update after step k (0-based): fixed, forward (theta + h*alpha
/// scattered to full length), or a periodic refit to the current solution.
netfam::ParamsPtr apply_policy(const UpdatePolicy& policy, const netfam::NetworkSpec& spec,
                               netfam::ParamsPtr theta, const IndexSet& subspace,
                               const Vector& alpha, double h, int k,
                               const netfam::SampledFunction& current_u, std::uint64_t seed,
                               RunReport* report);

struct TaylorRow {
    double rcond = 0.0;
    double eps_ls = 0.0;   // training-system relative residual
    double alpha_l2 = 0.0;
    std::vector<double> eps_t;  // held-out Taylor-surrogate error per h
};

struct TaylorTable {
    std::vector<double> hs;
    std::vector<TaylorRow> rows;
};

/// rcond sweep on one fitted system plus the parameter-perturbation error
/// (f_{theta+h*alpha} - f_theta)/h vs the target on held-out samples.
TaylorTable taylor_error_study(const netfam::NetworkSpec& spec, const netfam::ParamVec& theta,
                               const netfam::SampledFunction& target,
                               const std::vector<double>& rconds, const std::vector<double>& hs,
                               int n_train, int n_heldout, int l, std::uint64_t seed);

}  // namespace dtb::evolve
