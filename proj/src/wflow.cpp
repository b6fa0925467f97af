#include "dtb/wflow.hpp"

#include <cmath>

namespace dtb::wflow {

InteractionKernel InteractionKernel::aggregation() {
    InteractionKernel k;
    k.profile = [](double r) {
        const double r2 = r * r;
        return 0.25 * r2 * r2 - 0.5 * r2;
    };
    k.dprofile_over_r = [](double r) { return r * r - 1.0; };
    return k;
}

LinearPotential LinearPotential::harmonic_10d(int d) {
    LinearPotential p;
    p.value = [d](const Eigen::RowVectorXd& z) {
        double v = 3.0 / 8.0 * z(0) * z(0);
        for (int i = 1; i < d; ++i) v += 0.5 * z(i) * z(i);
        return v;
    };
    p.grad = [d](const Eigen::RowVectorXd& z) {
        Eigen::RowVectorXd g(d);
        g(0) = 0.75 * z(0);
        for (int i = 1; i < d; ++i) g(i) = z(i);
        return g;
    };
    return p;
}

Matrix interaction_drift(const InteractionKernel& kernel, const Matrix& X) {
    const int N = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    if (N < 2) fail(Errc::bad_size, "interaction drift needs N >= 2");
    Matrix drift = Matrix::Zero(N, d);
    for (int i = 0; i < N; ++i) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
        for (int j = 0; j < N; ++j) {
            const Eigen::RowVectorXd dz = X.row(i) - X.row(j);
            acc += kernel.dprofile_over_r(dz.norm()) * dz;
        }
        drift.row(i) = -acc / N;
    }
    return drift;
}

double interaction_energy(const InteractionKernel& kernel, const Matrix& X) {
    const int N = static_cast<int>(X.rows());
    double e = 0.0;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) e += kernel.profile((X.row(i) - X.row(j)).norm());
    return 0.5 * e / (static_cast<double>(N) * N);
}

double ensemble_hamiltonian(const LinearPotential& V, const ParticleEnsemble& ens) {
    if (!ens.Lambda) fail(Errc::bad_size, "hamiltonian needs velocities");
    const int N = ens.count();
    double h = 0.5 * ens.Lambda->squaredNorm() / N;
    for (int i = 0; i < N; ++i) h += V.value(ens.X.row(i)) / N;
    return h;
}

WeightedSystem weighted_tangent_system(const netfam::NetworkSpec& spec,
                                       const netfam::ParamVec& theta, const IndexSet& subspace,
                                       const Matrix& X) {
    if (spec.output_dim != X.cols())
        fail(Errc::dimension_mismatch, "vector-valued network must match particle dimension");
    netfam::TangentBlock tb = netfam::tangent_features(spec, theta, X, subspace.indices, false);
    WeightedSystem sys;
    sys.G = (tb.features.transpose() * tb.features) / static_cast<double>(X.rows());
    sys.features = std::move(tb.features);
    return sys;
}

namespace {

// Rows of `target` are per-particle vectors; flattens to the feature-row
// ordering (sample-major, component within).
Vector flatten_rows(const Matrix& target) {
    Vector out(target.size());
    const int N = static_cast<int>(target.rows());
    const int d = static_cast<int>(target.cols());
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < d; ++c) out(i * d + c) = target(i, c);
    return out;
}

Matrix unflatten_rows(const Vector& flat, int N, int d) {
    Matrix out(N, d);
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < d; ++c) out(i, c) = flat(i * d + c);
    return out;
}

struct Projection {
    Matrix field;  // N x d projected values at the particles
    StepStats stats;
};

Projection project_field(const netfam::NetworkSpec& spec, const netfam::ParamVec& theta,
                         const IndexSet& subspace, const Matrix& X, const Matrix& target,
                         const FlowOptions& opts, Vector* alpha_out) {
    WeightedSystem sys = weighted_tangent_system(spec, theta, subspace, X);
    Vector g = flatten_rows(target);
    Vector alpha;
    if (opts.use_gform) {
        Vector p = (sys.features.transpose() * g) / static_cast<double>(X.rows());
        alpha = linalg::solve_psd(sys.G, p, opts.lstsq);
    } else {
        alpha = linalg::lstsq_svd(sys.features, g, opts.lstsq);
    }
    Vector fitted = sys.features * alpha;
    Projection out;
    out.field = unflatten_rows(fitted, static_cast<int>(X.rows()), static_cast<int>(X.cols()));
    const double gn = g.norm();
    out.stats.residual_rel = gn > 0.0 ? (fitted - g).norm() / gn : (fitted - g).norm();
    out.stats.alpha_l2 = alpha.norm();
    if (alpha_out) *alpha_out = std::move(alpha);
    return out;
}

void apply_flow_policy(const netfam::NetworkSpec& spec, netfam::ParamsPtr& theta,
                       const IndexSet& subspace, const Vector& alpha, double h,
                       FlowOptions::Policy policy) {
    if (policy != FlowOptions::Policy::forward) return;
    const int m = netfam::param_count(spec);
    auto next = std::make_shared<netfam::ParamVec>(*theta);
    next->v += h * embed_direction(subspace, alpha, m);
    theta = std::move(next);
}

}  // namespace

StepStats wgf_step(const netfam::NetworkSpec& spec, netfam::ParamsPtr& theta,
                   const IndexSet& subspace, ParticleEnsemble& ens, const InteractionKernel& kernel,
                   double h, const FlowOptions& opts) {
    if (!(h > 0.0)) fail(Errc::bad_size, "need h > 0");
    Matrix drift = interaction_drift(kernel, ens.X);
    Vector alpha;
    Projection proj = project_field(spec, *theta, subspace, ens.X, drift, opts, &alpha);
    ens.X += h * proj.field;
    apply_flow_policy(spec, theta, subspace, alpha, h, opts.policy);
    return proj.stats;
}

void plain_particle_step(ParticleEnsemble& ens, const InteractionKernel& kernel, double h) {
    ens.X += h * interaction_drift(kernel, ens.X);
}

StepStats whf_step(const netfam::NetworkSpec& spec, netfam::ParamsPtr& theta,
                   const IndexSet& subspace, ParticleEnsemble& ens, const LinearPotential& V,
                   double h, const FlowOptions& opts) {
    if (!ens.Lambda) fail(Errc::bad_size, "whf_step needs velocities");
    const int N = ens.count();
    const int d = ens.dim();
    Matrix accel_target(N, d);
    for (int i = 0; i < N; ++i) accel_target.row(i) = -V.grad(ens.X.row(i));

    Vector alpha;
    Projection proj = project_field(spec, *theta, subspace, ens.X, accel_target, opts, &alpha);

    Matrix lambda_next = *ens.Lambda + h * proj.field;
    ens.X += 0.5 * h * (*ens.Lambda + lambda_next);
    *ens.Lambda = std::move(lambda_next);
    apply_flow_policy(spec, theta, subspace, alpha, h, opts.policy);
    return proj.stats;
}

std::pair<double, double> radius_stats(const Matrix& X, const Eigen::RowVectorXd& center) {
    const int N = static_cast<int>(X.rows());
    Vector r(N);
    for (int i = 0; i < N; ++i) r(i) = (X.row(i) - center).norm();
    const double mean = r.mean();
    const double var = (r.array() - mean).square().sum() / N;
    return {mean, std::sqrt(var)};
}

}  // namespace dtb::wflow
