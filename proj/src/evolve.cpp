#include "dtb/evolve.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace dtb::evolve {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double maybe_probe(const EvolveOptions& opts, const DtbSet& set, double t, int k, int K) {
    if (opts.probe_every > 0 && opts.error_probe && ((k % opts.probe_every == 0) || k == K))
        return opts.error_probe(set, t, k);
    return std::numeric_limits<double>::quiet_NaN();
}

DtbApprox fit(const netfam::NetworkSpec& spec, netfam::ParamsPtr theta, const IndexSet& sub,
              const Vector& target, const Matrix& samples, const EvolveOptions& opts) {
    return opts.use_gform ? approx_gform(spec, theta, sub, target, samples, opts.lstsq)
                          : approx_jform(spec, theta, sub, target, samples, opts.lstsq);
}

}  // namespace

netfam::ParamsPtr apply_policy(const UpdatePolicy& policy, const netfam::NetworkSpec& spec,
                               netfam::ParamsPtr theta, const IndexSet& subspace,
                               const Vector& alpha, double h, int k,
                               const netfam::SampledFunction& current_u, std::uint64_t seed,
                               RunReport* report) {
    switch (policy.kind) {
        case UpdatePolicy::Kind::fixed:
            return theta;
        case UpdatePolicy::Kind::forward: {
            if (alpha.norm() == 0.0) return theta;
            const int m = netfam::param_count(spec);
            auto next = std::make_shared<netfam::ParamVec>(*theta);
            next->v += h * embed_direction(subspace, alpha, m);
            return next;
        }
        case UpdatePolicy::Kind::periodic_reset: {
            if (policy.L < 1) fail(Errc::bad_size, "periodic_reset needs L >= 1");
            if ((k + 1) % policy.L != 0) return theta;
            netfam::RefitResult rr =
                netfam::refit(spec, *theta, current_u, policy.refit_iters, policy.refit_step,
                              derive_seed(seed, static_cast<std::uint64_t>(k) * 2 + 1), policy.refit);
            if (report) {
                report->reset_steps.push_back(k + 1);
                report->reset_loss_before.push_back(rr.loss_before);
                report->reset_loss_after.push_back(rr.loss_after);
            }
            return std::make_shared<netfam::ParamVec>(std::move(rr.theta));
        }
    }
    return theta;
}

std::pair<DtbSet, RunReport> forward_euler_run(const netfam::NetworkSpec& spec,
                                               netfam::ParamsPtr theta0, const RhsOperator& rhs,
                                               FieldPtr phi, double T, int K,
                                               const SamplerSpec& sampler, int l,
                                               const UpdatePolicy& policy,
                                               const EvolveOptions& opts) {
    if (!(T > 0.0) || K < 1) fail(Errc::bad_size, "need T > 0 and K >= 1");
    const double h = T / K;
    const int m = netfam::param_count(spec);

    DtbSet set(h, phi, spec);
    RunReport report;
    netfam::ParamsPtr theta = std::move(theta0);
    IndexSet sub = select_subspace(m, l, derive_seed(opts.seed, "subspace"));

    const auto run_t0 = Clock::now();
    for (int k = 0; k < K; ++k) {
        const auto t0 = Clock::now();
        if (opts.redraw_subspace_each_step && k > 0)
            sub = select_subspace(m, l, derive_seed(derive_seed(opts.seed, "subspace-step"), static_cast<std::uint64_t>(k)));

        Matrix samples = sampler.draw(derive_seed(opts.seed, static_cast<std::uint64_t>(k)));
        DtbSet::Batch u = set.eval(samples, rhs.needs_laplacian());
        Vector F = rhs.apply(u.value, u.lap);

        DtbApprox approx;
        for (int attempt = 0;; ++attempt) {
            approx = fit(spec, theta, sub, F, samples, opts);
            if (approx.residual_rel <= opts.proj_tol || F.norm() == 0.0) break;
            if (attempt >= opts.retry_budget)
                fail(Errc::projection_failure, "projection residual above proj_tol after retries");
            if (policy.kind == UpdatePolicy::Kind::periodic_reset) {
                auto u_fn = [&set](const Matrix& pts) { return set.eval(pts, false).value; };
                netfam::RefitResult rr = netfam::refit(
                    spec, *theta, u_fn, policy.refit_iters, policy.refit_step,
                    derive_seed(derive_seed(opts.seed, "retry-refit"), static_cast<std::uint64_t>(k * 8 + attempt)), policy.refit);
                theta = std::make_shared<netfam::ParamVec>(std::move(rr.theta));
            }
            sub = select_subspace(m, l, derive_seed(derive_seed(opts.seed, "retry"), static_cast<std::uint64_t>(k * 8 + attempt)));
        }

        DtbStep step;
        step.theta = theta;
        step.comps.push_back({sub, approx.alpha});
        step.residual_rel = approx.residual_rel;
        set.push(std::move(step));

        auto u_fn = [&set](const Matrix& pts) { return set.eval(pts, false).value; };
        netfam::ParamsPtr next =
            apply_policy(policy, spec, theta, sub, approx.alpha, h, k, u_fn, opts.seed, &report);
        const bool reset_happened = next != theta && policy.kind == UpdatePolicy::Kind::periodic_reset;
        theta = std::move(next);
        if (reset_happened)  // fresh subspace on the new basis
            sub = select_subspace(m, l, derive_seed(derive_seed(opts.seed, "post-reset"), static_cast<std::uint64_t>(k)));

        report.times.push_back((k + 1) * h);
        report.residual_rel.push_back(approx.residual_rel);
        report.alpha_l2.push_back(approx.alpha.norm());
        report.rel_l2.push_back(maybe_probe(opts, set, (k + 1) * h, k + 1, K));
        report.wall_ms.push_back(ms_since(t0));
    }
    report.total_wall_ms = ms_since(run_t0);
    return {std::move(set), std::move(report)};
}

std::pair<DtbSet, RunReport> trapezoidal_heat_run(const netfam::NetworkSpec& spec,
                                                  netfam::ParamsPtr theta0, double nu, FieldPtr phi,
                                                  double T, int K, const SamplerSpec& sampler,
                                                  int l, const EvolveOptions& opts) {
    if (!(T > 0.0) || K < 1) fail(Errc::bad_size, "need T > 0 and K >= 1");
    if (!(nu > 0.0)) fail(Errc::bad_size, "need nu > 0");
    const bool periodic = spec.embedding.has_value() || spec.family == netfam::Family::periodic_mlp;
    if (!periodic) fail(Errc::bad_size, "trapezoidal heat run requires a periodic family");

    const double h = T / K;
    const int m = netfam::param_count(spec);
    DtbSet set(h, phi, spec);
    RunReport report;
    IndexSet sub = select_subspace(m, l, derive_seed(opts.seed, "subspace"));

    const auto run_t0 = Clock::now();
    Matrix samples = sampler.draw(derive_seed(opts.seed, "trapezoid-samples"));
    const double n = static_cast<double>(samples.rows());

    netfam::TangentBlock tb = netfam::tangent_features(spec, *theta0, samples, sub.indices, true);
    Matrix G = (tb.features.transpose() * tb.features) / n;
    Matrix A = Matrix::Zero(l, l);
    for (const Matrix& Dk : tb.spatial_grads) A += (Dk.transpose() * Dk);
    A *= nu / n;

    Vector phi_val, phi_lap;
    Matrix phi_grad;
    phi->derivs_batch(samples, phi_val, phi_grad, phi_lap);
    Vector b = nu * (tb.features.transpose() * phi_lap) / n;

    linalg::PsdPinv pinv(G + 0.5 * h * A, opts.lstsq.rcond);
    Matrix lhs = G + 0.5 * h * A;
    Matrix rhs_mat = G - 0.5 * h * A;

    Vector s = Vector::Zero(l);
    for (int k = 0; k < K; ++k) {
        const auto t0 = Clock::now();
        Vector rhs = rhs_mat * s + b;
        Vector s_next = pinv.apply(rhs);
        Vector alpha = s_next - s;

        const double rhs_norm = rhs.norm();
        const double res = (lhs * s_next - rhs).norm();
        const double residual_rel = rhs_norm > 0.0 ? res / rhs_norm : res;

        DtbStep step;
        step.theta = theta0;
        step.comps.push_back({sub, alpha});
        step.residual_rel = residual_rel;
        set.push(std::move(step));
        s = s_next;

        report.times.push_back((k + 1) * h);
        report.residual_rel.push_back(residual_rel);
        report.alpha_l2.push_back(alpha.norm());
        report.rel_l2.push_back(maybe_probe(opts, set, (k + 1) * h, k + 1, K));
        report.wall_ms.push_back(ms_since(t0));
        if (opts.record_cumulative) report.cumulative_s.push_back(s);
    }
    report.total_wall_ms = ms_since(run_t0);
    return {std::move(set), std::move(report)};
}

std::pair<DtbSet, RunReport> ac2d_corrected_run(const netfam::NetworkSpec& spec,
                                                netfam::ParamsPtr theta0, const RhsOperator& rhs,
                                                FieldPtr phi, double T, int K,
                                                const SamplerSpec& sampler, int l1, int l2,
                                                const EvolveOptions& opts) {
    if (!(T > 0.0) || K < 1) fail(Errc::bad_size, "need T > 0 and K >= 1");
    const double h = T / K;
    const int m = netfam::param_count(spec);

    DtbSet set(h, phi, spec);
    RunReport report;
    netfam::ParamsPtr theta = std::move(theta0);

    const auto run_t0 = Clock::now();
    for (int k = 0; k < K; ++k) {
        const auto t0 = Clock::now();
        Matrix samples = sampler.draw(derive_seed(opts.seed, static_cast<std::uint64_t>(k)));
        IndexSet sub1 = select_subspace(m, l1, derive_seed(derive_seed(opts.seed, "sub1"), static_cast<std::uint64_t>(k)));
        IndexSet sub2 = select_subspace(m, l2, derive_seed(derive_seed(opts.seed, "sub2"), static_cast<std::uint64_t>(k)));

        netfam::TangentBlock tb1 = netfam::tangent_features(spec, *theta, samples, sub1.indices, true);
        netfam::TangentBlock tb2 = netfam::tangent_features(spec, *theta, samples, sub2.indices, true);

        DtbSet::Batch u = set.eval(samples, true);
        Vector F0 = rhs.apply(u.value, u.lap);

        linalg::SvdSolver svd1(tb1.features);
        linalg::SvdSolver svd2(tb2.features);

        Vector a1 = svd1.solve(F0, opts.lstsq.rcond);
        Vector a2 = svd2.solve(F0 - tb1.features * a1, opts.lstsq.rcond);

        Vector u_temp = u.value + h * (tb1.features * a1 + tb2.features * a2);
        Vector lap_temp = u.lap + h * (tb1.spatial_laplacians * a1 + tb2.spatial_laplacians * a2);
        Vector F_mid = 0.5 * (F0 + rhs.apply(u_temp, lap_temp));

        Vector a3 = svd1.solve(F_mid, opts.lstsq.rcond);
        Vector a4 = svd2.solve(F_mid - tb1.features * a3, opts.lstsq.rcond);

        const double fn = F_mid.norm();
        const double res = (tb1.features * a3 + tb2.features * a4 - F_mid).norm();
        const double residual_rel = fn > 0.0 ? res / fn : res;

        DtbStep step;
        step.theta = theta;
        step.comps.push_back({sub1, a3});
        step.comps.push_back({sub2, a4});
        step.residual_rel = residual_rel;
        set.push(std::move(step));

        if (a3.norm() != 0.0 || a4.norm() != 0.0) {
            auto next = std::make_shared<netfam::ParamVec>(*theta);
            next->v += h * (embed_direction(sub1, a3, m) + embed_direction(sub2, a4, m));
            theta = std::move(next);
        }

        report.times.push_back((k + 1) * h);
        report.residual_rel.push_back(residual_rel);
        report.alpha_l2.push_back(std::sqrt(a3.squaredNorm() + a4.squaredNorm()));
        report.rel_l2.push_back(maybe_probe(opts, set, (k + 1) * h, k + 1, K));
        report.wall_ms.push_back(ms_since(t0));
    }
    report.total_wall_ms = ms_since(run_t0);
    return {std::move(set), std::move(report)};
}

TaylorTable taylor_error_study(const netfam::NetworkSpec& spec, const netfam::ParamVec& theta,
                               const netfam::SampledFunction& target,
                               const std::vector<double>& rconds, const std::vector<double>& hs,
                               int n_train, int n_heldout, int l, std::uint64_t seed) {
    const int m = netfam::param_count(spec);
    const int d = spec.input_dim;
    IndexSet sub = select_subspace(m, l, derive_seed(seed, "taylor-subspace"));

    Rng train_rng(derive_seed(seed, "taylor-train"));
    Rng held_rng(derive_seed(seed, "taylor-heldout"));
    Matrix train = train_rng.uniform_box(n_train, d);
    Matrix held = held_rng.uniform_box(n_heldout, d);

    netfam::TangentBlock tb = netfam::tangent_features(spec, theta, train, sub.indices, false);
    Vector g_train = target(train);
    Vector g_held = target(held);
    const double g_train_norm = g_train.norm();
    const double g_held_norm = g_held.norm();

    Matrix f_held = netfam::forward_batch(spec, theta, held);
    linalg::SvdSolver svd(tb.features);

    TaylorTable table;
    table.hs = hs;
    for (double rc : rconds) {
        TaylorRow row;
        row.rcond = rc;
        Vector alpha = svd.solve(g_train, rc);
        row.alpha_l2 = alpha.norm();
        const double res = (tb.features * alpha - g_train).norm();
        row.eps_ls = g_train_norm > 0.0 ? res / g_train_norm : res;

        Vector dir = embed_direction(sub, alpha, m);
        for (double h : hs) {
            netfam::ParamVec shifted;
            shifted.v = theta.v + h * dir;
            Matrix f_shift = netfam::forward_batch(spec, shifted, held);
            Vector taylor = (f_shift.col(0) - f_held.col(0)) / h;
            const double err = (taylor - g_held).norm();
            row.eps_t.push_back(g_held_norm > 0.0 ? err / g_held_norm : err);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace dtb::evolve
