#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtb/wflow.hpp"

#include <cmath>

using namespace dtb;
using namespace dtb::wflow;

namespace {

netfam::NetworkSpec vector_net(int d, int width, std::uint64_t = 0) {
    netfam::NetworkSpec spec;
    spec.family = netfam::Family::residual;
    spec.input_dim = d;
    spec.output_dim = d;
    spec.widths = {width, width};
    return spec;
}

Matrix random_points(int n, int d, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return rng.gaussian(n, d, scale);
}

}  // namespace

TEST_CASE("interaction kernel and drift closed forms") {
    InteractionKernel k = InteractionKernel::aggregation();
    CHECK(k.profile(0.0) == 0.0);
    CHECK(k.dprofile_over_r(0.0) == doctest::Approx(-1.0));
    CHECK(k.profile(1.0) == doctest::Approx(0.25 - 0.5));

    // two particles at distance 1 are in equilibrium
    Matrix X(2, 2);
    X << 0.0, 0.0, 1.0, 0.0;
    Matrix drift = interaction_drift(k, X);
    CHECK(drift.cwiseAbs().maxCoeff() <= 1e-14);

    // coincident particles: gradient vanishes by continuity
    Matrix Xc(3, 2);
    Xc << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
    CHECK(interaction_drift(k, Xc).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("drift is rotation and translation equivariant, permutation invariant") {
    InteractionKernel k = InteractionKernel::aggregation();
    Matrix X = random_points(12, 2, 3);
    Matrix drift = interaction_drift(k, X);

    const double c = std::cos(0.7), s = std::sin(0.7);
    Matrix R(2, 2);
    R << c, -s, s, c;
    Matrix Xr = X * R.transpose();
    Matrix drift_r = interaction_drift(k, Xr);
    CHECK((drift_r - drift * R.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

    Matrix Xt = X;
    Xt.rowwise() += Eigen::RowVector2d(0.3, -1.1);
    CHECK((interaction_drift(k, Xt) - drift).cwiseAbs().maxCoeff() <= 1e-12);

    Matrix Xp = X;
    Xp.row(0).swap(Xp.row(7));
    Matrix drift_p = interaction_drift(k, Xp);
    CHECK((drift_p.row(0) - drift.row(7)).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((drift_p.row(7) - drift.row(0)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("two-body distance settles at the kernel equilibrium") {
    InteractionKernel k = InteractionKernel::aggregation();
    ParticleEnsemble ens;
    ens.Z = Matrix(2, 2);
    ens.Z << 0.0, 0.0, 1.8, 0.0;
    ens.X = ens.Z;
    const double h = 1e-3;
    for (int i = 0; i < 12000; ++i) plain_particle_step(ens, k, h);
    const double dist = (ens.X.row(0) - ens.X.row(1)).norm();
    CHECK(std::abs(dist - 1.0) <= 1e-3);
}

TEST_CASE("weighted tangent system: point mass and duplication invariance") {
    netfam::NetworkSpec spec = vector_net(2, 10);
    netfam::ParamVec theta = netfam::init_params(spec, 5);
    IndexSet sub = select_subspace(netfam::param_count(spec), 40, 6);

    Matrix z0(1, 2);
    z0 << 0.4, -0.2;
    WeightedSystem one = weighted_tangent_system(spec, theta, sub, z0);
    CHECK((one.G - one.features.transpose() * one.features).cwiseAbs().maxCoeff() <= 1e-12);

    Matrix Xdup(6, 2);
    Matrix X3 = random_points(3, 2, 7);
    Xdup << X3, X3;
    WeightedSystem g1 = weighted_tangent_system(spec, theta, sub, X3);
    WeightedSystem g2 = weighted_tangent_system(spec, theta, sub, Xdup);
    CHECK((g1.G - g2.G).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("monte-carlo metric agrees with quadrature at three sigma") {
    netfam::NetworkSpec spec = vector_net(2, 6);
    netfam::ParamVec theta = netfam::init_params(spec, 9);
    IndexSet sub = select_subspace(netfam::param_count(spec), 6, 10);

    // quadrature grid on [-1,1]^2
    const int g = 80;
    Matrix quad(g * g, 2);
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j) {
            quad(i * g + j, 0) = -1.0 + 2.0 * (i + 0.5) / g;
            quad(i * g + j, 1) = -1.0 + 2.0 * (j + 0.5) / g;
        }
    WeightedSystem qsys = weighted_tangent_system(spec, theta, sub, quad);

    const int N = 4000;
    Rng rng(11);
    Matrix mc = rng.uniform_box(N, 2);
    WeightedSystem msys = weighted_tangent_system(spec, theta, sub, mc);

    // per-entry MC standard error from second moments of feature products
    const int l = sub.size();
    for (int a = 0; a < l; ++a)
        for (int b = 0; b < l; ++b) {
            // products averaged per particle (rows come in pairs per sample)
            Vector prod(N);
            for (int i = 0; i < N; ++i) {
                double p = 0.0;
                for (int c = 0; c < 2; ++c) p += msys.features(i * 2 + c, a) * msys.features(i * 2 + c, b);
                prod(i) = p;
            }
            const double mean = prod.mean();
            const double var = (prod.array() - mean).square().sum() / (N - 1);
            const double se = std::sqrt(var / N);
            CHECK(std::abs(msys.G(a, b) - qsys.G(a, b)) <= 3.0 * se + 1e-9);
        }
}

TEST_CASE("wgf step: equilibrium is a fixed point; projection tracks the drift") {
    netfam::NetworkSpec spec = vector_net(2, 24);
    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, 13));
    netfam::ParamsPtr theta_ptr = theta;
    InteractionKernel k = InteractionKernel::aggregation();
    IndexSet sub = select_subspace(netfam::param_count(spec), 200, 14);
    FlowOptions opts;
    opts.lstsq.rcond = 1e-10;

    ParticleEnsemble pair;
    pair.Z = Matrix(2, 2);
    pair.Z << 0.0, 0.0, 1.0, 0.0;
    pair.X = pair.Z;
    Matrix before = pair.X;
    wgf_step(spec, theta_ptr, sub, pair, k, 0.01, opts);
    CHECK((pair.X - before).cwiseAbs().maxCoeff() <= 1e-12);

    // expressive projection: one step close to the unprojected particle step
    ParticleEnsemble ens;
    ens.Z = random_points(400, 2, 15, 0.5);
    ens.Z.rowwise() += Eigen::RowVector2d(1.25, 1.25);
    ens.X = ens.Z;
    ParticleEnsemble plain = ens;
    StepStats st = wgf_step(spec, theta_ptr, sub, ens, k, 0.01, opts);
    plain_particle_step(plain, k, 0.01);
    CHECK(st.residual_rel <= 5e-2);
    const double move = (plain.X - ens.Z).cwiseAbs().maxCoeff();
    CHECK((ens.X - plain.X).cwiseAbs().maxCoeff() <= 5e-2 * std::max(move, 1e-12) + 1e-10);
}

TEST_CASE("interaction energy decays for the plain flow and nearly for the projected one") {
    InteractionKernel k = InteractionKernel::aggregation();
    ParticleEnsemble ens;
    ens.Z = random_points(100, 2, 21, 0.6);
    ens.Z.rowwise() += Eigen::RowVector2d(1.25, 1.25);
    ens.X = ens.Z;

    double prev = interaction_energy(k, ens.X);
    for (int i = 0; i < 50; ++i) {
        plain_particle_step(ens, k, 1e-3);
        const double cur = interaction_energy(k, ens.X);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }

    netfam::NetworkSpec spec = vector_net(2, 16);
    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, 22));
    netfam::ParamsPtr theta_ptr = theta;
    IndexSet sub = select_subspace(netfam::param_count(spec), 150, 23);
    FlowOptions opts;
    ParticleEnsemble proj;
    proj.Z = ens.X;
    proj.X = ens.X;
    double eprev = interaction_energy(k, proj.X);
    for (int i = 0; i < 20; ++i) {
        Matrix drift = interaction_drift(k, proj.X);
        StepStats st = wgf_step(spec, theta_ptr, sub, proj, k, 1e-3, opts);
        const double ecur = interaction_energy(k, proj.X);
        const double slack = 2.0 * 1e-3 * st.residual_rel * drift.norm();
        CHECK(ecur <= eprev + slack + 1e-12);
        eprev = ecur;
    }
}

TEST_CASE("whf step: free motion and harmonic order of accuracy") {
    netfam::NetworkSpec spec = vector_net(1, 16);
    auto theta = std::make_shared<netfam::ParamVec>(netfam::init_params(spec, 31));
    netfam::ParamsPtr theta_ptr = theta;
    IndexSet sub = select_subspace(netfam::param_count(spec), 120, 32);
    FlowOptions opts;
    opts.lstsq.rcond = 1e-12;

    // zero potential: straight-line motion with constant velocity
    LinearPotential zero;
    zero.value = [](const Eigen::RowVectorXd&) { return 0.0; };
    zero.grad = [](const Eigen::RowVectorXd& z) { return Eigen::RowVectorXd::Zero(z.size()); };
    ParticleEnsemble ens;
    ens.Z = random_points(20, 1, 33);
    ens.X = ens.Z;
    ens.Lambda = Matrix::Constant(20, 1, 0.5);
    whf_step(spec, theta_ptr, sub, ens, zero, 0.02, opts);
    CHECK((ens.X - ens.Z).cwiseAbs().maxCoeff() == doctest::Approx(0.02 * 0.5).epsilon(1e-12));
    CHECK(((*ens.Lambda).array() - 0.5).abs().maxCoeff() == 0.0);

    // 1-D harmonic oscillator: x(t) = cos(t). The explicit velocity update
    // with trapezoidal position averaging is first order for the coupled
    // system; halving h should at least halve the error.
    LinearPotential ho;
    ho.value = [](const Eigen::RowVectorXd& z) { return 0.5 * z(0) * z(0); };
    ho.grad = [](const Eigen::RowVectorXd& z) { return Eigen::RowVectorXd::Constant(1, z(0)); };
    auto run_err = [&](double h) {
        ParticleEnsemble e;
        e.Z = Matrix::Constant(4, 1, 1.0);
        e.X = e.Z;
        e.Lambda = Matrix::Zero(4, 1);
        const int K = static_cast<int>(std::llround(1.0 / h));
        for (int k = 0; k < K; ++k) whf_step(spec, theta_ptr, sub, e, ho, h, opts);
        return std::abs(e.X(0, 0) - std::cos(1.0));
    };
    const double e1 = run_err(0.02);
    const double e2 = run_err(0.01);
    CHECK(std::log2(e1 / e2) >= 0.9);
}

TEST_CASE("radius statistics") {
    Matrix X(4, 2);
    X << 1, 0, -1, 0, 0, 1, 0, -1;
    auto [mean, sd] = radius_stats(X, Eigen::RowVector2d(0, 0));
    CHECK(mean == doctest::Approx(1.0));
    CHECK(sd == doctest::Approx(0.0));
}
