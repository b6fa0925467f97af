#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtb/netfam.hpp"

#include <cmath>
#include <cstring>

using namespace dtb;
using namespace dtb::netfam;

namespace {

NetworkSpec small_mlp(int d, std::vector<int> widths, bool last_bias = false) {
    NetworkSpec spec;
    spec.family = Family::mlp;
    spec.input_dim = d;
    spec.output_dim = 1;
    spec.widths = std::move(widths);
    spec.last_layer_bias = last_bias;
    return spec;
}

// f = theta * sin(pi z): periodic embedding with one feature per dim at phase
// -pi/2 (cos(pi z - pi/2) = sin(pi z)) followed by a single linear layer.
NetworkSpec sine_feature_net() {
    NetworkSpec spec;
    spec.family = Family::periodic_mlp;
    spec.input_dim = 1;
    spec.output_dim = 1;
    spec.widths = {};
    spec.embedding = PeriodicEmbeddingSpec{1, {-M_PI / 2.0}};
    spec.last_layer_bias = false;
    return spec;
}

// Independent straight-line MLP evaluation from the documented flattening
// order: per affine layer the weight matrix row-major (out x in), then bias.
double reference_mlp_eval(const NetworkSpec& spec, const ParamVec& theta,
                          const Eigen::RowVectorXd& z) {
    std::vector<double> x(z.data(), z.data() + z.size());
    std::size_t off = 0;
    auto affine = [&](int in, int out, bool bias) {
        std::vector<double> y(out, 0.0);
        for (int p = 0; p < out; ++p)
            for (int q = 0; q < in; ++q) y[p] += theta.v(off + p * in + q) * x[q];
        off += static_cast<std::size_t>(out) * in;
        if (bias) {
            for (int p = 0; p < out; ++p) y[p] += theta.v(off + p);
            off += out;
        }
        x = std::move(y);
    };
    int prev = spec.input_dim;
    for (int w : spec.widths) {
        affine(prev, w, true);
        for (double& v : x) v = std::tanh(v);
        prev = w;
    }
    affine(prev, spec.output_dim, spec.last_layer_bias);
    return x[0];
}

}  // namespace

TEST_CASE("parameter counting and init schemes") {
    NetworkSpec spec = small_mlp(2, {3}, true);
    CHECK(param_count(spec) == 13);  // 2*3+3 weights+bias, then 3*1+1

    ParamVec a = init_params(spec, 42);
    ParamVec b = init_params(spec, 42);
    CHECK(std::memcmp(a.v.data(), b.v.data(), sizeof(double) * a.v.size()) == 0);
    CHECK(init_params(spec, 43).v != a.v);

    ParamVec u = init_params(spec, 7, InitScheme::small_uniform, 0.1);
    CHECK(u.v.cwiseAbs().maxCoeff() <= 0.1);

    // he_normal zeroes biases
    CHECK(a.v(6) == 0.0);
    CHECK(a.v(7) == 0.0);
    CHECK(a.v(8) == 0.0);
}

TEST_CASE("forward matches hand computations") {
    NetworkSpec spec = small_mlp(2, {4}, true);
    ParamVec zero;
    zero.v = Vector::Zero(param_count(spec));
    Eigen::RowVectorXd z(2);
    z << 0.3, -0.7;
    CHECK(forward(spec, zero, z)(0) == 0.0);

    // single linear layer f = W z + b with W = [[1,2]], b = [3]
    NetworkSpec lin = small_mlp(2, {}, true);
    ParamVec th;
    th.v = Vector(3);
    th.v << 1.0, 2.0, 3.0;
    Eigen::RowVectorXd z1(2);
    z1 << 1.0, 1.0;
    CHECK(forward(lin, th, z1)(0) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("forward agrees with an independent evaluator") {
    NetworkSpec spec = small_mlp(3, {5, 4}, true);
    ParamVec theta = init_params(spec, 5);
    Rng rng(6);
    Matrix pts = rng.uniform_box(20, 3);
    Matrix vals = forward_batch(spec, theta, pts);
    for (int i = 0; i < 20; ++i) {
        const double ref = reference_mlp_eval(spec, theta, pts.row(i));
        CHECK(std::abs(vals(i, 0) - ref) <= 1e-14 * std::max(1.0, std::abs(ref)));
    }
}

TEST_CASE("tangent features of linear families are the input features") {
    // f = theta * z in 1-D: one parameter, feature column is z.
    NetworkSpec lin = small_mlp(1, {}, false);
    REQUIRE(param_count(lin) == 1);
    ParamVec th;
    th.v = Vector::Constant(1, 0.37);
    Matrix pts(4, 1);
    pts << -1.0, -0.5, 0.5, 1.0;
    TangentBlock tb = tangent_features(lin, th, pts, {0}, true);
    for (int i = 0; i < 4; ++i) {
        CHECK(tb.features(i, 0) == doctest::Approx(pts(i, 0)).epsilon(1e-15));
        CHECK(tb.spatial_laplacians(i, 0) == doctest::Approx(0.0));
    }

    // f = theta * sin(pi z): feature sin(pi z), Laplacian -pi^2 sin(pi z).
    NetworkSpec sine = sine_feature_net();
    REQUIRE(param_count(sine) == 1);
    ParamVec th2;
    th2.v = Vector::Constant(1, 2.0);
    TangentBlock tb2 = tangent_features(sine, th2, pts, {0}, true);
    for (int i = 0; i < 4; ++i) {
        const double s = std::sin(M_PI * pts(i, 0));
        CHECK(tb2.features(i, 0) == doctest::Approx(s).epsilon(1e-12));
        CHECK(tb2.spatial_laplacians(i, 0) == doctest::Approx(-M_PI * M_PI * s).epsilon(1e-12));
    }
}

TEST_CASE("feature Laplacians match central finite differences") {
    NetworkSpec spec = small_mlp(2, {6, 6});
    ParamVec theta = init_params(spec, 8);
    const int m = param_count(spec);
    std::vector<int> sub;
    for (int i = 0; i < m; i += 3) sub.push_back(i);

    Rng rng(9);
    Matrix pts = rng.uniform_box(10, 2, 0.8);
    TangentBlock tb = tangent_features(spec, theta, pts, sub, true);

    const double step = 1e-4;
    for (std::size_t c = 0; c < sub.size(); c += 4) {
        for (int i = 0; i < 10; i += 3) {
            double lap_fd = 0.0;
            for (int k = 0; k < 2; ++k) {
                Matrix pp = pts.row(i), pm = pts.row(i);
                pp(0, k) += step;
                pm(0, k) -= step;
                TangentBlock tp = tangent_features(spec, theta, pp, {sub[c]}, false);
                TangentBlock tm = tangent_features(spec, theta, pm, {sub[c]}, false);
                lap_fd += (tp.features(0, 0) - 2.0 * tb.features(i, c) + tm.features(0, 0)) /
                          (step * step);
            }
            const double scale = std::max(1.0, std::abs(tb.spatial_laplacians(i, c)));
            CHECK(std::abs(lap_fd - tb.spatial_laplacians(i, c)) <= 1e-5 * scale);
        }
    }
}

TEST_CASE("forward_with_space_derivs analytic cases") {
    // zero network: value, gradient and Laplacian all vanish
    NetworkSpec spec = small_mlp(2, {3}, true);
    ParamVec zero;
    zero.v = Vector::Zero(param_count(spec));
    Rng rng(10);
    Matrix pts = rng.uniform_box(6, 2);
    SpaceDerivs sd = forward_with_space_derivs(spec, zero, pts);
    CHECK(sd.grads.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sd.laps.cwiseAbs().maxCoeff() == 0.0);

    // f = sin(pi z1) via the sine feature with theta = 1
    NetworkSpec sine = sine_feature_net();
    ParamVec one;
    one.v = Vector::Constant(1, 1.0);
    Matrix pts1(3, 1);
    pts1 << -0.4, 0.1, 0.9;
    SpaceDerivs s1 = forward_with_space_derivs(sine, one, pts1);
    for (int i = 0; i < 3; ++i)
        CHECK(s1.laps(i) ==
              doctest::Approx(-M_PI * M_PI * std::sin(M_PI * pts1(i, 0))).epsilon(1e-12));

    // random net vs central differences
    ParamVec theta = init_params(spec, 11);
    SpaceDerivs sd2 = forward_with_space_derivs(spec, theta, pts);
    const double step = 1e-4;
    for (int i = 0; i < pts.rows(); ++i) {
        double lap_fd = 0.0;
        for (int k = 0; k < 2; ++k) {
            Matrix pp = pts.row(i), pm = pts.row(i);
            pp(0, k) += step;
            pm(0, k) -= step;
            const double vp = forward_batch(spec, theta, pp)(0, 0);
            const double vm = forward_batch(spec, theta, pm)(0, 0);
            CHECK(std::abs((vp - vm) / (2 * step) - sd2.grads(i, k)) <= 1e-5);
            lap_fd += (vp - 2.0 * sd2.values(i, 0) + vm) / (step * step);
        }
        CHECK(std::abs(lap_fd - sd2.laps(i)) <= 1e-5 * std::max(1.0, std::abs(sd2.laps(i))));
    }
}

TEST_CASE("directional derivative converges at second order (Richardson)") {
    NetworkSpec spec = small_mlp(2, {5, 5});
    ParamVec theta = init_params(spec, 12);
    const int m = param_count(spec);
    Rng rng(13);
    Vector v(m);
    for (int i = 0; i < m; ++i) v(i) = rng.normal();
    Matrix pts = rng.uniform_box(8, 2);

    std::vector<int> full(m);
    for (int i = 0; i < m; ++i) full[i] = i;
    TangentBlock tb = tangent_features(spec, theta, pts, full, false);
    Vector exact = tb.features * v;

    auto fd_error = [&](double h) {
        ParamVec tp = theta;
        tp.v += h * v;
        ParamVec tm = theta;
        tm.v -= h * v;
        Vector approx =
            (forward_batch(spec, tp, pts).col(0) - forward_batch(spec, tm, pts).col(0)) / (2.0 * h);
        return (approx - exact).norm();
    };
    const double e1 = fd_error(1e-3);
    const double e2 = fd_error(5e-4);
    const double order = std::log(e1 / e2) / std::log(2.0);
    CHECK(order >= 1.9);
}

TEST_CASE("bias-free linear last layer reconstructs the network exactly") {
    for (std::uint64_t seed : {1ull, 2ull}) {
        NetworkSpec spec = small_mlp(2, {6, 4}, false);
        ParamVec theta = init_params(spec, seed);
        const int m = param_count(spec);
        Rng rng(seed + 50);
        Matrix pts = rng.uniform_box(30, 2);

        // analytic coefficient: zeros except the last-layer weights themselves
        Vector v = Vector::Zero(m);
        const int last_w = 4;  // last affine is 4 -> 1, no bias
        for (int i = 0; i < last_w; ++i) v(m - last_w + i) = theta.v(m - last_w + i);

        std::vector<int> full(m);
        for (int i = 0; i < m; ++i) full[i] = i;
        TangentBlock tb = tangent_features(spec, theta, pts, full, false);
        Vector recon = tb.features * v;
        Vector f = forward_batch(spec, theta, pts).col(0);
        CHECK((recon - f).norm() <= 1e-12 * f.norm());
    }
}

TEST_CASE("periodic embedding gives exactly 2-periodic networks") {
    NetworkSpec spec;
    spec.family = Family::periodic_mlp;
    spec.input_dim = 3;
    spec.output_dim = 1;
    spec.widths = {10, 10};
    spec.embedding = PeriodicEmbeddingSpec{6, {}};
    ParamVec theta = init_params(spec, 19);
    Rng rng(20);
    Matrix pts = rng.uniform_box(12, 3);
    Matrix base = forward_batch(spec, theta, pts);
    for (int k = 0; k < 3; ++k) {
        Matrix shifted = pts;
        shifted.col(k).array() += 2.0;
        Matrix moved = forward_batch(spec, theta, shifted);
        CHECK((moved - base).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("Laplacian features contract linearly with directions") {
    NetworkSpec spec = small_mlp(2, {5});
    ParamVec theta = init_params(spec, 23);
    const int m = param_count(spec);
    std::vector<int> full(m);
    for (int i = 0; i < m; ++i) full[i] = i;
    Rng rng(24);
    Matrix pts = rng.uniform_box(7, 2);
    Vector v(m);
    for (int i = 0; i < m; ++i) v(i) = rng.normal();

    TangentBlock tb = tangent_features(spec, theta, pts, full, true);
    DirectionalEval de = tb_directional(spec, theta, v, pts, true);
    CHECK((tb.spatial_laplacians * v - de.laps).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((tb.features * v - de.values.col(0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("error paths: subspace bounds and non-smooth activations") {
    NetworkSpec spec = small_mlp(1, {3});
    ParamVec theta = init_params(spec, 30);
    Matrix pts(2, 1);
    pts << 0.1, 0.2;
    try {
        tangent_features(spec, theta, pts, {param_count(spec)}, false);
        FAIL("expected index_out_of_range");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::index_out_of_range);
    }
    try {
        tangent_features(spec, theta, pts, {1, 1}, false);
        FAIL("expected strictly increasing check");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::index_out_of_range);
    }

    NetworkSpec requ = small_mlp(1, {3});
    requ.activation = Activation::relu_smooth;
    ParamVec theta2 = init_params(requ, 31);
    CHECK_NOTHROW(tangent_features(requ, theta2, pts, {0}, false));
    try {
        tangent_features(requ, theta2, pts, {0}, true);
        FAIL("expected non_smooth_activation");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::non_smooth_activation);
    }
}

TEST_CASE("refit improves or returns the original parameters") {
    // already-optimal target: loss must not increase
    NetworkSpec spec = small_mlp(1, {6});
    ParamVec theta = init_params(spec, 33);
    SampledFunction self = [&](const Matrix& pts) {
        return Vector(forward_batch(spec, theta, pts).col(0));
    };
    RefitResult rr = refit(spec, theta, self, 50, 1e-3, 77);
    CHECK(rr.loss_after <= rr.loss_before + 1e-12);

    // convex case: f = theta z toward 2z
    NetworkSpec lin = small_mlp(1, {}, false);
    ParamVec th0;
    th0.v = Vector::Constant(1, 0.0);
    SampledFunction target = [](const Matrix& pts) { return Vector(2.0 * pts.col(0)); };
    RefitResult lr = refit(lin, th0, target, 4000, 0.05, 78);
    CHECK(lr.theta.v(0) == doctest::Approx(2.0).epsilon(1e-3));

    // 2-layer net toward sin(pi z): relative L2 error on a fine grid <= 5e-2
    NetworkSpec net = small_mlp(1, {32, 32}, true);
    net.activation = Activation::sin_fn;
    ParamVec init = init_params(net, 35);
    SampledFunction sine = [](const Matrix& pts) {
        Vector out(pts.rows());
        for (Eigen::Index i = 0; i < pts.rows(); ++i) out(i) = std::sin(M_PI * pts(i, 0));
        return out;
    };
    RefitOptions opts;
    opts.batch = 128;
    RefitResult nr = refit(net, init, sine, 2000, 0.1, 79, opts);
    Matrix grid(401, 1);
    for (int i = 0; i <= 400; ++i) grid(i, 0) = -1.0 + 2.0 * i / 400;
    Vector fit = forward_batch(net, nr.theta, grid).col(0);
    Vector exact = sine(grid);
    CHECK((fit - exact).norm() / exact.norm() <= 5e-2);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    NetworkSpec spec;
    spec.family = Family::mmnn_lite;
    spec.input_dim = 2;
    spec.output_dim = 1;
    spec.widths = {8, 8};
    spec.mmnn_rank = 3;
    spec.embedding = PeriodicEmbeddingSpec{4, {}};
    ParamVec theta = init_params(spec, 91);

    const std::string text = checkpoint_to_json(spec, theta);
    auto [spec2, theta2] = checkpoint_from_json(text);
    CHECK(spec2.family == spec.family);
    CHECK(spec2.widths == spec.widths);
    CHECK(spec2.mmnn_rank == spec.mmnn_rank);
    REQUIRE(theta2.v.size() == theta.v.size());
    CHECK(std::memcmp(theta.v.data(), theta2.v.data(), sizeof(double) * theta.v.size()) == 0);

    Rng rng(92);
    Matrix pts = rng.uniform_box(5, 2);
    CHECK((forward_batch(spec, theta, pts) - forward_batch(spec2, theta2, pts))
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("residual and mmnn_lite families evaluate and differentiate") {
    for (auto family : {Family::residual, Family::mmnn_lite}) {
        NetworkSpec spec;
        spec.family = family;
        spec.input_dim = 2;
        spec.output_dim = 1;
        spec.widths = {8, 8};
        spec.mmnn_rank = 4;
        ParamVec theta = init_params(spec, 101);
        const int m = param_count(spec);
        Rng rng(102);
        Matrix pts = rng.uniform_box(4, 2);
        std::vector<int> sub;
        for (int i = 0; i < m; i += 5) sub.push_back(i);
        TangentBlock tb = tangent_features(spec, theta, pts, sub, false);

        const double eps = 1e-6;
        for (std::size_t c = 0; c < sub.size(); c += 7) {
            ParamVec tp = theta, tm = theta;
            tp.v(sub[c]) += eps;
            tm.v(sub[c]) -= eps;
            Vector fd = (forward_batch(spec, tp, pts).col(0) - forward_batch(spec, tm, pts).col(0)) /
                        (2 * eps);
            CHECK((fd - tb.features.col(c)).cwiseAbs().maxCoeff() <= 1e-8);
        }
    }
}
