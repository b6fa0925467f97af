#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtb/linalg.hpp"
#include "dtb/oracle.hpp"

#include <Eigen/Eigenvalues>
#include <cstring>

using namespace dtb;
using linalg::LstsqOptions;

namespace {

Matrix random_matrix(int n, int m, std::uint64_t seed) {
    Rng rng(seed);
    Matrix A(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) A(i, j) = rng.normal();
    return A;
}

Vector random_vector(int n, std::uint64_t seed) {
    Rng rng(seed);
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

Matrix random_psd(int n, std::uint64_t seed, int rank = -1) {
    if (rank < 0) rank = n;
    Matrix B = random_matrix(n, rank, seed);
    return B * B.transpose();
}

}  // namespace

TEST_CASE("lstsq_svd solves exact and rank-deficient systems") {
    LstsqOptions opts;
    opts.rcond = 1e-12;

    Matrix A(1, 1);
    A << 2.0;
    Vector b(1);
    b << 6.0;
    CHECK(linalg::lstsq_svd(A, b, opts)(0) == doctest::Approx(3.0).epsilon(1e-14));

    Matrix A2(2, 2);
    A2 << 1, 1, 1, 1;
    Vector b2(2);
    b2 << 2, 2;
    Vector x2 = linalg::lstsq_svd(A2, b2, opts);
    CHECK(x2(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x2(1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("lstsq_svd matches the dense pseudo-inverse oracle") {
    Matrix A = random_matrix(20, 5, 11);
    Vector b = random_vector(20, 12);
    Vector x = linalg::lstsq_svd(A, b, {1e-12, LstsqOptions::Method::svd_truncated});
    Vector xo = oracle::pinv_oracle(A, b);
    CHECK((x - xo).norm() <= 1e-10 * xo.norm());
}

TEST_CASE("lstsq_svd rejects bad input") {
    Matrix A(2, 2);
    A << 1, 2, 3, 4;
    Vector b(2);
    b << 1, std::numeric_limits<double>::quiet_NaN();
    try {
        linalg::lstsq_svd(A, b);
        FAIL("expected non_finite");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::non_finite);
    }

    Matrix empty(0, 0);
    Vector be(0);
    try {
        linalg::lstsq_svd(empty, be);
        FAIL("expected empty_system");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_system);
    }
}

TEST_CASE("solve_psd handles identity, truncation and symmetry errors") {
    LstsqOptions opts;
    Matrix I3 = Matrix::Identity(3, 3);
    Vector p(3);
    p << 1, 2, 3;
    Vector x = linalg::solve_psd(I3, p, opts);
    CHECK((x - p).norm() <= 1e-12);

    Matrix G(2, 2);
    G << 1, 0, 0, 0;
    Vector p2(2);
    p2 << 4, 7;
    Vector x2 = linalg::solve_psd(G, p2, opts);
    CHECK(x2(0) == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(x2(1) == doctest::Approx(0.0));

    Matrix bad(2, 2);
    bad << 1, 0.5, -0.5, 1;
    try {
        linalg::solve_psd(bad, p2, opts);
        FAIL("expected not_symmetric");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::not_symmetric);
    }
}

TEST_CASE("normal-equation route reproduces the J-form fitted values") {
    Matrix J = random_matrix(40, 8, 21);
    Vector g = random_vector(40, 22);
    const double n = 40.0;
    Matrix G = (J.transpose() * J) / n;
    Vector p = (J.transpose() * g) / n;
    Vector ag = linalg::solve_psd(G, p, {1e-12, LstsqOptions::Method::svd_truncated});
    Vector aj = linalg::lstsq_svd(J, g, {1e-12, LstsqOptions::Method::svd_truncated});
    CHECK((J * ag - J * aj).norm() <= 1e-8 * (J * aj).norm());

    Vector an = linalg::lstsq_svd(J, g, {1e-10, LstsqOptions::Method::normal_equations});
    CHECK((J * an - J * aj).norm() <= 1e-8 * (J * aj).norm());
}

TEST_CASE("generalized_halfstep closed forms") {
    LstsqOptions opts;
    Matrix G = random_psd(6, 31) + Matrix::Identity(6, 6);
    Vector s = random_vector(6, 32);

    Vector r0 = linalg::generalized_halfstep(G, Matrix::Zero(6, 6), s, opts);
    CHECK((r0 - s).norm() <= 1e-10 * s.norm());

    Matrix I1 = Matrix::Identity(3, 3);
    Vector s1 = random_vector(3, 33);
    Vector r1 = linalg::generalized_halfstep(I1, 2.0 * I1, s1, opts);
    CHECK(r1.norm() <= 1e-12);

    Matrix Gs(1, 1), As(1, 1);
    Gs << 1.0;
    As << 2.0 / 3.0;
    Vector ss(1);
    ss << 3.0;
    Vector rs = linalg::generalized_halfstep(Gs, As, ss, opts);
    CHECK(rs(0) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("full-rank solutions satisfy the normal equations") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Matrix A = random_matrix(30, 10, seed);
        Vector b = random_vector(30, seed + 100);
        Vector x = linalg::lstsq_svd(A, b, {1e-12, LstsqOptions::Method::svd_truncated});
        CHECK((A.transpose() * (A * x - b)).norm() <= 1e-8 * (A.transpose() * b).norm());
    }
}

TEST_CASE("minimum-norm solutions are orthogonal to the numerical null space") {
    // Clean rank deficiency from a low-rank product.
    Matrix A = random_matrix(25, 4, 41) * random_matrix(4, 10, 42);
    Vector b = random_vector(25, 43);
    Vector x = linalg::lstsq_svd(A, b, {1e-10, LstsqOptions::Method::svd_truncated});

    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) < 1e-10 * sv(0))
            CHECK(std::abs(svd.matrixV().col(i).dot(x)) <= 1e-8 * x.norm());
    }
}

TEST_CASE("halfstep pencil eigenvalues stay in the unit disc") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Matrix G = random_psd(30, 1000 + seed) + 1e-6 * Matrix::Identity(30, 30);
        Matrix A = random_psd(30, 2000 + seed, 12);
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
            Eigen::MatrixXd(G - 0.5 * A), Eigen::MatrixXd(G + 0.5 * A));
        REQUIRE(es.info() == Eigen::Success);
        CHECK(es.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-10);
    }
}

TEST_CASE("identical inputs give bit-identical solutions") {
    Matrix A = random_matrix(50, 20, 77);
    Vector b = random_vector(50, 78);
    Vector x1 = linalg::lstsq_svd(A, b);
    Vector x2 = linalg::lstsq_svd(A, b);
    CHECK(std::memcmp(x1.data(), x2.data(), sizeof(double) * x1.size()) == 0);

    Matrix G = random_psd(20, 79);
    Vector p = random_vector(20, 80);
    Vector y1 = linalg::solve_psd(G, p);
    Vector y2 = linalg::solve_psd(G, p);
    CHECK(std::memcmp(y1.data(), y2.data(), sizeof(double) * y1.size()) == 0);
}

TEST_CASE("rcond bounds are validated") {
    Matrix A(1, 1);
    A << 1.0;
    Vector b(1);
    b << 1.0;
    CHECK_THROWS_AS(linalg::lstsq_svd(A, b, {0.0, LstsqOptions::Method::svd_truncated}), Error);
    CHECK_THROWS_AS(linalg::lstsq_svd(A, b, {1.0, LstsqOptions::Method::svd_truncated}), Error);
}
