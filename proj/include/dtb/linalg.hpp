#pragma once

#include "dtb/common.hpp"

namespace dtb::linalg {

struct LstsqOptions {
    double rcond = 1e-6;  // relative singular/eigenvalue cutoff, in (0,1)
    enum class Method { svd_truncated, normal_equations } method = Method::svd_truncated;
};

/// Minimum-norm least-squares solution of A x = b with singular values
/// below rcond * sigma_max truncated to zero.
Vector lstsq_svd(const Matrix& A, const Vector& b, const LstsqOptions& opts = {});

/// Minimum-norm solution of G x = p for symmetric PSD G, eigenvalues below
/// rcond * lambda_max truncated. G is symmetrized as (G + G^T)/2 before
/// factorization; asymmetry beyond 1e-8 relative is an error.
Vector solve_psd(const Matrix& G, const Vector& p, const LstsqOptions& opts = {});

/// [G + A/2]^+ [G - A/2] s for symmetric PSD G, A.
Vector generalized_halfstep(const Matrix& G, const Matrix& A, const Vector& s,
                            const LstsqOptions& opts = {});

/// SVD factored once; minimum-norm solves at any rcond afterwards.
/// Used by sweeps that vary the truncation level on one system.
class SvdSolver {
public:
    explicit SvdSolver(const Matrix& A);
    Vector solve(const Vector& b, double rcond) const;
    const Vector& singular_values() const { return sv_; }

private:
    Matrix u_, v_;
    Vector sv_;
};

/// Truncated pseudo-inverse of a symmetric PSD matrix, factored once and
/// applied many times. Used by iterative schemes that reuse one pencil.
class PsdPinv {
public:
    PsdPinv(const Matrix& G, double rcond);
    Vector apply(const Vector& p) const;
    int rank() const { return rank_; }
    double lambda_max() const { return lambda_max_; }

private:
    Matrix vecs_;       // columns = kept eigenvectors
    Vector inv_vals_;   // reciprocals of kept eigenvalues
    int rank_ = 0;
    double lambda_max_ = 0.0;
};

void check_symmetric(const Matrix& G, double rel_tol = 1e-8);

}  // namespace dtb::linalg
