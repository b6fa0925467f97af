#include "dtb/linalg.hpp"

#include <Eigen/SVD>
#include <Eigen/Eigenvalues>

namespace dtb::linalg {

namespace {

void check_opts(const LstsqOptions& opts) {
    if (!(opts.rcond > 0.0 && opts.rcond < 1.0))
        fail(Errc::bad_size, "rcond must lie in (0,1)");
}

}  // namespace

void check_symmetric(const Matrix& G, double rel_tol) {
    const double scale = G.cwiseAbs().maxCoeff();
    const double asym = (G - G.transpose()).cwiseAbs().maxCoeff();
    if (asym > rel_tol * std::max(scale, 1e-300))
        fail(Errc::not_symmetric, "matrix asymmetry exceeds tolerance");
}

Vector lstsq_svd(const Matrix& A, const Vector& b, const LstsqOptions& opts) {
    check_opts(opts);
    if (A.rows() == 0 || A.cols() == 0) fail(Errc::empty_system, "empty least-squares system");
    if (A.rows() != b.size()) fail(Errc::dimension_mismatch, "A rows != b size");
    if (!all_finite(A) || !all_finite(b)) fail(Errc::non_finite, "non-finite entries in lstsq input");

    if (opts.method == LstsqOptions::Method::normal_equations) {
        const double n = static_cast<double>(A.rows());
        Matrix G = (A.transpose() * A) / n;
        Vector p = (A.transpose() * b) / n;
        LstsqOptions psd_opts = opts;
        psd_opts.method = LstsqOptions::Method::svd_truncated;
        // Eigenvalues of G are squared singular values of A.
        psd_opts.rcond = opts.rcond * opts.rcond;
        return solve_psd(G, p, psd_opts);
    }

    return SvdSolver(A).solve(b, opts.rcond);
}

SvdSolver::SvdSolver(const Matrix& A) {
    // BDCSVD falls back to JacobiSVD internally for small sizes.
    Eigen::BDCSVD<Matrix> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    u_ = svd.matrixU();
    v_ = svd.matrixV();
    sv_ = svd.singularValues();
}

Vector SvdSolver::solve(const Vector& b, double rcond) const {
    const double cutoff = sv_.size() > 0 ? rcond * sv_(0) : 0.0;
    Vector utb = u_.transpose() * b;
    Vector scaled = Vector::Zero(sv_.size());
    for (Eigen::Index i = 0; i < sv_.size(); ++i)
        if (sv_(i) > cutoff && sv_(i) > 0.0) scaled(i) = utb(i) / sv_(i);
    return v_ * scaled;
}

Vector solve_psd(const Matrix& G, const Vector& p, const LstsqOptions& opts) {
    check_opts(opts);
    if (G.rows() == 0) fail(Errc::empty_system, "empty PSD system");
    if (G.rows() != G.cols() || G.rows() != p.size())
        fail(Errc::dimension_mismatch, "solve_psd shape mismatch");
    if (!all_finite(G) || !all_finite(p)) fail(Errc::non_finite, "non-finite entries in solve_psd input");
    check_symmetric(G);

    PsdPinv pinv(G, opts.rcond);
    return pinv.apply(p);
}

PsdPinv::PsdPinv(const Matrix& G, double rcond) {
    Matrix S = 0.5 * (G + G.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    if (es.info() != Eigen::Success) fail(Errc::step_failure, "eigendecomposition failed");
    const Vector& vals = es.eigenvalues();
    lambda_max_ = vals.size() > 0 ? vals(vals.size() - 1) : 0.0;
    const double cutoff = rcond * std::max(lambda_max_, 0.0);
    std::vector<Eigen::Index> kept;
    for (Eigen::Index i = 0; i < vals.size(); ++i)
        if (vals(i) > cutoff && vals(i) > 0.0) kept.push_back(i);
    rank_ = static_cast<int>(kept.size());
    vecs_.resize(S.rows(), rank_);
    inv_vals_.resize(rank_);
    for (int j = 0; j < rank_; ++j) {
        vecs_.col(j) = es.eigenvectors().col(kept[j]);
        inv_vals_(j) = 1.0 / vals(kept[j]);
    }
}

Vector PsdPinv::apply(const Vector& p) const {
    if (rank_ == 0) return Vector::Zero(p.size());
    Vector proj = vecs_.transpose() * p;
    proj.array() *= inv_vals_.array();
    return vecs_ * proj;
}

Vector generalized_halfstep(const Matrix& G, const Matrix& A, const Vector& s,
                            const LstsqOptions& opts) {
    check_opts(opts);
    if (G.rows() != A.rows() || G.cols() != A.cols() || G.rows() != s.size())
        fail(Errc::dimension_mismatch, "generalized_halfstep shape mismatch");
    check_symmetric(G);
    check_symmetric(A);
    Vector rhs = (G - 0.5 * A) * s;
    return solve_psd(G + 0.5 * A, rhs, opts);
}

}  // namespace dtb::linalg
