#include "dtb/oracle.hpp"

#include <fftw3.h>

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace dtb::oracle {

namespace {

bool power_of_two(int m) { return m >= 1 && (m & (m - 1)) == 0; }

void check_grid(const SpectralGrid& g) {
    if (g.dim != 1 && g.dim != 2) fail(Errc::bad_size, "spectral grid supports d in {1,2}");
    if (g.modes < 16 || !power_of_two(g.modes))
        fail(Errc::bad_size, "modes must be a power of two >= 16");
}

// Integer frequency of FFT bin j on a period-2 domain.
inline double freq(int j, int M) { return j <= M / 2 ? j : j - M; }

struct Fft {
    int dim, M, n;
    std::vector<std::complex<double>> buf;
    fftw_plan fwd, bwd;

    Fft(int dim_, int M_) : dim(dim_), M(M_), n(dim_ == 1 ? M_ : M_ * M_), buf(n) {
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        if (dim == 1) {
            fwd = fftw_plan_dft_1d(M, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
            bwd = fftw_plan_dft_1d(M, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
        } else {
            fwd = fftw_plan_dft_2d(M, M, p, p, FFTW_FORWARD, FFTW_ESTIMATE);
            bwd = fftw_plan_dft_2d(M, M, p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
        }
    }
    ~Fft() {
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
    }
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;

    void forward(const Vector& real_field) {
        for (int i = 0; i < n; ++i) buf[i] = real_field(i);
        fftw_execute(fwd);
    }
    void backward(Vector& real_field) {
        fftw_execute(bwd);
        const double scale = 1.0 / n;
        for (int i = 0; i < n; ++i) real_field(i) = buf[i].real() * scale;
    }

    // -pi^2 |f|^2 per bin (Laplacian symbol on period-2 boxes).
    std::vector<double> laplacian_symbol() const {
        std::vector<double> sym(n);
        if (dim == 1) {
            for (int j = 0; j < M; ++j) {
                const double f = freq(j, M);
                sym[j] = -M_PI * M_PI * f * f;
            }
        } else {
            for (int jx = 0; jx < M; ++jx)
                for (int jy = 0; jy < M; ++jy) {
                    const double fx = freq(jx, M), fy = freq(jy, M);
                    sym[jx * M + jy] = -M_PI * M_PI * (fx * fx + fy * fy);
                }
        }
        return sym;
    }

    double tail_energy_fraction() const {
        // buf holds a spectrum; tail = bins beyond the 2/3 dealiasing radius
        double total = 0.0, tail = 0.0;
        const double cutoff = M / 3.0;
        for (int i = 0; i < n; ++i) {
            const double e = std::norm(buf[i]);
            total += e;
            double fmax;
            if (dim == 1) {
                fmax = std::abs(freq(i, M));
            } else {
                fmax = std::max(std::abs(freq(i / M, M)), std::abs(freq(i % M, M)));
            }
            if (fmax > cutoff) tail += e;
        }
        return total > 0.0 ? tail / total : 0.0;
    }
};

}  // namespace

int SpectralGrid::count() const { return dim == 1 ? modes : modes * modes; }

Matrix SpectralGrid::points() const {
    check_grid(*this);
    const int M = modes;
    Matrix pts(count(), dim);
    if (dim == 1) {
        for (int j = 0; j < M; ++j) pts(j, 0) = -1.0 + 2.0 * j / M;
    } else {
        for (int jx = 0; jx < M; ++jx)
            for (int jy = 0; jy < M; ++jy) {
                pts(jx * M + jy, 0) = -1.0 + 2.0 * jx / M;
                pts(jx * M + jy, 1) = -1.0 + 2.0 * jy / M;
            }
    }
    return pts;
}

SpectralRun spectral_evolve(const SpectralGrid& grid, double nu, SpectralNonlinearity nonlin,
                            const Vector& phi_on_grid, double T, int steps,
                            const std::vector<double>& snapshot_times, SpectralRule rule) {
    check_grid(grid);
    if (steps < 1 || !(T > 0.0)) fail(Errc::bad_size, "need T > 0 and steps >= 1");
    if (phi_on_grid.size() != grid.count()) fail(Errc::dimension_mismatch, "phi grid size mismatch");
    if (rule != SpectralRule::strang_exact && nonlin != SpectralNonlinearity::none)
        fail(Errc::bad_size, "matched time rules support the heat equation only");

    Fft fft(grid.dim, grid.modes);
    const auto sym = fft.laplacian_symbol();
    const double h = T / steps;

    std::vector<double> half_factor(sym.size()), full_factor(sym.size());
    for (std::size_t i = 0; i < sym.size(); ++i) {
        switch (rule) {
            case SpectralRule::strang_exact:
                half_factor[i] = std::exp(0.5 * h * nu * sym[i]);
                full_factor[i] = std::exp(h * nu * sym[i]);
                break;
            case SpectralRule::crank_nicolson:
                full_factor[i] = (1.0 + 0.5 * h * nu * sym[i]) / (1.0 - 0.5 * h * nu * sym[i]);
                break;
            case SpectralRule::forward_euler:
                full_factor[i] = 1.0 + h * nu * sym[i];
                break;
        }
    }

    auto want_snapshot = [&](double t) {
        for (double s : snapshot_times)
            if (std::abs(t - s) < 1e-9) return true;
        return false;
    };

    SpectralRun run;
    Vector u = phi_on_grid;
    auto record = [&](double t) {
        run.times.push_back(t);
        run.fields.push_back(u);
    };
    if (want_snapshot(0.0)) record(0.0);

    const bool reacting = nonlin == SpectralNonlinearity::allen_cahn;
    auto diffuse = [&](const std::vector<double>& factor) {
        fft.forward(u);
        for (int i = 0; i < fft.n; ++i) fft.buf[i] *= factor[i];
        fft.backward(u);
    };
    auto react_rk2 = [&](double dt) {
        // Heun step of du/dt = u - u^3.
        for (int i = 0; i < fft.n; ++i) {
            const double u0 = u(i);
            const double k1 = u0 - u0 * u0 * u0;
            const double up = u0 + dt * k1;
            const double k2 = up - up * up * up;
            u(i) = u0 + 0.5 * dt * (k1 + k2);
        }
    };

    for (int k = 0; k < steps; ++k) {
        if (rule == SpectralRule::strang_exact && reacting) {
            diffuse(half_factor);
            react_rk2(h);
            diffuse(half_factor);
        } else {
            diffuse(full_factor);
        }
        const double t = (k + 1) * h;
        if (want_snapshot(t)) record(t);
    }

    fft.forward(u);
    run.tail_fraction = fft.tail_energy_fraction();
    run.aliasing_warning = run.tail_fraction > 1e-8;
    return run;
}

Vector spectral_one_step(const SpectralGrid& grid, double nu, const Vector& field, double h,
                         SpectralRule rule) {
    SpectralRun r = spectral_evolve(grid, nu, SpectralNonlinearity::none, field, h, 1, {h}, rule);
    return r.fields.back();
}

namespace {

Vector restrict_to_coarse(const Vector& fine, int dim, int Mc) {
    // Fine grid has 2*Mc points per dimension; coarse points are the even ones.
    const int Mf = 2 * Mc;
    if (dim == 1) {
        Vector out(Mc);
        for (int j = 0; j < Mc; ++j) out(j) = fine(2 * j);
        return out;
    }
    Vector out(Mc * Mc);
    for (int jx = 0; jx < Mc; ++jx)
        for (int jy = 0; jy < Mc; ++jy) out(jx * Mc + jy) = fine((2 * jx) * Mf + 2 * jy);
    return out;
}

std::string run_cache_path(const std::string& cache_dir, std::uint64_t key) {
    return cache_dir + "/spectral_" + to_hex(key) + ".csv";
}

bool load_cached_run(const std::string& path, int count, SpectralRun& run) {
    std::ifstream in(path);
    if (!in) return false;
    std::string header;
    std::getline(in, header);
    double t;
    char comma;
    std::vector<double> vals;
    run = SpectralRun{};
    double cur_t = 0.0;
    bool have = false;
    while (in >> t >> comma) {
        double v;
        in >> v;
        if (!have || std::abs(t - cur_t) > 1e-12) {
            if (have) {
                run.times.push_back(cur_t);
                run.fields.push_back(Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
            }
            vals.clear();
            cur_t = t;
            have = true;
        }
        vals.push_back(v);
    }
    if (have) {
        run.times.push_back(cur_t);
        run.fields.push_back(Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    for (const auto& f : run.fields)
        if (f.size() != count) return false;
    return !run.fields.empty();
}

void store_cached_run(const std::string& path, const SpectralRun& run) {
    std::ofstream out(path);
    out << "t,value\n";
    char buf[64];
    for (std::size_t s = 0; s < run.fields.size(); ++s)
        for (Eigen::Index i = 0; i < run.fields[s].size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", run.times[s], run.fields[s](i));
            out << buf;
        }
}

}  // namespace

SpectralRun self_converged_reference(const SpectralGrid& grid, double nu,
                                     SpectralNonlinearity nonlin, const ScalarField& phi, double T,
                                     int steps, const std::vector<double>& snapshot_times,
                                     SpectralRule rule, double gate, const std::string& cache_dir,
                                     const std::string& phi_id) {
    check_grid(grid);
    std::uint64_t key = fnv1a(&grid.dim, sizeof(grid.dim));
    key = fnv1a(&grid.modes, sizeof(grid.modes), key);
    key = fnv1a(&nu, sizeof(nu), key);
    key = fnv1a(&nonlin, sizeof(nonlin), key);
    key = fnv1a(&T, sizeof(T), key);
    key = fnv1a(&steps, sizeof(steps), key);
    for (double s : snapshot_times) key = fnv1a(&s, sizeof(s), key);
    key = fnv1a(&rule, sizeof(rule), key);
    key = fnv1a(phi_id.data(), phi_id.size(), key);

    if (!cache_dir.empty()) {
        std::filesystem::create_directories(cache_dir);
        SpectralRun cached;
        if (load_cached_run(run_cache_path(cache_dir, key), grid.count(), cached)) return cached;
    }

    auto phi_values = [&](const SpectralGrid& g) {
        Matrix pts = g.points();
        return phi.values(pts);
    };
    SpectralRun coarse =
        spectral_evolve(grid, nu, nonlin, phi_values(grid), T, steps, snapshot_times, rule);
    SpectralGrid fine_grid{grid.dim, grid.modes * 2};
    SpectralRun fine =
        spectral_evolve(fine_grid, nu, nonlin, phi_values(fine_grid), T, 2 * steps, snapshot_times, rule);
    if (coarse.fields.size() != fine.fields.size())
        fail(Errc::step_failure, "snapshot mismatch in self-convergence check");
    for (std::size_t s = 0; s < coarse.fields.size(); ++s) {
        Vector restricted = restrict_to_coarse(fine.fields[s], grid.dim, grid.modes);
        const double ref = restricted.norm();
        const double diff = (coarse.fields[s] - restricted).norm();
        if (diff > gate * std::max(ref, 1e-30))
            fail(Errc::step_failure, "spectral reference failed self-convergence gate");
    }

    if (!cache_dir.empty()) store_cached_run(run_cache_path(cache_dir, key), coarse);
    return coarse;
}

void ho_closed_form(const Vector& x0, const Vector& v0, const Vector& omega, double t, Vector& x,
                    Vector& v) {
    if (x0.size() != v0.size() || x0.size() != omega.size())
        fail(Errc::dimension_mismatch, "ho_closed_form size mismatch");
    x.resize(x0.size());
    v.resize(x0.size());
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        const double w = omega(i);
        if (!(w > 0.0)) fail(Errc::bad_size, "omega must be positive");
        x(i) = x0(i) * std::cos(w * t) + v0(i) / w * std::sin(w * t);
        v(i) = -x0(i) * w * std::sin(w * t) + v0(i) * std::cos(w * t);
    }
}

double scalar_ode_oracle(const std::function<double(double)>& f, double u0, double T, double tol) {
    namespace odeint = boost::numeric::odeint;
    using state = std::array<double, 1>;
    state u{u0};
    auto sys = [&](const state& s, state& dsdt, double) { dsdt[0] = f(s[0]); };
    try {
        auto stepper = odeint::make_controlled(tol, tol, odeint::runge_kutta_fehlberg78<state>());
        odeint::integrate_adaptive(stepper, sys, u, 0.0, T, std::min(1e-3, T));
    } catch (const std::exception& e) {
        fail(Errc::step_failure, std::string("ODE integration failed: ") + e.what());
    }
    if (!std::isfinite(u[0])) fail(Errc::step_failure, "ODE solution blew up");
    return u[0];
}

Vector pinv_oracle(const Matrix& A, const Vector& b) {
    if (A.rows() > 200 || A.cols() > 200) fail(Errc::bad_size, "pinv_oracle is for small systems");
    if (A.rows() != b.size()) fail(Errc::dimension_mismatch, "pinv_oracle shape mismatch");

    // Work on a tall copy; wide inputs are handled through the transpose
    // identity pinv(A) = pinv(A^T)^T.
    const bool wide = A.cols() > A.rows();
    Matrix B = wide ? Matrix(A.transpose()) : A;
    const int n = static_cast<int>(B.rows());
    const int m = static_cast<int>(B.cols());
    Matrix V = Matrix::Identity(m, m);

    // One-sided Jacobi: orthogonalize column pairs by plane rotations.
    const double tol = 1e-14;
    for (int sweep = 0; sweep < 60; ++sweep) {
        double max_off = 0.0;
        for (int p = 0; p < m - 1; ++p)
            for (int q = p + 1; q < m; ++q) {
                const double app = B.col(p).squaredNorm();
                const double aqq = B.col(q).squaredNorm();
                const double apq = B.col(p).dot(B.col(q));
                const double denom = std::sqrt(app * aqq);
                if (denom <= 0.0) continue;
                max_off = std::max(max_off, std::abs(apq) / denom);
                if (std::abs(apq) <= tol * denom) continue;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (int i = 0; i < n; ++i) {
                    const double bp = B(i, p), bq = B(i, q);
                    B(i, p) = cs * bp - sn * bq;
                    B(i, q) = sn * bp + cs * bq;
                }
                for (int i = 0; i < m; ++i) {
                    const double vp = V(i, p), vq = V(i, q);
                    V(i, p) = cs * vp - sn * vq;
                    V(i, q) = sn * vp + cs * vq;
                }
            }
        if (max_off < tol) break;
    }

    Vector sigma(m);
    for (int j = 0; j < m; ++j) sigma(j) = B.col(j).norm();
    const double smax = sigma.maxCoeff();
    const double cutoff = 1e-12 * smax;

    // pinv(B) = V diag(1/sigma) U^T with U = B diag(1/sigma).
    auto apply_pinv_tall = [&](const Vector& rhs) {
        Vector y = Vector::Zero(m);
        for (int j = 0; j < m; ++j) {
            if (sigma(j) <= cutoff || sigma(j) == 0.0) continue;
            const double uj_dot = B.col(j).dot(rhs) / sigma(j);
            y(j) = uj_dot / sigma(j);
        }
        return Vector(V * y);
    };
    auto apply_pinv_t_tall = [&](const Vector& rhs) {
        // pinv(B^T) = U diag(1/sigma) V^T applied to rhs of length m
        Vector y = V.transpose() * rhs;
        Vector out = Vector::Zero(n);
        for (int j = 0; j < m; ++j) {
            if (sigma(j) <= cutoff || sigma(j) == 0.0) continue;
            out += B.col(j) * (y(j) / (sigma(j) * sigma(j)));
        }
        return out;
    };

    return wide ? apply_pinv_t_tall(b) : apply_pinv_tall(b);
}

}  // namespace dtb::oracle
