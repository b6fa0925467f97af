#pragma once

#include <cmath>

namespace dtb {

/// Scalar 2-jet: value and first/second derivative along one line z(s) = z0 + s*e_k.
/// Propagating one Jet2 per coordinate gives exact gradients and Laplacians of
/// closed-form expressions without finite differencing.
struct Jet2 {
    double v = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;

    Jet2() = default;
    Jet2(double value) : v(value) {}
    Jet2(double value, double first, double second) : v(value), d1(first), d2(second) {}
};

inline Jet2 operator+(const Jet2& a, const Jet2& b) { return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2}; }
inline Jet2 operator-(const Jet2& a, const Jet2& b) { return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2}; }
inline Jet2 operator-(const Jet2& a) { return {-a.v, -a.d1, -a.d2}; }
inline Jet2 operator*(const Jet2& a, const Jet2& b) {
    return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2.0 * a.d1 * b.d1 + a.v * b.d2};
}
inline Jet2 operator/(const Jet2& a, const Jet2& b) {
    const double iv = 1.0 / b.v;
    const double q = a.v * iv;
    const double q1 = (a.d1 - q * b.d1) * iv;
    const double q2 = (a.d2 - 2.0 * q1 * b.d1 - q * b.d2) * iv;
    return {q, q1, q2};
}
inline Jet2 operator+(double c, const Jet2& a) { return Jet2(c) + a; }
inline Jet2 operator+(const Jet2& a, double c) { return a + Jet2(c); }
inline Jet2 operator-(double c, const Jet2& a) { return Jet2(c) - a; }
inline Jet2 operator-(const Jet2& a, double c) { return a - Jet2(c); }
inline Jet2 operator*(double c, const Jet2& a) { return {c * a.v, c * a.d1, c * a.d2}; }
inline Jet2 operator*(const Jet2& a, double c) { return c * a; }
inline Jet2 operator/(const Jet2& a, double c) { return a * (1.0 / c); }
inline Jet2 operator/(double c, const Jet2& a) { return Jet2(c) / a; }

// Chain rule for g(f): (g(f), g'(f) f', g''(f) f'^2 + g'(f) f'').
inline Jet2 chain(double g, double dg, double ddg, const Jet2& f) {
    return {g, dg * f.d1, ddg * f.d1 * f.d1 + dg * f.d2};
}

inline Jet2 sin(const Jet2& a) { using std::sin; using std::cos; return chain(sin(a.v), cos(a.v), -sin(a.v), a); }
inline Jet2 cos(const Jet2& a) { using std::sin; using std::cos; return chain(cos(a.v), -sin(a.v), -cos(a.v), a); }
inline Jet2 exp(const Jet2& a) { const double e = std::exp(a.v); return chain(e, e, e, a); }
inline Jet2 log(const Jet2& a) { const double iv = 1.0 / a.v; return chain(std::log(a.v), iv, -iv * iv, a); }
inline Jet2 tanh(const Jet2& a) {
    const double t = std::tanh(a.v);
    const double s = 1.0 - t * t;
    return chain(t, s, -2.0 * t * s, a);
}
inline Jet2 sqr(const Jet2& a) { return a * a; }

}  // namespace dtb
