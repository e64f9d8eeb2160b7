#pragma once

// Shared numerical kernels: adaptive Gauss-Kronrod quadrature, monotone
// cubic interpolation, an embedded Runge-Kutta stepper, special functions
// (normal tail/quantile, regularized incomplete gamma) and log-space
// combinatorics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdilab {

inline constexpr double kPi = 3.14159265358979323846;

struct consistency_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct unsupported_measure : std::domain_error {
    using std::domain_error::domain_error;
};

// ---------------------------------------------------------------------------
// log-space combinatorics
// ---------------------------------------------------------------------------

inline double log_binomial(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Exact incremental product; used below n = 300 where it cannot overflow.
inline double binomial_exact(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    k = std::min(k, n - k);
    double c = 1.0;
    for (int i = 1; i <= k; ++i) {
        c *= static_cast<double>(n - k + i);
        c /= static_cast<double>(i);
    }
    return c;
}

inline double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// ---------------------------------------------------------------------------
// adaptive Gauss-Kronrod (7,15) quadrature
// ---------------------------------------------------------------------------

namespace detail {

// QUADPACK qk15 abscissae/weights on [-1,1].
inline constexpr double kGk15X[8] = {
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0};
inline constexpr double kGk15Wk[8] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728};
inline constexpr double kGk15Wg[4] = {
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469};

template <typename F>
inline void gk15(const F& f, double a, double b, double& result, double& err) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    double fv[15];
    for (int i = 0; i < 7; ++i) {
        fv[i] = f(c - h * kGk15X[i]);
        fv[14 - i] = f(c + h * kGk15X[i]);
    }
    fv[7] = f(c);
    double resk = kGk15Wk[7] * fv[7];
    double resg = kGk15Wg[3] * fv[7];
    for (int i = 0; i < 7; ++i) {
        resk += kGk15Wk[i] * (fv[i] + fv[14 - i]);
        if (i % 2 == 1) resg += kGk15Wg[i / 2] * (fv[i] + fv[14 - i]);
    }
    result = resk * h;
    err = std::abs((resk - resg) * h);
}

}  // namespace detail

// Globally adaptive bisection on a segment worklist.
template <typename F>
inline double integrate_adaptive(const F& f, double a, double b,
                                 double abs_tol, double rel_tol,
                                 int max_segments = 4000) {
    struct Seg {
        double a, b, val, err;
    };
    if (a == b) return 0.0;
    std::vector<Seg> segs;
    Seg s0{a, b, 0.0, 0.0};
    detail::gk15(f, a, b, s0.val, s0.err);
    segs.push_back(s0);
    double total = s0.val, toterr = s0.err;
    while (static_cast<int>(segs.size()) < max_segments) {
        const double tol = std::max(abs_tol, rel_tol * std::abs(total));
        if (toterr <= tol) break;
        std::size_t worst = 0;
        for (std::size_t i = 1; i < segs.size(); ++i)
            if (segs[i].err > segs[worst].err) worst = i;
        Seg old = segs[worst];
        const double mid = 0.5 * (old.a + old.b);
        if (mid <= old.a || mid >= old.b) break;  // interval exhausted
        Seg l{old.a, mid, 0.0, 0.0}, r{mid, old.b, 0.0, 0.0};
        detail::gk15(f, l.a, l.b, l.val, l.err);
        detail::gk15(f, r.a, r.b, r.val, r.err);
        total += l.val + r.val - old.val;
        toterr += l.err + r.err - old.err;
        segs[worst] = l;
        segs.push_back(r);
    }
    return total;
}

// ---------------------------------------------------------------------------
// monotone cubic interpolation (Fritsch-Carlson) and Hermite evaluation
// ---------------------------------------------------------------------------

class CubicHermite {
public:
    CubicHermite() = default;
    CubicHermite(std::vector<double> x, std::vector<double> y,
                 std::vector<double> d)
        : x_(std::move(x)), y_(std::move(y)), d_(std::move(d)) {
        if (x_.size() < 2 || x_.size() != y_.size() || x_.size() != d_.size())
            throw std::invalid_argument("CubicHermite: bad node arrays");
    }

    // Fritsch-Carlson slopes; interpolant is monotone on monotone data.
    static CubicHermite monotone(std::vector<double> x, std::vector<double> y) {
        const std::size_t n = x.size();
        if (n < 2 || y.size() != n)
            throw std::invalid_argument("monotone interp: need >= 2 nodes");
        std::vector<double> h(n - 1), delta(n - 1), d(n);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x[i + 1] - x[i];
            if (h[i] <= 0.0) throw std::invalid_argument("nodes not increasing");
            delta[i] = (y[i + 1] - y[i]) / h[i];
        }
        if (n == 2) {
            d[0] = d[1] = delta[0];
        } else {
            for (std::size_t i = 1; i + 1 < n; ++i) {
                if (delta[i - 1] * delta[i] <= 0.0) {
                    d[i] = 0.0;
                } else {
                    const double w1 = 2.0 * h[i] + h[i - 1];
                    const double w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            auto endpoint = [](double h0, double h1, double d0, double d1) {
                double d0e = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
                if (d0e * d0 <= 0.0)
                    d0e = 0.0;
                else if (d0 * d1 <= 0.0 && std::abs(d0e) > 3.0 * std::abs(d0))
                    d0e = 3.0 * d0;
                return d0e;
            };
            d[0] = endpoint(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        return CubicHermite(std::move(x), std::move(y), std::move(d));
    }

    double operator()(double xq) const {
        const std::size_t n = x_.size();
        std::size_t i;
        if (xq <= x_.front()) {
            i = 0;
        } else if (xq >= x_.back()) {
            i = n - 2;
        } else {
            i = static_cast<std::size_t>(
                    std::upper_bound(x_.begin(), x_.end(), xq) - x_.begin()) -
                1;
        }
        const double h = x_[i + 1] - x_[i];
        const double t = (xq - x_[i]) / h;
        const double t2 = t * t, t3 = t2 * t;
        const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
        const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
        return h00 * y_[i] + h10 * h * d_[i] + h01 * y_[i + 1] +
               h11 * h * d_[i + 1];
    }

    double x_front() const { return x_.front(); }
    double x_back() const { return x_.back(); }
    double slope_front() const { return d_.front(); }
    double slope_back() const { return d_.back(); }
    double y_front() const { return y_.front(); }
    double y_back() const { return y_.back(); }

private:
    std::vector<double> x_, y_, d_;
};

// ---------------------------------------------------------------------------
// embedded Cash-Karp RK45 for scalar ODEs
// ---------------------------------------------------------------------------

// Integrates dy/dx = f(x, y) from x0 to x1 with adaptive step control.
template <typename F>
inline double rk45_integrate(const F& f, double x0, double y0, double x1,
                             double rel_tol, double abs_tol) {
    static constexpr double a2 = 0.2, a3 = 0.3, a4 = 0.6, a5 = 1.0, a6 = 0.875;
    static constexpr double b21 = 0.2;
    static constexpr double b31 = 3.0 / 40.0, b32 = 9.0 / 40.0;
    static constexpr double b41 = 0.3, b42 = -0.9, b43 = 1.2;
    static constexpr double b51 = -11.0 / 54.0, b52 = 2.5,
                            b53 = -70.0 / 27.0, b54 = 35.0 / 27.0;
    static constexpr double b61 = 1631.0 / 55296.0, b62 = 175.0 / 512.0,
                            b63 = 575.0 / 13824.0, b64 = 44275.0 / 110592.0,
                            b65 = 253.0 / 4096.0;
    static constexpr double c1 = 37.0 / 378.0, c3 = 250.0 / 621.0,
                            c4 = 125.0 / 594.0, c6 = 512.0 / 1771.0;
    static constexpr double dc1 = c1 - 2825.0 / 27648.0,
                            dc3 = c3 - 18575.0 / 48384.0,
                            dc4 = c4 - 13525.0 / 55296.0,
                            dc5 = -277.0 / 14336.0, dc6 = c6 - 0.25;

    const double dir = (x1 >= x0) ? 1.0 : -1.0;
    double x = x0, y = y0;
    double h = dir * std::max(1e-12, std::abs(x1 - x0) / 64.0);
    int steps = 0;
    while (dir * (x1 - x) > 0.0) {
        if (++steps > 2000000)
            throw consistency_error("rk45: step limit exceeded");
        if (dir * (x + h - x1) > 0.0) h = x1 - x;
        const double k1 = f(x, y);
        const double k2 = f(x + a2 * h, y + h * b21 * k1);
        const double k3 = f(x + a3 * h, y + h * (b31 * k1 + b32 * k2));
        const double k4 = f(x + a4 * h, y + h * (b41 * k1 + b42 * k2 + b43 * k3));
        const double k5 =
            f(x + a5 * h, y + h * (b51 * k1 + b52 * k2 + b53 * k3 + b54 * k4));
        const double k6 =
            f(x + a6 * h,
              y + h * (b61 * k1 + b62 * k2 + b63 * k3 + b64 * k4 + b65 * k5));
        const double dy = h * (c1 * k1 + c3 * k3 + c4 * k4 + c6 * k6);
        const double yerr =
            h * (dc1 * k1 + dc3 * k3 + dc4 * k4 + dc5 * k5 + dc6 * k6);
        const double scale =
            abs_tol + rel_tol * std::max(std::abs(y), std::abs(y + dy));
        const double err = std::abs(yerr) / scale;
        if (err <= 1.0) {
            x += h;
            y += dy;
            h *= std::min(5.0, 0.9 * std::pow(std::max(err, 1e-16), -0.2));
        } else {
            h *= std::max(0.1, 0.9 * std::pow(err, -0.25));
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// special functions
// ---------------------------------------------------------------------------

// Upper tail of the standard normal distribution.
inline double normal_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Wichura's PPND16 normal quantile (AS 241), |error| ~ 1e-16.
inline double inv_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("inv_normal_cdf: p must be in (0,1)");
    const double q = p - 0.5;
    double r;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        const double num =
            q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                       6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                     1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                   1.3314166789178437745e2) * r + 3.3871328727963666080e0);
        const double den =
            (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                  3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
              4.2313330701600911252e1) * r + 1.0);
        return num / den;
    }
    r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        const double num =
            (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
              4.63033784615654529590e0) * r + 1.42343711074968357734e0);
        const double den =
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
              2.05319162663775882187e0) * r + 1.0);
        val = num / den;
    } else {
        r -= 5.0;
        const double num =
            (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
              5.46378491116411436990e0) * r + 6.65790464350110377720e0);
        const double den =
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
        val = num / den;
    }
    return (q < 0.0) ? -val : val;
}

// Regularized upper incomplete gamma Q(a, x).
inline double regularized_gamma_q(double a, double x) {
    if (a <= 0.0 || x < 0.0)
        throw std::domain_error("regularized_gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) {
        // P by series, Q = 1 - P
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) break;
        }
        const double p = sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
        return std::max(0.0, 1.0 - p);
    }
    // Q by Lentz continued fraction
    const double fpmin = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / fpmin, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < fpmin) d = fpmin;
        c = b + an / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Right tail of a chi-square distribution with df degrees of freedom.
inline double chi_square_tail(double df, double x) {
    return regularized_gamma_q(0.5 * df, 0.5 * x);
}

}  // namespace cdilab
