#pragma once

// Test-only oracles, independent of the library's quadrature and root-finding
// paths: fixed-grid Simpson rules for the defining integrals and the exact
// mixture CDF of the ancestor maximum.

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int panels) {
    if (panels % 2 != 0) ++panels;
    const double h = (b - a) / panels;
    double sum = f(a) + f(b);
    for (int i = 1; i < panels; i += 2) sum += 4.0 * f(a + i * h);
    for (int i = 2; i < panels; i += 2) sum += 2.0 * f(a + i * h);
    return sum * h / 3.0;
}

// Beta(2-beta, beta) component density in log space; omx is the exact 1 - x.
inline double beta_log_density(double beta, double x, double omx) {
    const double log_norm =
        std::lgamma(2.0) - std::lgamma(2.0 - beta) - std::lgamma(beta);
    return log_norm + (1.0 - beta) * std::log(x) + (beta - 1.0) * std::log(omx);
}

// Fixed-grid Simpson for int_0^1 g(x, 1-x) beta_density(x) dx: the interval
// is split at 1/2 and each endpoint singularity is flattened by a power
// substitution (x = s^p at 0, 1-x = w^r at 1). g receives 1-x exactly so the
// far endpoint keeps full precision.
inline double beta_weighted_integral(
    double beta, const std::function<double(double, double)>& g, int panels) {
    const int p = std::max(2, static_cast<int>(std::ceil(2.0 / (2.0 - beta))));
    const int r = std::max(2, static_cast<int>(std::ceil(2.0 / beta)));
    auto left = [&](double s) {
        const double x = std::pow(s, p);
        if (x <= 0.0) return 0.0;
        const double omx = 1.0 - x;
        const double gv = g(x, omx);
        if (gv == 0.0) return 0.0;
        return gv * std::exp(beta_log_density(beta, x, omx)) * p *
               std::pow(s, p - 1);
    };
    auto right = [&](double w) {
        const double omx = std::pow(w, r);
        const double x = 1.0 - omx;
        if (omx <= 0.0 || x <= 0.0) return 0.0;
        const double gv = g(x, omx);
        if (gv == 0.0) return 0.0;
        return gv * std::exp(beta_log_density(beta, x, omx)) * r *
               std::pow(w, r - 1);
    };
    return simpson(left, 0.0, std::pow(0.5, 1.0 / p), panels) +
           simpson(right, 0.0, std::pow(0.5, 1.0 / r), panels);
}

inline double lambda_bk_beta(double beta, int b, int k, int panels = 50000) {
    return beta_weighted_integral(
        beta,
        [&](double x, double omx) {
            return std::pow(x, k - 2) * std::pow(omx, b - k);
        },
        panels);
}

// psi for a weight-1 Beta component by brute-force Simpson.
inline double psi_beta(double beta, double q, int panels = 500000) {
    return beta_weighted_integral(
        beta,
        [&](double x, double) {
            const double qx = q * x;
            return (qx < 1e-4) ? q * q * (0.5 - qx / 6.0 + qx * qx / 24.0)
                               : (std::expm1(-qx) + qx) / (x * x);
        },
        panels);
}

// Psi(u) = int_u^inf dq/psi(q) for a weight-1 Beta component: Simpson in
// log q over [u, q_cap] plus an analytic power-law remainder fitted at q_cap.
inline double big_psi_beta(double beta, double u, double q_cap = 1e8,
                           int log_panels = 2048, int psi_panels = 4000) {
    auto g = [&](double x) {
        const double q = std::exp(x);
        return q / psi_beta(beta, q, psi_panels);
    };
    const double body = simpson(g, std::log(u), std::log(q_cap), log_panels);
    const double p1 = psi_beta(beta, q_cap, psi_panels);
    const double p2 = psi_beta(beta, 2.0 * q_cap, psi_panels);
    const double p = std::log(p2 / p1) / std::log(2.0);  // local power
    const double tail = q_cap / ((p - 1.0) * p1);
    return body + tail;
}

// P(M <= x) = E[F(x)^N] for N Pareto-mixed over a fixed root count.
inline double mixture_cdf_fixed_roots(double fx, int roots) {
    return std::pow(fx, roots);
}

}  // namespace oracle
