#pragma once

// Speed of coming down from infinity: the tail integral Psi(u) = int_u^inf
// dq/psi(q), its inverse v(t) solving Psi(v(t)) = t, tabulated speed
// functions with monotone log-log interpolation, and the integral-test
// diagnostics built on v.

#include <cmath>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "cdilab/measure.hpp"
#include "cdilab/numerics.hpp"

namespace cdilab {

namespace detail {

// psi evaluated through a cubic Hermite table in (log q, log psi_dens) with
// analytic slopes. Only density components are tabulated; the Kingman atom
// and interior atoms keep their closed forms. Below q = 0.1 the density part
// uses the alternating moment series of the integrand.
class PsiEvaluator {
public:
    explicit PsiEvaluator(const LambdaMeasure& m) : m_(m) {
        if (!m.has_densities()) return;
        for (int j = 0; j <= 6; ++j) moments_[j] = m.density_moment(j);
        const double x_lo = std::log(0.1);
        const double x_hi = std::log(1e15);
        const double h = 0.02;
        const int n = static_cast<int>(std::ceil((x_hi - x_lo) / h)) + 1;
        std::vector<double> xs(n), ys(n), ds(n);
        for (int i = 0; i < n; ++i) {
            const double x = x_lo + (x_hi - x_lo) * i / (n - 1);
            const double q = std::exp(x);
            const double p = density_psi_exact(q);
            const double pp = density_psi_prime_exact(q);
            xs[i] = x;
            ys[i] = std::log(p);
            ds[i] = q * pp / p;  // d log psi / d log q
        }
        interp_ = CubicHermite(std::move(xs), std::move(ys), std::move(ds));
        has_table_ = true;
    }

    double operator()(double q) const {
        double val = m_.kingman_mass() * 0.5 * q * q;
        for (const auto& a : m_.atoms()) val += a.w * psi_integrand(q, a.x);
        if (has_table_) val += density_psi_fast(q);
        return val;
    }

    const LambdaMeasure& measure() const { return m_; }

private:
    double density_psi_exact(double q) const {
        return density_functional(
            m_, [q](double x) { return psi_integrand(q, x); }, 1e-12);
    }
    double density_psi_prime_exact(double q) const {
        return density_functional(
            m_, [q](double x) { return psi_prime_integrand(q, x); }, 1e-12);
    }

    double density_psi_fast(double q) const {
        const double x = std::log(q);
        if (x < interp_.x_front()) {
            // alternating series sum_{k>=2} (-q)^k m_{k-2} / k!  (sign folded)
            double term = 0.5 * q * q * moments_[0];
            double sum = term;
            double fact = 2.0;
            for (int k = 3; k <= 8; ++k) {
                fact *= k;
                term = std::pow(q, k) * moments_[k - 2] / fact;
                sum += ((k % 2 == 0) ? term : -term);
            }
            return sum;
        }
        if (x > interp_.x_back()) {
            // power-law continuation from the last node
            return std::exp(interp_.y_back() +
                            interp_.slope_back() * (x - interp_.x_back()));
        }
        return std::exp(interp_(x));
    }

    const LambdaMeasure m_;
    double moments_[7] = {0, 0, 0, 0, 0, 0, 0};
    CubicHermite interp_;
    bool has_table_ = false;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// SpeedSolver: Psi and its inverse for one measure
// ---------------------------------------------------------------------------

struct SpeedVResult {
    double v = 0.0;
    bool post_absorption = false;  // v(t) < 1, the chain is past its last block
};

class SpeedSolver {
public:
    explicit SpeedSolver(const LambdaMeasure& m) : psi_(m) {}

    const LambdaMeasure& measure() const { return psi_.measure(); }

    double psi(double q) const { return psi_(q); }

    // Psi(u) = int_u^inf dq / psi(q), integrated in log q over quadrupling
    // windows. The window increments of a convergent power-like tail decay
    // geometrically; the value returned is the partial sum plus the geometric
    // tail estimate once that estimate is negligible. Measures whose
    // increments do not settle into geometric decay by Q = 1e15 max(u,1) do
    // not come down from infinity (or sit too close to the boundary to
    // resolve) and raise unsupported_measure.
    double big_psi(double u) const {
        if (!(u > 0.0)) throw std::domain_error("big_psi: u must be positive");
        auto g = [this](double x) {
            const double q = std::exp(x);
            return q / psi_(q);
        };
        const double step = std::log(4.0);
        const double x_cap = std::log(1e15 * std::max(u, 1.0));
        double x_lo = std::log(u);
        double total = 0.0;
        double prev_inc = -1.0;
        double last_ratio = 1.0;
        for (int j = 0; j < 400; ++j) {
            const double inc =
                integrate_adaptive(g, x_lo, x_lo + step, 1e-300, 1e-11);
            total += inc;
            if (total > 1e15)
                throw unsupported_measure(
                    "big_psi: tail integral diverges (measure does not come down "
                    "from infinity)");
            if (prev_inc > 0.0) last_ratio = inc / prev_inc;
            if (prev_inc >= 0.0 && last_ratio < 1.0) {
                const double tail = inc * last_ratio / (1.0 - last_ratio);
                if (tail < 1e-11 * std::max(total, 1e-300) || inc < 1e-300) {
                    return total + tail;
                }
            }
            prev_inc = inc;
            x_lo += step;
            // past the cap, increments that are not decaying geometrically any
            // more will never resolve a finite tail
            if (x_lo > x_cap && last_ratio >= 0.9)
                throw unsupported_measure(
                    "big_psi: tail increments do not settle into geometric decay "
                    "(measure does not come down from infinity)");
        }
        throw consistency_error("big_psi: window limit exceeded");
    }

    // Solve Psi(v) = t: doubling bracket, log-space bisection, secant polish.
    SpeedVResult speed_v(double t) const {
        if (!(t > 0.0)) throw std::domain_error("speed_v: t must be positive");
        SpeedVResult out;
        double lo = 1.0, hi = 1.0;
        const double psi_at_one = big_psi(1.0);
        if (psi_at_one < t) {
            out.post_absorption = true;
            // v < 1: halve the lower end until Psi(lo) > t
            while (big_psi(lo) < t) {
                lo *= 0.5;
                if (lo < 1e-12)
                    throw consistency_error("speed_v: bracket collapse below 1e-12");
            }
            hi = 2.0 * lo;
        } else {
            hi = 2.0;
            while (big_psi(hi) > t) {
                lo = hi;
                hi *= 2.0;
                if (hi > 1e300) throw consistency_error("speed_v: bracket overflow");
            }
        }
        // bisection on log v
        double llo = std::log(lo), lhi = std::log(hi);
        for (int i = 0; i < 80 && (lhi - llo) > 1e-12; ++i) {
            const double mid = 0.5 * (llo + lhi);
            if (big_psi(std::exp(mid)) > t)
                llo = mid;
            else
                lhi = mid;
        }
        // secant polish on g(x) = Psi(e^x) - t
        double x0 = llo, x1 = lhi;
        double g0 = big_psi(std::exp(x0)) - t;
        double g1 = big_psi(std::exp(x1)) - t;
        for (int i = 0; i < 3; ++i) {
            if (g1 == g0) break;
            const double x2 = x1 - g1 * (x1 - x0) / (g1 - g0);
            if (!std::isfinite(x2)) break;
            x0 = x1;
            g0 = g1;
            x1 = x2;
            g1 = big_psi(std::exp(x1)) - t;
        }
        out.v = std::exp(x1);
        return out;
    }

private:
    detail::PsiEvaluator psi_;
};

namespace detail {

// One solver per distinct measure, shared across callers.
inline std::shared_ptr<const SpeedSolver> solver_for(const LambdaMeasure& m) {
    static std::shared_mutex mutex;
    static std::unordered_map<std::uint64_t, std::shared_ptr<const SpeedSolver>>
        cache;
    static std::list<std::uint64_t> order;
    const std::uint64_t fp = m.fingerprint();
    {
        std::shared_lock lock(mutex);
        auto it = cache.find(fp);
        if (it != cache.end()) return it->second;
    }
    auto solver = std::make_shared<const SpeedSolver>(m);
    std::unique_lock lock(mutex);
    auto [it, inserted] = cache.emplace(fp, solver);
    if (inserted) {
        order.push_back(fp);
        while (order.size() > 32) {
            cache.erase(order.front());
            order.pop_front();
        }
    }
    return it->second;
}

}  // namespace detail

inline double big_psi(const LambdaMeasure& m, double u) {
    return detail::solver_for(m)->big_psi(u);
}

inline SpeedVResult speed_v_checked(const LambdaMeasure& m, double t) {
    return detail::solver_for(m)->speed_v(t);
}

inline double speed_v(const LambdaMeasure& m, double t) {
    return speed_v_checked(m, t).v;
}

// ---------------------------------------------------------------------------
// SpeedTable
// ---------------------------------------------------------------------------

class SpeedTable {
public:
    const std::vector<double>& t_grid() const { return t_grid_; }
    const std::vector<double>& v_values() const { return v_values_; }
    std::uint64_t measure_fingerprint() const { return fingerprint_; }
    double tol() const { return tol_; }
    bool has_measure() const { return static_cast<bool>(solver_); }
    const LambdaMeasure& measure() const {
        if (!solver_) throw std::logic_error("SpeedTable: no backing measure");
        return solver_->measure();
    }

    double t_min() const { return t_grid_.front(); }
    double t_max() const { return t_grid_.back(); }

    // v(t): monotone cubic in (log t, log v) inside the grid; outside, a
    // direct solve when a measure backs the table, otherwise log-log
    // extrapolation from the boundary slope.
    double v(double t) const { return std::exp(log_v(t)); }

    double log_v(double t) const {
        if (!(t > 0.0))
            throw std::domain_error("SpeedTable::v: t must be positive");
        if (t >= t_grid_.front() && t <= t_grid_.back())
            return interp_(std::log(t));
        if (solver_) return std::log(solver_->speed_v(t).v);
        const double x = std::log(t);
        if (x < interp_.x_front())
            return interp_.y_front() +
                   interp_.slope_front() * (x - interp_.x_front());
        return interp_.y_back() + interp_.slope_back() * (x - interp_.x_back());
    }

    // Solves Psi(v) = t on a geometric grid, then validates each cell by
    // integrating d log v / d log t = -t psi(v) / v with an adaptive RK45
    // stepper. Node disagreements above 1e-4 are an internal error.
    static SpeedTable build(const LambdaMeasure& m, double t_min, double t_max,
                            int n_nodes) {
        if (!(t_min > 0.0 && t_min < t_max))
            throw std::domain_error("build_speed_table: need 0 < t_min < t_max");
        if (n_nodes < 16)
            throw std::domain_error("build_speed_table: need n_nodes >= 16");
        SpeedTable table;
        table.solver_ = detail::solver_for(m);
        table.fingerprint_ = m.fingerprint();
        table.t_grid_.resize(n_nodes);
        table.v_values_.resize(n_nodes);
        const double lr = std::log(t_max / t_min);
        for (int i = 0; i < n_nodes; ++i) {
            table.t_grid_[i] = t_min * std::exp(lr * i / (n_nodes - 1));
            table.v_values_[i] = table.solver_->speed_v(table.t_grid_[i]).v;
        }
        for (int i = 0; i + 1 < n_nodes; ++i) {
            if (table.v_values_[i + 1] >= table.v_values_[i])
                throw consistency_error("build_speed_table: v not strictly decreasing");
        }
        const SpeedSolver& solver = *table.solver_;
        auto rhs = [&solver](double x, double y) {
            const double t = std::exp(x);
            const double v = std::exp(y);
            return -t * solver.psi(v) / v;
        };
        double max_resid = 0.0;
        for (int i = 0; i + 1 < n_nodes; ++i) {
            const double y1 = rk45_integrate(rhs, std::log(table.t_grid_[i]),
                                             std::log(table.v_values_[i]),
                                             std::log(table.t_grid_[i + 1]),
                                             1e-9, 1e-12);
            const double resid =
                std::abs(std::exp(y1) / table.v_values_[i + 1] - 1.0);
            max_resid = std::max(max_resid, resid);
        }
        if (max_resid > 1e-4)
            throw consistency_error(
                "build_speed_table: ODE cross-check disagrees with the root solve "
                "(residual " +
                std::to_string(max_resid) + ")");
        table.tol_ = max_resid;
        table.build_interp();
        return table;
    }

    // Synthetic table from an explicit v(t); used for diagnostics of
    // hypothetical speed functions.
    static SpeedTable from_function(const std::function<double(double)>& v_fn,
                                    double t_min, double t_max, int n_nodes) {
        return from_log_function(
            [&v_fn](double t) { return std::log(v_fn(t)); }, t_min, t_max,
            n_nodes);
    }

    // As above, but takes log v(t) so speed functions far beyond the double
    // range (v = e^{1/t} and the like) stay representable.
    static SpeedTable from_log_function(
        const std::function<double(double)>& log_v_fn, double t_min,
        double t_max, int n_nodes) {
        if (!(t_min > 0.0 && t_min < t_max) || n_nodes < 2)
            throw std::domain_error("from_log_function: bad grid");
        SpeedTable table;
        table.t_grid_.resize(n_nodes);
        table.v_values_.resize(n_nodes);
        std::vector<double> xs(n_nodes), ys(n_nodes);
        const double lr = std::log(t_max / t_min);
        for (int i = 0; i < n_nodes; ++i) {
            table.t_grid_[i] = t_min * std::exp(lr * i / (n_nodes - 1));
            xs[i] = std::log(table.t_grid_[i]);
            ys[i] = log_v_fn(table.t_grid_[i]);
            if (!std::isfinite(ys[i]))
                throw std::domain_error("from_log_function: log v must be finite");
            table.v_values_[i] = std::exp(ys[i]);
        }
        table.interp_ = CubicHermite::monotone(std::move(xs), std::move(ys));
        return table;
    }

private:
    void build_interp() {
        std::vector<double> xs(t_grid_.size()), ys(t_grid_.size());
        for (std::size_t i = 0; i < t_grid_.size(); ++i) {
            xs[i] = std::log(t_grid_[i]);
            ys[i] = std::log(v_values_[i]);
        }
        interp_ = CubicHermite::monotone(std::move(xs), std::move(ys));
    }

    std::vector<double> t_grid_;
    std::vector<double> v_values_;
    std::uint64_t fingerprint_ = 0;
    double tol_ = 0.0;
    CubicHermite interp_;
    std::shared_ptr<const SpeedSolver> solver_;
};

inline SpeedTable build_speed_table(const LambdaMeasure& m, double t_min,
                                    double t_max, int n_nodes) {
    return SpeedTable::build(m, t_min, t_max, n_nodes);
}

// ---------------------------------------------------------------------------
// integral-test diagnostics
// ---------------------------------------------------------------------------

struct V1Result {
    bool holds = false;
    double value = std::numeric_limits<double>::infinity();
};

namespace detail {

// log of v(t)^{1+eps} e^{-t^-delta}; working in logs keeps the blow-up cases
// finite until the verdict is made.
inline double v1_log_integrand(const SpeedTable& table, double t, double delta_o,
                               double eps_o) {
    return (1.0 + eps_o) * table.log_v(t) - std::pow(t, -delta_o);
}

inline double v1_segment(const SpeedTable& table, double a, double b,
                         double delta_o, double eps_o, bool& blew_up) {
    // detect blow-up from the log integrand before exponentiating
    for (int i = 0; i <= 8; ++i) {
        const double t = a + (b - a) * i / 8.0;
        if (v1_log_integrand(table, t, delta_o, eps_o) > 40.0) {
            blew_up = true;
            return std::numeric_limits<double>::infinity();
        }
    }
    auto f = [&](double t) {
        const double le = v1_log_integrand(table, t, delta_o, eps_o);
        return (le < -745.0) ? 0.0 : std::exp(le);
    };
    return integrate_adaptive(f, a, b, 1e-300, 1e-9);
}

}  // namespace detail

// Tests int_{0+} v(t)^{1+eps_o} e^{-t^-delta_o} dt < inf by halving the lower
// limit until the increments fall below 1e-14, or declaring divergence when
// the partial integral exceeds 1e12.
inline V1Result v1_condition(const SpeedTable& table, double delta_o,
                             double eps_o) {
    if (!(delta_o > 0.0 && delta_o < 1.0))
        throw std::domain_error("v1_condition: delta_o must be in (0,1)");
    if (!(eps_o > 0.0))
        throw std::domain_error("v1_condition: eps_o must be positive");
    V1Result out;
    const double upper = std::min(table.t_max(), 1.0);
    double a = std::min(table.t_min(), upper / 2.0);
    bool blew_up = false;
    double partial = detail::v1_segment(table, a, upper, delta_o, eps_o, blew_up);
    if (blew_up || partial > 1e12) return out;
    for (int i = 0; i < 200; ++i) {
        const double a2 = 0.5 * a;
        const double inc = detail::v1_segment(table, a2, a, delta_o, eps_o, blew_up);
        if (blew_up) return out;
        partial += inc;
        if (partial > 1e12) return out;
        a = a2;
        if (inc < 1e-14) {
            out.holds = true;
            out.value = partial;
            return out;
        }
    }
    return out;
}

// Tail bound h(x) for the modulus threshold Delta: dyadic-window integral of
// v^{1+eps} e^{-t^-delta} plus a geometric remainder.
inline double delta_tail_bound(const SpeedTable& table, double x, double delta_o,
                               double eps_o, double d_o) {
    if (!(x > 0.0)) throw std::domain_error("delta_tail_bound: x must be positive");
    if (!(d_o * eps_o > 1.0))
        throw std::domain_error("delta_tail_bound: need d_o * eps_o > 1");
    const int m = std::max(
        0, static_cast<int>(std::ceil(std::log2(1.0 / x) - 1e-9)));
    const double upper = std::pow(2.0, -m);
    // integral term, with the e^{-t^-delta} cutoff applied before evaluating v
    const double t_floor = std::pow(700.0, -1.0 / delta_o);
    double integral = 0.0;
    if (upper > t_floor) {
        auto f = [&](double t) {
            const double le = detail::v1_log_integrand(table, t, delta_o, eps_o);
            return (le < -745.0) ? 0.0 : std::exp(le);
        };
        integral = integrate_adaptive(f, t_floor, upper, 1e-300, 1e-9);
    }
    const double r = d_o * eps_o - 1.0;
    const double geometric = std::pow(2.0, -static_cast<double>(m) * r) /
                             (1.0 - std::pow(2.0, -r));
    return integral + geometric;
}

// Checks (log v(t))^{0 v (1 - 1/r2)} t^delta -> 0 on the table's smallest
// decade: true iff the expression decreases strictly toward 0 across ten
// log-spaced sample points.
inline bool assumption_v_check(const SpeedTable& table, double delta, double r2) {
    if (!(delta > 0.0)) throw std::domain_error("assumption_v_check: delta > 0");
    if (!(r2 > 0.0)) throw std::domain_error("assumption_v_check: r2 > 0");
    const double e2 = std::max(0.0, 1.0 - 1.0 / r2);
    const double t_lo = table.t_min();
    const double t_hi = std::min(10.0 * t_lo, table.t_max());
    const int n = 10;
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const double t = t_lo * std::exp(std::log(t_hi / t_lo) * i / (n - 1));
        const double lv = std::max(table.log_v(t), 1e-12);
        const double expr = std::pow(lv, e2) * std::pow(t, delta);
        if (i > 0 && expr <= prev) return false;  // not decreasing toward 0
        prev = expr;
    }
    return true;
}

}  // namespace cdilab
