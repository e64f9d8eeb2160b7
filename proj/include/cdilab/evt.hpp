#pragma once

// Parametric tail families for the initial law F: exact CDFs built by
// clamping and monotonizing the nominal tail formula, inverse-CDF samplers,
// the canonical asymptotic inverses, and the scaling functions a, abar, bbar
// with their Frechet / Gumbel / Exp(1) limit laws.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cdilab/measure.hpp"  // CSV loader, config_error
#include "cdilab/numerics.hpp"
#include "cdilab/rng.hpp"

namespace cdilab {

enum class TailKind {
    slow_power_log,      // Fbar ~ r1 x^{-r2} (log x)^{r3}
    fast_stretched_exp,  // Fbar ~ r4 x^{r3} e^{-r1 x^{r2}}
    log_heavy,           // Fbar ~ r1 (log x)^{-r3}
    std_normal,
    custom_quantile,
};

class TailFamily {
public:
    static TailFamily slow(double r1, double r2, double r3) {
        if (!(r1 > 0.0 && r2 > 0.0))
            throw std::domain_error("slow family needs r1, r2 > 0");
        TailFamily f;
        f.kind_ = TailKind::slow_power_log;
        f.r1_ = r1;
        f.r2_ = r2;
        f.r3_ = r3;
        f.monotone_from_ = (r3 > 0.0) ? std::exp(r3 / r2) : (r3 < 0.0 ? 1.0 : 0.0);
        f.finish_support();
        return f;
    }

    static TailFamily fast(double r1, double r2, double r3, double r4) {
        if (!(r1 > 0.0 && r2 > 0.0 && r4 > 0.0))
            throw std::domain_error("fast family needs r1, r2, r4 > 0");
        TailFamily f;
        f.kind_ = TailKind::fast_stretched_exp;
        f.r1_ = r1;
        f.r2_ = r2;
        f.r3_ = r3;
        f.r4_ = r4;
        // stationary point of the nominal formula when r3 > 0
        f.monotone_from_ = (r3 > 0.0) ? std::pow(r3 / (r1 * r2), 1.0 / r2) : 0.0;
        f.finish_support();
        return f;
    }

    static TailFamily log_heavy(double r1, double r3) {
        if (!(r1 > 0.0 && r3 > 0.0))
            throw std::domain_error("log_heavy family needs r1, r3 > 0");
        TailFamily f;
        f.kind_ = TailKind::log_heavy;
        f.r1_ = r1;
        f.r3_ = r3;
        f.monotone_from_ = 1.0;
        f.finish_support();
        return f;
    }

    static TailFamily std_normal() {
        TailFamily f;
        f.kind_ = TailKind::std_normal;
        f.monotone_from_ = -std::numeric_limits<double>::infinity();
        f.x0_ = -std::numeric_limits<double>::infinity();
        return f;
    }

    // Tabulated quantile function: rows (u, x) with u nondecreasing in [0,1].
    static TailFamily custom_quantile(std::vector<double> u,
                                      std::vector<double> x) {
        if (u.size() != x.size() || u.size() < 2)
            throw std::domain_error("custom_quantile: need >= 2 (u, x) rows");
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (u[i] < 0.0 || u[i] > 1.0)
                throw std::domain_error("custom_quantile: u outside [0,1]");
            if (i > 0 && (u[i] < u[i - 1] || x[i] < x[i - 1]))
                throw std::domain_error("custom_quantile: rows must be nondecreasing");
        }
        TailFamily f;
        f.kind_ = TailKind::custom_quantile;
        f.qu_ = std::move(u);
        f.qx_ = std::move(x);
        f.x0_ = f.qx_.front();
        f.monotone_from_ = f.qx_.front();
        return f;
    }

    TailKind kind() const { return kind_; }
    double r1() const { return r1_; }
    double r2() const { return r2_; }
    double r3() const { return r3_; }
    double r4() const { return r4_; }
    double x0() const { return x0_; }
    double monotone_from() const { return monotone_from_; }

    // The fast-regime parameters; the standard normal maps onto
    // (1/2, 2, -1, (2 pi)^{-1/2}).
    void fast_params(double& r1, double& r2, double& r3, double& r4) const {
        if (kind_ == TailKind::fast_stretched_exp) {
            r1 = r1_;
            r2 = r2_;
            r3 = r3_;
            r4 = r4_;
        } else if (kind_ == TailKind::std_normal) {
            r1 = 0.5;
            r2 = 2.0;
            r3 = -1.0;
            r4 = 1.0 / std::sqrt(2.0 * kPi);
        } else {
            throw std::domain_error("fast_params: not a fast-regime family");
        }
    }

    // Exact survival function: the nominal formula clamped to [0,1] and
    // monotonized, with Fbar = 1 strictly below the support threshold x0.
    double fbar(double x) const {
        switch (kind_) {
            case TailKind::std_normal:
                return normal_tail(x);
            case TailKind::custom_quantile: {
                if (x < qx_.front()) return 1.0;
                if (x >= qx_.back()) return 1.0 - qu_.back();
                // invert the piecewise-linear quantile: F(x) = sup{u: Q(u) <= x}
                const auto it = std::upper_bound(qx_.begin(), qx_.end(), x);
                const std::size_t i = it - qx_.begin();
                const double dq = qx_[i] - qx_[i - 1];
                const double u =
                    (dq > 0.0)
                        ? qu_[i - 1] + (x - qx_[i - 1]) / dq * (qu_[i] - qu_[i - 1])
                        : qu_[i];
                return 1.0 - u;
            }
            default: {
                if (x < x0_) return 1.0;
                return std::min(1.0, nominal_fbar(std::max(x, monotone_from_)));
            }
        }
    }

    double cdf(double x) const { return 1.0 - fbar(x); }

    // Generalized inverse of Fbar: inf{x : Fbar(x) <= u}. Closed forms where
    // available, monotone bisection otherwise.
    double quantile(double u) const {
        if (!(u > 0.0 && u < 1.0))
            throw std::domain_error("quantile: u must be in (0,1)");
        switch (kind_) {
            case TailKind::std_normal:
                return -inv_normal_cdf(u);
            case TailKind::custom_quantile: {
                const double p = 1.0 - u;  // CDF level
                const auto it = std::lower_bound(qu_.begin(), qu_.end(), p);
                if (it == qu_.begin()) return qx_.front();
                if (it == qu_.end()) return qx_.back();
                const std::size_t i = it - qu_.begin();
                const double du = qu_[i] - qu_[i - 1];
                if (du <= 0.0) return qx_[i];
                const double w = (p - qu_[i - 1]) / du;
                return qx_[i - 1] + w * (qx_[i] - qx_[i - 1]);
            }
            case TailKind::log_heavy:
                return std::exp(std::pow(u / r1_, -1.0 / r3_));
            case TailKind::slow_power_log:
                if (r3_ == 0.0) {
                    const double x = std::pow(r1_ / u, 1.0 / r2_);
                    return std::max(x, x0_);
                }
                break;
            case TailKind::fast_stretched_exp:
                if (r3_ == 0.0) {
                    if (u >= fbar(x0_)) return x0_;
                    return std::pow(std::log(r4_ / u) / r1_, 1.0 / r2_);
                }
                break;
        }
        // monotone bisection on [x0, hi]
        if (u >= fbar(x0_)) return x0_;
        double lo = std::max(x0_, 1e-300), hi = std::max(2.0 * lo, 2.0);
        while (fbar(hi) > u) {
            lo = hi;
            hi *= 2.0;
            if (hi > 1e300) return hi;
        }
        for (int i = 0; i < 200 && hi - lo > 1e-10 && (hi - lo) > 1e-14 * hi; ++i) {
            const double mid = 0.5 * (lo + hi);
            if (fbar(mid) > u)
                lo = mid;
            else
                hi = mid;
        }
        return hi;
    }

    double sample(Rng& rng) const { return quantile(rng.uniform01()); }

    // Canonical asymptotic inverse of Fbar for each tail regime.
    double fbar_inv_asymptotic(double y) const {
        check_inv_domain(y);
        const double L = std::log(1.0 / y);
        switch (kind_) {
            case TailKind::slow_power_log:
                return std::pow(r1_, 1.0 / r2_) * std::pow(r2_, -r3_ / r2_) *
                       std::pow(y, -1.0 / r2_) * std::pow(L, r3_ / r2_);
            case TailKind::log_heavy:
                return std::exp(std::pow(y / r1_, -1.0 / r3_));
            case TailKind::fast_stretched_exp:
            case TailKind::std_normal: {
                double r1, r2, r3, r4;
                fast_params(r1, r2, r3, r4);
                const double inner =
                    (L + std::log(r4) + (r3 / r2) * std::log(L / r1)) / r1;
                return std::pow(inner, 1.0 / r2);
            }
            default:
                throw std::domain_error(
                    "fbar_inv_asymptotic: no canonical formula for a custom "
                    "quantile family");
        }
    }

    // Fbar(Fbar^{(-1)}(y)), evaluated stably: the log-heavy branch works
    // through log x so astronomically large inverses do not overflow.
    double fbar_of_inv(double y) const {
        check_inv_domain(y);
        if (kind_ == TailKind::log_heavy) {
            const double w = std::pow(y / r1_, -1.0 / r3_);  // log of the inverse
            if (w < 700.0) return fbar(std::exp(w));
            return r1_ * std::pow(w, -r3_);
        }
        return fbar(fbar_inv_asymptotic(y));
    }

    // Largest y for which the asymptotic-inverse formula is defined.
    double inv_domain_max() const {
        switch (kind_) {
            case TailKind::slow_power_log:
            case TailKind::log_heavy:
                return 1.0;
            case TailKind::fast_stretched_exp:
            case TailKind::std_normal: {
                double r1, r2, r3, r4;
                fast_params(r1, r2, r3, r4);
                auto ok = [&](double y) {
                    const double L = std::log(1.0 / y);
                    if (!(L > 0.0)) return false;
                    return (L + std::log(r4) + (r3 / r2) * std::log(L / r1)) > 0.0;
                };
                // the bracket can change sign twice (L -> 0 flips the inner
                // log); scan upward for the first failure, then bisect
                double lo = 1e-300;
                if (!ok(lo)) return lo;
                double hi = lo;
                bool found = false;
                while (hi < 0.5) {
                    const double next = hi * 2.0;
                    if (!ok(next)) {
                        lo = hi;
                        hi = next;
                        found = true;
                        break;
                    }
                    hi = next;
                }
                if (!found) return std::min(1.0, hi);
                for (int i = 0; i < 200; ++i) {
                    const double mid = std::sqrt(lo * hi);
                    if (ok(mid))
                        lo = mid;
                    else
                        hi = mid;
                }
                return lo;
            }
            default:
                return 0.0;
        }
    }

private:
    void check_inv_domain(double y) const {
        if (!(y > 0.0))
            throw std::domain_error("asymptotic inverse: y must be positive");
        const double y_max = inv_domain_max();
        if (y >= y_max)
            throw std::domain_error(
                "asymptotic inverse: y too large for the formula's logs "
                "(threshold y < " +
                std::to_string(y_max) + ")");
    }

    double nominal_fbar(double x) const {
        switch (kind_) {
            case TailKind::slow_power_log: {
                if (x <= 0.0) return std::numeric_limits<double>::infinity();
                if (r3_ == 0.0) return r1_ * std::pow(x, -r2_);
                if (x <= 1.0) return std::numeric_limits<double>::infinity();
                return r1_ * std::pow(x, -r2_) * std::pow(std::log(x), r3_);
            }
            case TailKind::fast_stretched_exp: {
                if (x < 0.0) return std::numeric_limits<double>::infinity();
                if (x == 0.0)
                    return (r3_ > 0.0)   ? 0.0
                           : (r3_ < 0.0) ? std::numeric_limits<double>::infinity()
                                         : r4_;
                return r4_ * std::pow(x, r3_) * std::exp(-r1_ * std::pow(x, r2_));
            }
            case TailKind::log_heavy: {
                if (x <= 1.0) return std::numeric_limits<double>::infinity();
                return r1_ * std::pow(std::log(x), -r3_);
            }
            default:
                return 1.0;
        }
    }

    // x0 is the left edge of the support: the point where the clamped formula
    // first drops below 1, or the clamp point itself (an atom) when the
    // formula never reaches 1 there.
    void finish_support() {
        const double start = std::max(monotone_from_, 1e-300);
        const double f_start = std::min(1.0, nominal_fbar(start));
        if (f_start < 1.0) {
            x0_ = monotone_from_;  // atom of mass 1 - f_start at x0
            return;
        }
        double lo = start, hi = std::max(2.0 * start, 2.0);
        while (nominal_fbar(hi) >= 1.0) {
            lo = hi;
            hi *= 2.0;
            if (hi > 1e300)
                throw std::domain_error("tail family: formula never drops below 1");
        }
        for (int i = 0; i < 200 && (hi - lo) > 1e-15 * std::max(1.0, hi); ++i) {
            const double mid = 0.5 * (lo + hi);
            if (nominal_fbar(mid) >= 1.0)
                lo = mid;
            else
                hi = mid;
        }
        x0_ = hi;
    }

    TailKind kind_ = TailKind::slow_power_log;
    double r1_ = 1.0, r2_ = 1.0, r3_ = 0.0, r4_ = 1.0;
    double x0_ = 0.0;
    double monotone_from_ = 0.0;
    std::vector<double> qu_, qx_;
};

// ---------------------------------------------------------------------------
// scaling functions and limit laws
// ---------------------------------------------------------------------------

// Single inverse-CDF draw from a fresh seed; replicate loops should hold a
// TailFamily and an Rng instead.
inline double sample_initial(const TailFamily& family, std::uint64_t seed) {
    Rng rng(seed);
    return family.sample(rng);
}

// a(x) = r1^{-1/r2} r2^{r3/r2} x^{-1/r2} (log x)^{-r3/r2}, x > 1.
inline double scaling_a(double x, double r1, double r2, double r3) {
    if (!(x > 1.0)) throw std::domain_error("scaling_a: x must exceed 1");
    return std::pow(r1, -1.0 / r2) * std::pow(r2, r3 / r2) *
           std::pow(x, -1.0 / r2) * std::pow(std::log(x), -r3 / r2);
}

// abar(x) = r1 r2 (r1^{-1} log x)^{1 - 1/r2};
// bbar(x) = r2 log x + log r4 + (r3/r2) log(r1^{-1} log x).
inline std::pair<double, double> scaling_abar_bbar(double x, double r1, double r2,
                                                   double r3, double r4) {
    if (!(x > 1.0)) throw std::domain_error("scaling_abar_bbar: x must exceed 1");
    const double lx = std::log(x);
    const double abar = r1 * r2 * std::pow(lx / r1, 1.0 - 1.0 / r2);
    const double bbar =
        r2 * lx + std::log(r4) + (r3 / r2) * std::log(lx / r1);
    return {abar, bbar};
}

enum class LimitKind { frechet, gumbel, exp1 };

// shape applies to the Frechet law only.
inline double limit_cdf(LimitKind kind, double x, double shape = 1.0) {
    switch (kind) {
        case LimitKind::frechet:
            return (x <= 0.0) ? 0.0 : std::exp(-std::pow(x, -shape));
        case LimitKind::gumbel:
            return std::exp(-std::exp(-x));
        case LimitKind::exp1:
            return (x <= 0.0) ? 0.0 : -std::expm1(-x);
    }
    return 0.0;
}

// The scaling functions of a tail family bundled with its limit law: slow
// tails rescale by a(x) toward a Frechet(r2) limit, fast tails renormalize by
// (abar, bbar) toward the Gumbel, and pure Pareto tails admit the Exp(1)
// variant.
struct ScalingBundle {
    double r1 = 1.0, r2 = 1.0, r3 = 0.0, r4 = 1.0;
    LimitKind limit = LimitKind::gumbel;

    static ScalingBundle for_family(const TailFamily& family) {
        ScalingBundle b;
        switch (family.kind()) {
            case TailKind::slow_power_log:
                b.r1 = family.r1();
                b.r2 = family.r2();
                b.r3 = family.r3();
                b.limit = LimitKind::frechet;
                return b;
            case TailKind::fast_stretched_exp:
            case TailKind::std_normal:
                family.fast_params(b.r1, b.r2, b.r3, b.r4);
                b.limit = LimitKind::gumbel;
                return b;
            default:
                throw std::domain_error(
                    "ScalingBundle: no scaling limit for this family kind");
        }
    }

    double a(double x) const { return scaling_a(x, r1, r2, r3); }
    std::pair<double, double> abar_bbar(double x) const {
        return scaling_abar_bbar(x, r1, r2, r3, r4);
    }
    double limit_law_cdf(double x) const { return limit_cdf(limit, x, r2); }
};

// ---------------------------------------------------------------------------
// asymptotic-inverse diagnostic
// ---------------------------------------------------------------------------

struct AsymptoticInverseReport {
    std::vector<double> y_grid;
    std::vector<double> deviations;  // |Fbar(Fbar^{(-1)}(y))/y - 1|
    double max_deviation = 0.0;
};

inline AsymptoticInverseReport asymptotic_inverse_check(
    const TailFamily& family, std::span<const double> y_grid) {
    AsymptoticInverseReport rep;
    for (double y : y_grid) {
        const double dev = std::abs(family.fbar_of_inv(y) / y - 1.0);
        rep.y_grid.push_back(y);
        rep.deviations.push_back(dev);
        rep.max_deviation = std::max(rep.max_deviation, dev);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// tail mini-grammar: pareto:<r1>,<r2> | slow:<r1>,<r2>,<r3> |
// fast:<r1>,<r2>,<r3>,<r4> | logheavy:<r1>,<r3> | normal | quantile:<path.csv>
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> parse_params(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t next = s.find(',', pos);
        const std::string tok =
            s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        pos = (next == std::string::npos) ? s.size() + 1 : next + 1;
        if (tok.empty()) continue;
        try {
            out.push_back(std::stod(tok));
        } catch (const std::invalid_argument&) {
            throw config_error("malformed tail parameter: " + tok);
        }
    }
    return out;
}

}  // namespace detail

inline TailFamily parse_tail(const std::string& spec) {
    if (spec == "normal") return TailFamily::std_normal();
    const std::size_t colon = spec.find(':');
    const std::string head = spec.substr(0, colon);
    const std::string rest =
        (colon == std::string::npos) ? "" : spec.substr(colon + 1);
    try {
        if (head == "pareto") {
            const auto p = detail::parse_params(rest);
            if (p.size() != 2) throw config_error("pareto needs pareto:<r1>,<r2>");
            return TailFamily::slow(p[0], p[1], 0.0);
        }
        if (head == "slow") {
            const auto p = detail::parse_params(rest);
            if (p.size() != 3) throw config_error("slow needs slow:<r1>,<r2>,<r3>");
            return TailFamily::slow(p[0], p[1], p[2]);
        }
        if (head == "fast") {
            const auto p = detail::parse_params(rest);
            if (p.size() != 4)
                throw config_error("fast needs fast:<r1>,<r2>,<r3>,<r4>");
            return TailFamily::fast(p[0], p[1], p[2], p[3]);
        }
        if (head == "logheavy") {
            const auto p = detail::parse_params(rest);
            if (p.size() != 2) throw config_error("logheavy needs logheavy:<r1>,<r3>");
            return TailFamily::log_heavy(p[0], p[1]);
        }
        if (head == "quantile") {
            auto rows = detail::load_csv_pairs(rest);
            std::vector<double> u, x;
            for (const auto& [a, b] : rows) {
                u.push_back(a);
                x.push_back(b);
            }
            return TailFamily::custom_quantile(std::move(u), std::move(x));
        }
    } catch (const std::domain_error& e) {
        throw config_error(std::string("invalid tail family: ") + e.what());
    }
    throw config_error("unknown tail family: " + spec);
}

}  // namespace cdilab
