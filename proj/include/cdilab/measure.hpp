#pragma once

// The driving measure Lambda on [0,1] and the rate functionals derived from
// it: merge rates lambda_{b,k}, total jump rates, the CDI functional psi, and
// the jump-chain merge-size kernel. A measure is a Kingman atom at 0, finitely
// many interior atoms, and density components on (0,1] (normalized Beta
// densities with a weight, or tabulated piecewise-linear densities).

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdilab/numerics.hpp"

namespace cdilab {

struct BetaDensity {
    double beta;    // shape in (0,2); density is weight * Beta(2-beta, beta)
    double weight;  // total mass contributed
};

struct TabulatedDensity {
    std::vector<double> x;     // strictly increasing, in (0,1]
    std::vector<double> dens;  // nonnegative density values, linear between nodes
};

struct PointAtom {
    double x;  // in (0,1)
    double w;  // > 0
};

namespace detail {

// (e^{-qx} - 1 + qx) / x^2 with the removable singularity at x -> 0 handled
// by the Taylor form when qx is small.
inline double psi_integrand(double q, double x) {
    const double qx = q * x;
    if (qx < 1e-4) {
        return q * q * (0.5 - qx / 6.0 + qx * qx / 24.0);
    }
    return (std::expm1(-qx) + qx) / (x * x);
}

// (1 - e^{-qx}) / x, the derivative of the above in q.
inline double psi_prime_integrand(double q, double x) {
    const double qx = q * x;
    if (qx < 1e-4) {
        return q * (1.0 - 0.5 * qx + qx * qx / 6.0);
    }
    return -std::expm1(-qx) / x;
}

inline double tabulated_mass(const TabulatedDensity& td) {
    double m = 0.0;
    for (std::size_t i = 0; i + 1 < td.x.size(); ++i)
        m += 0.5 * (td.dens[i] + td.dens[i + 1]) * (td.x[i + 1] - td.x[i]);
    return m;
}

inline double tabulated_density_at(const TabulatedDensity& td, double x) {
    if (x < td.x.front() || x > td.x.back()) return 0.0;
    const auto it = std::upper_bound(td.x.begin(), td.x.end(), x);
    std::size_t i = (it == td.x.begin()) ? 0 : (it - td.x.begin() - 1);
    if (i + 1 >= td.x.size()) i = td.x.size() - 2;
    const double t = (x - td.x[i]) / (td.x[i + 1] - td.x[i]);
    return td.dens[i] + t * (td.dens[i + 1] - td.dens[i]);
}

}  // namespace detail

class LambdaMeasure {
public:
    LambdaMeasure(double kingman_mass, std::vector<PointAtom> atoms,
                  std::vector<BetaDensity> betas,
                  std::vector<TabulatedDensity> tables)
        : kingman_mass_(kingman_mass) {
        if (kingman_mass < 0.0)
            throw std::domain_error("LambdaMeasure: negative Kingman mass");
        for (const auto& a : atoms) {
            if (a.w < 0.0) throw std::domain_error("LambdaMeasure: negative atom weight");
            if (a.w == 0.0) continue;  // weight-0 atoms are dropped
            if (a.x >= 1.0)
                throw std::domain_error(
                    "LambdaMeasure: atom at 1 rejected (star-shaped coalescent)");
            if (a.x <= 0.0)
                throw std::domain_error("LambdaMeasure: atom location must be in (0,1)");
            atoms_.push_back(a);
        }
        for (const auto& b : betas) {
            if (b.weight < 0.0)
                throw std::domain_error("LambdaMeasure: negative Beta weight");
            if (b.weight == 0.0) continue;
            if (!(b.beta > 0.0 && b.beta < 2.0))
                throw std::domain_error("LambdaMeasure: Beta shape must be in (0,2)");
            betas_.push_back(b);
        }
        for (auto& t : tables) {
            if (t.x.size() < 2 || t.x.size() != t.dens.size())
                throw std::domain_error("LambdaMeasure: tabulated density needs >= 2 nodes");
            for (std::size_t i = 0; i < t.x.size(); ++i) {
                if (t.dens[i] < 0.0)
                    throw std::domain_error("LambdaMeasure: negative tabulated density");
                if (i > 0 && t.x[i] <= t.x[i - 1])
                    throw std::domain_error("LambdaMeasure: tabulated grid not increasing");
            }
            if (t.x.front() <= 0.0 || t.x.back() > 1.0)
                throw std::domain_error("LambdaMeasure: tabulated grid must lie in (0,1]");
            if (detail::tabulated_mass(t) <= 0.0) continue;
            tables_.push_back(std::move(t));
        }
        total_mass_ = kingman_mass_;
        for (const auto& a : atoms_) total_mass_ += a.w;
        for (const auto& b : betas_) total_mass_ += b.weight;  // normalized density
        for (const auto& t : tables_) total_mass_ += detail::tabulated_mass(t);
        if (!(total_mass_ > 0.0))
            throw std::domain_error("LambdaMeasure: total mass must be positive");
        fingerprint_ = compute_fingerprint();
    }

    static LambdaMeasure kingman(double mass = 1.0) {
        return LambdaMeasure(mass, {}, {}, {});
    }
    static LambdaMeasure beta(double beta_shape, double weight = 1.0) {
        return LambdaMeasure(0.0, {}, {{beta_shape, weight}}, {});
    }

    double kingman_mass() const { return kingman_mass_; }
    const std::vector<PointAtom>& atoms() const { return atoms_; }
    const std::vector<BetaDensity>& betas() const { return betas_; }
    const std::vector<TabulatedDensity>& tables() const { return tables_; }
    double total_mass() const { return total_mass_; }
    std::uint64_t fingerprint() const { return fingerprint_; }

    bool kingman_only() const {
        return atoms_.empty() && betas_.empty() && tables_.empty();
    }
    bool has_densities() const { return !betas_.empty() || !tables_.empty(); }

    LambdaMeasure scaled(double c) const {
        if (!(c > 0.0)) throw std::domain_error("scaled: factor must be positive");
        std::vector<PointAtom> a = atoms_;
        for (auto& p : a) p.w *= c;
        std::vector<BetaDensity> b = betas_;
        for (auto& d : b) d.weight *= c;
        std::vector<TabulatedDensity> t = tables_;
        for (auto& td : t)
            for (auto& v : td.dens) v *= c;
        return LambdaMeasure(kingman_mass_ * c, std::move(a), std::move(b),
                             std::move(t));
    }

    // Integral of x^j over the density components only (moments used by the
    // small-q expansion of psi).
    double density_moment(int j) const {
        double m = 0.0;
        for (const auto& b : betas_) {
            // weight * B(2-beta+j, beta) / B(2-beta, beta)
            m += b.weight * std::exp(log_beta(2.0 - b.beta + j, b.beta) -
                                     log_beta(2.0 - b.beta, b.beta));
        }
        for (const auto& t : tables_) {
            auto f = [&](double x) {
                return std::pow(x, j) * detail::tabulated_density_at(t, x);
            };
            m += integrate_adaptive(f, t.x.front(), t.x.back(), 1e-14, 1e-12);
        }
        return m;
    }

private:
    std::uint64_t compute_fingerprint() const {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        auto mix = [&h](double v) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            h ^= bits;
            h *= 0x100000001B3ULL;
        };
        mix(kingman_mass_);
        for (const auto& a : atoms_) {
            mix(a.x);
            mix(a.w);
        }
        for (const auto& b : betas_) {
            mix(b.beta);
            mix(b.weight);
        }
        for (const auto& t : tables_) {
            for (std::size_t i = 0; i < t.x.size(); ++i) {
                mix(t.x[i]);
                mix(t.dens[i]);
            }
        }
        return h;
    }

    double kingman_mass_ = 0.0;
    std::vector<PointAtom> atoms_;
    std::vector<BetaDensity> betas_;
    std::vector<TabulatedDensity> tables_;
    double total_mass_ = 0.0;
    std::uint64_t fingerprint_ = 0;
};

// ---------------------------------------------------------------------------
// lambda_{b,k} = int x^{k-2} (1-x)^{b-k} Lambda(dx)
// ---------------------------------------------------------------------------

inline double lambda_bk(const LambdaMeasure& m, int b, int k) {
    if (b < 2 || k < 2 || k > b)
        throw std::domain_error("lambda_bk: need 2 <= k <= b");
    double lam = 0.0;
    if (k == 2) lam += m.kingman_mass();  // x^{k-2} at the atom x=0
    for (const auto& a : m.atoms()) {
        lam += a.w * std::pow(a.x, k - 2) * std::pow(1.0 - a.x, b - k);
    }
    for (const auto& bd : m.betas()) {
        // weight * B(k-beta, b-k+beta) / B(2-beta, beta), in log space
        lam += bd.weight * std::exp(log_beta(k - bd.beta, b - k + bd.beta) -
                                    log_beta(2.0 - bd.beta, bd.beta));
    }
    for (const auto& t : m.tables()) {
        auto f = [&](double x) {
            return std::pow(x, k - 2) * std::pow(1.0 - x, b - k) *
                   detail::tabulated_density_at(t, x);
        };
        lam += integrate_adaptive(f, t.x.front(), t.x.back(), 1e-15, 1e-11);
    }
    return lam;
}

// ---------------------------------------------------------------------------
// jump-chain rate row: total rate from b blocks plus the merge-size kernel
// ---------------------------------------------------------------------------

struct RateRow {
    double total_rate = 0.0;       // lambda_b
    std::vector<double> probs;     // P(merge size = k), k = 2..b
    std::vector<double> cum;       // cumulative of probs, cum.back() == 1

    int sample_merge_size(double u) const {
        const auto it = std::lower_bound(cum.begin(), cum.end(), u);
        const std::size_t idx =
            std::min(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
        return static_cast<int>(idx) + 2;
    }
};

namespace detail {

inline std::shared_ptr<const RateRow> build_rate_row(const LambdaMeasure& m,
                                                     int b) {
    auto row = std::make_shared<RateRow>();
    if (m.kingman_only()) {
        row->total_rate = m.kingman_mass() * (b <= 300 ? binomial_exact(b, 2)
                                                       : 0.5 * static_cast<double>(b) *
                                                             (b - 1.0));
        row->probs = {1.0};
        row->cum = {1.0};
        return row;
    }
    const int n_terms = b - 1;
    std::vector<double> w(n_terms, 0.0);
    double total;
    if (b <= 300) {
        // direct accumulation; C(b,k) cannot overflow here
        total = 0.0;
        for (int k = 2; k <= b; ++k) {
            const double lam = lambda_bk(m, b, k);
            if (lam <= 0.0) continue;
            w[k - 2] = binomial_exact(b, k) * lam;
            total += w[k - 2];
        }
        if (!(total > 0.0))
            throw consistency_error("rate row: all merge rates vanished");
    } else {
        // log-space binomials with a max-shifted sum
        std::vector<double> logw(n_terms,
                                 -std::numeric_limits<double>::infinity());
        double max_logw = -std::numeric_limits<double>::infinity();
        for (int k = 2; k <= b; ++k) {
            const double lam = lambda_bk(m, b, k);
            if (lam <= 0.0) continue;
            logw[k - 2] = log_binomial(b, k) + std::log(lam);
            max_logw = std::max(max_logw, logw[k - 2]);
        }
        if (!std::isfinite(max_logw))
            throw consistency_error("rate row: all merge rates vanished");
        double shifted = 0.0;
        for (int i = 0; i < n_terms; ++i) {
            if (std::isfinite(logw[i])) {
                w[i] = std::exp(logw[i] - max_logw);
                shifted += w[i];
            }
        }
        for (int i = 0; i < n_terms; ++i) w[i] *= std::exp(max_logw);
        total = std::exp(max_logw) * shifted;
    }
    row->total_rate = total;
    row->probs.resize(n_terms);
    row->cum.resize(n_terms);
    double acc = 0.0;
    for (int i = 0; i < n_terms; ++i) {
        row->probs[i] = w[i] / total;
        acc += row->probs[i];
        row->cum[i] = acc;
    }
    row->cum.back() = 1.0;
    return row;
}

// Capacity-bounded cache keyed by (measure fingerprint, b); safe for
// concurrent readers with exclusive inserts. Eviction is insertion-ordered.
class RateRowCache {
public:
    static RateRowCache& instance() {
        static RateRowCache cache;
        return cache;
    }

    std::shared_ptr<const RateRow> get(const LambdaMeasure& m, int b) {
        const Key key{m.fingerprint(), b};
        {
            std::shared_lock lock(mutex_);
            auto it = map_.find(key);
            if (it != map_.end()) return it->second;
        }
        auto row = build_rate_row(m, b);
        std::unique_lock lock(mutex_);
        auto [it, inserted] = map_.emplace(key, row);
        if (inserted) {
            order_.push_back(key);
            while (order_.size() > kCapacity) {
                map_.erase(order_.front());
                order_.pop_front();
            }
        }
        return it->second;
    }

private:
    struct Key {
        std::uint64_t fp;
        int b;
        bool operator==(const Key& o) const { return fp == o.fp && b == o.b; }
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            return splitmix_hash(k.fp ^ (static_cast<std::uint64_t>(k.b) << 1));
        }
        static std::size_t splitmix_hash(std::uint64_t x) {
            x += 0x9E3779B97F4A7C15ULL;
            x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
            x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
            return static_cast<std::size_t>(x ^ (x >> 31));
        }
    };
    static constexpr std::size_t kCapacity = 100000;

    std::shared_mutex mutex_;
    std::unordered_map<Key, std::shared_ptr<const RateRow>, KeyHash> map_;
    std::list<Key> order_;
};

}  // namespace detail

inline std::shared_ptr<const RateRow> rate_row(const LambdaMeasure& m, int b) {
    if (b < 2) throw std::domain_error("rate_row: need b >= 2");
    if (m.kingman_only()) return detail::build_rate_row(m, b);  // O(1), no cache
    return detail::RateRowCache::instance().get(m, b);
}

inline double total_rate(const LambdaMeasure& m, int n) {
    if (n < 2) throw std::domain_error("total_rate: need n >= 2");
    return rate_row(m, n)->total_rate;
}

inline std::vector<double> merge_size_distribution(const LambdaMeasure& m, int b) {
    if (b < 2) throw std::domain_error("merge_size_distribution: need b >= 2");
    return rate_row(m, b)->probs;
}

// ---------------------------------------------------------------------------
// psi(q) = Lambda({0}) q^2/2 + int (e^{-qx} - 1 + qx) x^{-2} Lambda_0(dx)
// ---------------------------------------------------------------------------

namespace detail {

// Density integrals use the substitution x = s^p to flatten the x^{1-beta}
// endpoint behavior near 0.
inline double beta_component_integral(const BetaDensity& bd,
                                      const std::function<double(double)>& g,
                                      double rel_tol) {
    const double a_exp = 1.0 - bd.beta;  // x^{a_exp} factor at 0
    const double norm =
        bd.weight / std::exp(log_beta(2.0 - bd.beta, bd.beta));
    const int p = std::max(2, static_cast<int>(std::ceil(1.5 / (2.0 - bd.beta))));
    auto f = [&](double s) {
        const double x = std::pow(s, p);
        if (x <= 0.0 || x >= 1.0) return 0.0;
        const double dens = norm * std::pow(x, a_exp) * std::pow(1.0 - x, bd.beta - 1.0);
        return g(x) * dens * p * std::pow(s, p - 1);
    };
    return integrate_adaptive(f, 0.0, 1.0, 1e-300, rel_tol);
}

inline double tabulated_component_integral(const TabulatedDensity& td,
                                           const std::function<double(double)>& g,
                                           double rel_tol) {
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < td.x.size(); ++i) {
        auto f = [&](double x) { return g(x) * tabulated_density_at(td, x); };
        total += integrate_adaptive(f, td.x[i], td.x[i + 1], 1e-300, rel_tol);
    }
    return total;
}

inline double density_functional(const LambdaMeasure& m,
                                 const std::function<double(double)>& g,
                                 double rel_tol) {
    double total = 0.0;
    for (const auto& bd : m.betas())
        total += beta_component_integral(bd, g, rel_tol);
    for (const auto& td : m.tables())
        total += tabulated_component_integral(td, g, rel_tol);
    return total;
}

}  // namespace detail

inline double psi(const LambdaMeasure& m, double q) {
    if (!(q > 0.0)) throw std::domain_error("psi: q must be positive");
    double val = m.kingman_mass() * 0.5 * q * q;
    for (const auto& a : m.atoms()) val += a.w * detail::psi_integrand(q, a.x);
    if (m.has_densities()) {
        val += detail::density_functional(
            m, [q](double x) { return detail::psi_integrand(q, x); }, 1e-12);
    }
    return val;
}

// d psi / d q; used for the tabulated psi interpolant in the speed module.
inline double psi_prime(const LambdaMeasure& m, double q) {
    if (!(q > 0.0)) throw std::domain_error("psi_prime: q must be positive");
    double val = m.kingman_mass() * q;
    for (const auto& a : m.atoms())
        val += a.w * detail::psi_prime_integrand(q, a.x);
    if (m.has_densities()) {
        val += detail::density_functional(
            m, [q](double x) { return detail::psi_prime_integrand(q, x); }, 1e-12);
    }
    return val;
}

// ---------------------------------------------------------------------------
// CDI criterion: int_a^inf dq/psi(q) < infinity
// ---------------------------------------------------------------------------

struct CdiResult {
    bool comes_down = false;
    double diagnostic = std::numeric_limits<double>::infinity();  // int_1^inf dq/psi
};

// Integrates over doubling windows [2^k, 2^{k+1}] up to Q = 1e12. The window
// increments of a convergent power-like tail decay geometrically with a
// stable local power p_hat = 1 - log2(increment ratio) > 1; log-corrected
// boundary cases (psi ~ q log q) show p_hat drifting down toward 1 and are
// rejected. On convergence the diagnostic is the partial integral from 1 plus
// the geometric tail estimate.
inline CdiResult cdi_test(const LambdaMeasure& m) {
    auto inv_psi = [&m](double q) { return 1.0 / psi(m, q); };
    CdiResult res;
    double partial = 0.0;
    std::vector<double> p_hat;
    double prev_inc = -1.0;
    double last_inc = 0.0, last_ratio = 1.0;
    bool accepted = false;
    for (int k = 0; k < 41; ++k) {  // 2^41 > 1e12
        const double q_lo = std::pow(2.0, k);
        const double inc = integrate_adaptive(inv_psi, q_lo, 2.0 * q_lo, 1e-300, 1e-10);
        partial += inc;
        if (partial > 1e12) return res;  // diverged outright
        if (inc < 1e-12 * std::max(partial, 1.0)) {
            res.comes_down = true;
            res.diagnostic = partial;
            return res;
        }
        if (prev_inc > 0.0) {
            const double ratio = inc / prev_inc;
            if (ratio < 1.0) {
                p_hat.push_back(1.0 - std::log2(ratio));
                last_inc = inc;
                last_ratio = ratio;
            } else {
                p_hat.clear();  // increments grew: restart the decay evidence
            }
        }
        prev_inc = inc;
        if (p_hat.size() >= 8) {
            const double p_now = p_hat.back();
            const double p_then = p_hat[p_hat.size() - 5];
            const double drift = (p_then - p_now) / std::max(p_now - 1.0, 1e-12);
            if (p_now >= 1.05 && std::abs(drift) <= 0.2) {
                accepted = true;
                // keep doubling while the tail estimate still moves the diagnostic
                if (last_inc * last_ratio / (1.0 - last_ratio) <
                    1e-8 * std::max(partial, 1e-300))
                    break;
            } else {
                accepted = false;
            }
        }
    }
    if (accepted) {
        res.comes_down = true;
        res.diagnostic = partial + last_inc * last_ratio / (1.0 - last_ratio);
    }
    return res;
}

// ---------------------------------------------------------------------------
// measure mini-grammar: kingman | beta:<b> | atom:<x>:<w> | table:<path.csv>
// combinable with '+'
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<double, double>> load_csv_pairs(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open CSV file: " + path);
    std::vector<std::pair<double, double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        for (char& c : line)
            if (c == ',' || c == ';' || c == '\t') c = ' ';
        std::istringstream ss(line);
        double a, b;
        if (ss >> a >> b) rows.emplace_back(a, b);
        // non-numeric lines (headers) are skipped
    }
    if (rows.empty()) throw config_error("no numeric rows in CSV file: " + path);
    return rows;
}

}  // namespace detail

inline LambdaMeasure parse_measure(const std::string& spec) {
    double kingman_mass = 0.0;
    std::vector<PointAtom> atoms;
    std::vector<BetaDensity> betas;
    std::vector<TabulatedDensity> tables;

    std::size_t pos = 0;
    while (pos <= spec.size()) {
        const std::size_t next = spec.find('+', pos);
        const std::string tok =
            spec.substr(pos, next == std::string::npos ? std::string::npos
                                                       : next - pos);
        pos = (next == std::string::npos) ? spec.size() + 1 : next + 1;
        if (tok.empty()) continue;
        if (tok == "kingman") {
            kingman_mass += 1.0;
            continue;
        }
        const std::size_t colon = tok.find(':');
        const std::string head = tok.substr(0, colon);
        const std::string rest =
            (colon == std::string::npos) ? "" : tok.substr(colon + 1);
        try {
            if (head == "beta") {
                betas.push_back({std::stod(rest), 1.0});
            } else if (head == "atom") {
                const std::size_t c2 = rest.find(':');
                if (c2 == std::string::npos)
                    throw config_error("atom spec needs atom:<x>:<w>");
                atoms.push_back(
                    {std::stod(rest.substr(0, c2)), std::stod(rest.substr(c2 + 1))});
            } else if (head == "table") {
                auto rows = detail::load_csv_pairs(rest);
                TabulatedDensity td;
                for (const auto& [x, d] : rows) {
                    td.x.push_back(x);
                    td.dens.push_back(d);
                }
                tables.push_back(std::move(td));
            } else {
                throw config_error("unknown measure component: " + tok);
            }
        } catch (const std::invalid_argument&) {
            throw config_error("malformed measure component: " + tok);
        }
    }
    try {
        return LambdaMeasure(kingman_mass, std::move(atoms), std::move(betas),
                             std::move(tables));
    } catch (const std::domain_error& e) {
        throw config_error(std::string("invalid measure: ") + e.what());
    }
}

}  // namespace cdilab
