#pragma once

// Exact simulation of the block-counting jump chain of the Lambda-coalescent
// and the statistics that compare N(t) against the speed function v(t).

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cdilab/measure.hpp"
#include "cdilab/rng.hpp"
#include "cdilab/speed.hpp"

namespace cdilab {

struct BlockCountPath {
    int n0 = 0;
    double horizon = 0.0;
    std::vector<double> jump_times;   // increasing, in (0, horizon]
    std::vector<int> counts_after;    // strictly decreasing
    std::vector<int> merge_sizes;     // k >= 2 per jump
    std::uint64_t seed = 0;

    bool structurally_valid() const {
        if (jump_times.size() != counts_after.size() ||
            jump_times.size() != merge_sizes.size())
            return false;
        int prev = n0;
        double prev_t = 0.0;
        for (std::size_t i = 0; i < jump_times.size(); ++i) {
            if (!(jump_times[i] > prev_t) || jump_times[i] > horizon) return false;
            if (merge_sizes[i] < 2) return false;
            if (counts_after[i] != prev - (merge_sizes[i] - 1)) return false;
            if (counts_after[i] < 1) return false;
            prev = counts_after[i];
            prev_t = jump_times[i];
        }
        return true;
    }
};

// Gillespie jump chain: from b blocks wait Exp(lambda_b), merge k blocks drawn
// from the merge-size kernel, repeat until absorption or the horizon.
inline BlockCountPath simulate_block_count(const LambdaMeasure& m, int n0,
                                           double horizon, std::uint64_t seed) {
    if (n0 < 2) throw std::domain_error("simulate_block_count: need n0 >= 2");
    if (horizon < 0.0)
        throw std::domain_error("simulate_block_count: negative horizon");
    BlockCountPath path;
    path.n0 = n0;
    path.horizon = horizon;
    path.seed = seed;
    Rng rng(seed);
    const bool kingman_fast = m.kingman_only();
    const double kingman_mass = m.kingman_mass();
    int b = n0;
    double t = 0.0;
    while (b >= 2) {
        int k;
        if (kingman_fast) {  // pair mergers only; skip the rate-row machinery
            t += rng.exponential(0.5 * kingman_mass * b * (b - 1.0));
            if (t > horizon) break;
            k = 2;
        } else {
            const auto row = rate_row(m, b);
            t += rng.exponential(row->total_rate);
            if (t > horizon) break;
            k = row->sample_merge_size(rng.uniform01());
        }
        b -= (k - 1);
        path.jump_times.push_back(t);
        path.counts_after.push_back(b);
        path.merge_sizes.push_back(k);
    }
    return path;
}

// Right-continuous evaluation of N(s).
inline int block_count_at(const BlockCountPath& path, double s) {
    if (s < 0.0 || s > path.horizon)
        throw std::domain_error("block_count_at: s outside [0, horizon]");
    const auto it =
        std::upper_bound(path.jump_times.begin(), path.jump_times.end(), s);
    const std::size_t idx = it - path.jump_times.begin();
    return idx == 0 ? path.n0 : path.counts_after[idx - 1];
}

// ---------------------------------------------------------------------------
// N(s)/v(s) statistics
// ---------------------------------------------------------------------------

struct NOverVSummary {
    double t = 0.0;
    double s_min = 0.0;
    std::size_t replicates = 0;
    double mean_ratio_at_t = 0.0;   // mean of N(t)/v(t)
    double se_ratio_at_t = 0.0;
    std::vector<double> moment_orders;
    std::vector<double> sup_moments;     // E sup_{[s_min,t]} |N/v - 1|^d
    std::vector<double> sup_moment_ses;
    bool start_guard_warning = false;    // n0 < 10 v(s_min)
};

// Streams per-path sup statistics so large descents need not be stored.
class NOverVAccumulator {
public:
    NOverVAccumulator(const SpeedTable& table, double t, double s_min,
                      std::vector<double> moment_orders)
        : table_(table), t_(t), s_min_(s_min), orders_(std::move(moment_orders)) {
        if (!(0.0 < s_min && s_min < t))
            throw std::domain_error("n_over_v: need 0 < s_min < t");
        for (double d : orders_)
            if (d < 1.0) throw std::domain_error("n_over_v: moment orders must be >= 1");
        sum_pow_.assign(orders_.size(), 0.0);
        sum_pow2_.assign(orders_.size(), 0.0);
        v_s_min_ = table_.v(s_min_);
        v_t_ = table_.v(t_);
    }

    void add(const BlockCountPath& path) {
        if (path.horizon < t_)
            throw std::domain_error("n_over_v: path horizon below t");
        if (path.n0 < v_s_min_)
            throw std::domain_error(
                "n_over_v: n0 below v(s_min); the finite-start chain cannot "
                "emulate start-from-infinity at this s_min");
        if (path.n0 < 10.0 * v_s_min_) guard_warning_ = true;

        // sup over each constancy interval is attained at an endpoint since N
        // is constant there and v is monotone
        double sup = 0.0;
        auto visit = [&](int count, double s) {
            const double dev = std::abs(count / table_.v(s) - 1.0);
            sup = std::max(sup, dev);
        };
        int count = block_count_at(path, s_min_);
        double seg_start = s_min_;
        const auto lo = std::upper_bound(path.jump_times.begin(),
                                         path.jump_times.end(), s_min_);
        for (std::size_t i = lo - path.jump_times.begin();
             i < path.jump_times.size() && path.jump_times[i] <= t_; ++i) {
            visit(count, seg_start);
            visit(count, path.jump_times[i]);
            count = path.counts_after[i];
            seg_start = path.jump_times[i];
        }
        visit(count, seg_start);
        visit(count, t_);

        const double ratio_t = block_count_at(path, t_) / v_t_;
        sum_ratio_ += ratio_t;
        sum_ratio2_ += ratio_t * ratio_t;
        for (std::size_t j = 0; j < orders_.size(); ++j) {
            const double p = std::pow(sup, orders_[j]);
            sum_pow_[j] += p;
            sum_pow2_[j] += p * p;
        }
        ++n_;
    }

    NOverVSummary summary() const {
        if (n_ == 0) throw std::domain_error("n_over_v: no replicates");
        NOverVSummary s;
        s.t = t_;
        s.s_min = s_min_;
        s.replicates = n_;
        const double n = static_cast<double>(n_);
        s.mean_ratio_at_t = sum_ratio_ / n;
        s.se_ratio_at_t = std::sqrt(std::max(
            0.0, (sum_ratio2_ / n - s.mean_ratio_at_t * s.mean_ratio_at_t) / n));
        s.moment_orders = orders_;
        for (std::size_t j = 0; j < orders_.size(); ++j) {
            const double mean = sum_pow_[j] / n;
            s.sup_moments.push_back(mean);
            s.sup_moment_ses.push_back(std::sqrt(
                std::max(0.0, (sum_pow2_[j] / n - mean * mean) / n)));
        }
        s.start_guard_warning = guard_warning_;
        return s;
    }

private:
    const SpeedTable& table_;
    double t_, s_min_, v_s_min_, v_t_;
    std::vector<double> orders_;
    std::vector<double> sum_pow_, sum_pow2_;
    double sum_ratio_ = 0.0, sum_ratio2_ = 0.0;
    std::size_t n_ = 0;
    bool guard_warning_ = false;
};

inline NOverVSummary n_over_v_statistics(std::span<const BlockCountPath> paths,
                                         const SpeedTable& table, double t,
                                         double s_min,
                                         std::vector<double> moment_orders) {
    NOverVAccumulator acc(table, t, s_min, std::move(moment_orders));
    for (const auto& p : paths) acc.add(p);
    return acc.summary();
}

// ---------------------------------------------------------------------------
// envelope check from the N(s) concentration bound
// ---------------------------------------------------------------------------

struct EnvelopeResult {
    double fraction_inside = 0.0;
    double envelope_factor = 1.0;  // e^{24 s^alpha*}
};

inline EnvelopeResult envelope_check(std::span<const BlockCountPath> paths,
                                     const SpeedTable& table, double s,
                                     double alpha_star) {
    if (!(alpha_star > 0.0 && alpha_star < 0.5))
        throw std::domain_error("envelope_check: alpha* must be in (0, 1/2)");
    if (paths.empty()) throw std::domain_error("envelope_check: no paths");
    const double v = table.v(s);
    const double factor = std::exp(24.0 * std::pow(s, alpha_star));
    std::size_t inside = 0;
    for (const auto& p : paths) {
        const double n = block_count_at(p, s);
        if (n >= v / factor && n <= v * factor) ++inside;
    }
    EnvelopeResult out;
    out.fraction_inside = static_cast<double>(inside) / paths.size();
    out.envelope_factor = factor;
    return out;
}

}  // namespace cdilab
