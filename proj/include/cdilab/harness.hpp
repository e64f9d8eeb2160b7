#pragma once

// Experiment orchestration for the limit-theorem checks: per-t replicate
// fan-out with reproducible seed streams, statistic rescaling, empirical CDFs
// and KS distances, exceedance tables for in-probability statements, and
// deterministic JSON/CSV serialization.

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cdilab/coalescent.hpp"
#include "cdilab/evt.hpp"
#include "cdilab/lookdown.hpp"
#include "cdilab/measure.hpp"
#include "cdilab/rng.hpp"
#include "cdilab/speed.hpp"

namespace cdilab {

inline constexpr const char* kArtifactVersion = "0.1.0";

// ---------------------------------------------------------------------------
// statistics utilities
// ---------------------------------------------------------------------------

// Two-sided KS distance of a sorted sample against a CDF.
inline double ks_statistic(std::span<const double> sorted_sample,
                           const std::function<double(double)>& cdf) {
    if (sorted_sample.empty())
        throw std::domain_error("ks_statistic: empty sample");
    const double n = static_cast<double>(sorted_sample.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < sorted_sample.size(); ++i) {
        const double c = cdf(sorted_sample[i]);
        ks = std::max(ks, std::abs((i + 1) / n - c));
        ks = std::max(ks, std::abs(i / n - c));
    }
    return ks;
}

// Two-sample KS distance between sorted samples; ties are consumed from both
// samples before the empirical CDFs are compared.
inline double ks_two_sample(std::span<const double> a,
                            std::span<const double> b) {
    if (a.empty() || b.empty())
        throw std::domain_error("ks_two_sample: empty sample");
    double ks = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        ks = std::max(ks, std::abs(static_cast<double>(i) / a.size() -
                                   static_cast<double>(j) / b.size()));
    }
    return ks;
}

struct ChiSquareResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

// Two-sample chi-square on integer-valued observations; adjacent values are
// pooled until every cell's expected count is at least 5.
inline ChiSquareResult two_sample_chi_square(std::span<const int> sample_a,
                                             std::span<const int> sample_b) {
    if (sample_a.empty() || sample_b.empty())
        throw std::domain_error("two_sample_chi_square: empty sample");
    std::map<int, std::pair<double, double>> counts;
    for (int v : sample_a) counts[v].first += 1.0;
    for (int v : sample_b) counts[v].second += 1.0;
    const double na = static_cast<double>(sample_a.size());
    const double nb = static_cast<double>(sample_b.size());
    const double total = na + nb;

    // pool adjacent values so min(E_a, E_b) >= 5
    std::vector<std::pair<double, double>> bins;
    double ca = 0.0, cb = 0.0;
    for (const auto& [v, c] : counts) {
        ca += c.first;
        cb += c.second;
        const double rowsum = ca + cb;
        if (std::min(rowsum * na / total, rowsum * nb / total) >= 5.0) {
            bins.emplace_back(ca, cb);
            ca = cb = 0.0;
        }
    }
    if (ca + cb > 0.0) {
        if (!bins.empty()) {
            bins.back().first += ca;
            bins.back().second += cb;
        } else {
            bins.emplace_back(ca, cb);
        }
    }
    ChiSquareResult out;
    out.df = static_cast<int>(bins.size()) - 1;
    if (out.df < 1) {
        out.df = 0;
        out.p_value = 1.0;
        return out;
    }
    for (const auto& [oa, ob] : bins) {
        const double rowsum = oa + ob;
        const double ea = rowsum * na / total;
        const double eb = rowsum * nb / total;
        out.statistic += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
    }
    out.p_value = chi_square_tail(out.df, out.statistic);
    return out;
}

struct ExceedanceTable {
    std::vector<double> eps;                  // thresholds
    std::vector<std::vector<double>> freq;    // per t, per eps
};

// P_hat(|Z_t - c| > eps) for each t and threshold.
inline ExceedanceTable in_probability_report(
    std::span<const std::vector<double>> samples_per_t, double center,
    std::vector<double> eps_list = {0.05, 0.1, 0.2}) {
    if (samples_per_t.size() < 2)
        throw std::domain_error("in_probability_report: need >= 2 values of t");
    ExceedanceTable out;
    out.eps = std::move(eps_list);
    for (const auto& samples : samples_per_t) {
        std::vector<double> row;
        for (double eps : out.eps) {
            std::size_t exceed = 0;
            for (double z : samples)
                if (std::abs(z - center) > eps) ++exceed;
            row.push_back(samples.empty()
                              ? 0.0
                              : static_cast<double>(exceed) / samples.size());
        }
        out.freq.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// experiment configuration
// ---------------------------------------------------------------------------

enum class Statistic {
    m_scaled_lemma,
    mhat_frechet,
    mhat_exp1,
    mhat_gumbel,
    mhat_gumbel_r2eq1,
    log_m_over_log_v,
    phase_transition_a,
    phase_transition_b,
    n_over_v,
    modulus,
};

inline Statistic parse_statistic(const std::string& s) {
    if (s == "M_scaled_lemma") return Statistic::m_scaled_lemma;
    if (s == "Mhat_frechet") return Statistic::mhat_frechet;
    if (s == "Mhat_exp1") return Statistic::mhat_exp1;
    if (s == "Mhat_gumbel") return Statistic::mhat_gumbel;
    if (s == "Mhat_gumbel_r2eq1") return Statistic::mhat_gumbel_r2eq1;
    if (s == "logM_over_logv") return Statistic::log_m_over_log_v;
    if (s == "phase_transition_a") return Statistic::phase_transition_a;
    if (s == "phase_transition_b") return Statistic::phase_transition_b;
    if (s == "N_over_v") return Statistic::n_over_v;
    if (s == "modulus") return Statistic::modulus;
    throw config_error("unknown statistic: " + s);
}

inline std::string statistic_name(Statistic s) {
    switch (s) {
        case Statistic::m_scaled_lemma: return "M_scaled_lemma";
        case Statistic::mhat_frechet: return "Mhat_frechet";
        case Statistic::mhat_exp1: return "Mhat_exp1";
        case Statistic::mhat_gumbel: return "Mhat_gumbel";
        case Statistic::mhat_gumbel_r2eq1: return "Mhat_gumbel_r2eq1";
        case Statistic::log_m_over_log_v: return "logM_over_logv";
        case Statistic::phase_transition_a: return "phase_transition_a";
        case Statistic::phase_transition_b: return "phase_transition_b";
        case Statistic::n_over_v: return "N_over_v";
        case Statistic::modulus: return "modulus";
    }
    return "?";
}

struct ExperimentConfig {
    std::string measure_spec = "kingman";
    std::string tail_spec = "pareto:1,2";
    std::vector<double> t_list;          // strictly decreasing
    int replicates = 1000;               // per t
    int n_explicit = 0;                  // 0 = ceil(20 v(t)), capped at 2e5
    int dim = 1;
    std::uint64_t master_seed = 1;
    Statistic statistic = Statistic::m_scaled_lemma;
    std::string out_path;
    int threads = 1;
    double s_min_factor = 0.2;           // N_over_v: s_min = factor * t
    std::vector<double> moments = {1.0, 2.0};
    double delta = 0.4;                  // modulus exponent
    int modulus_grid_points = 16;
    bool n_sensitivity = false;          // also run Mhat statistics at 2n

    void validate() const {
        if (t_list.empty()) throw config_error("config: t_list is empty");
        for (std::size_t i = 0; i < t_list.size(); ++i) {
            if (!(t_list[i] > 0.0)) throw config_error("config: t values must be positive");
            if (i > 0 && t_list[i] >= t_list[i - 1])
                throw config_error("config: t_list must be strictly decreasing");
        }
        if (replicates < 100) throw config_error("config: replicates must be >= 100");
        if (dim < 1) throw config_error("config: dim must be >= 1");
        if (threads < 1) throw config_error("config: threads must be >= 1");
        if (!(s_min_factor > 0.0 && s_min_factor < 1.0))
            throw config_error("config: s_min_factor must be in (0,1)");
    }
};

// key=value lines; '#' starts a comment.
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    auto parse_doubles = [](const std::string& s) {
        std::vector<double> out;
        std::istringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) out.push_back(std::stod(tok));
        return out;
    };
    while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto ws = " \t\r\n";
            const auto b = s.find_first_not_of(ws);
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(ws);
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        try {
            if (key == "measure") cfg.measure_spec = val;
            else if (key == "tail") cfg.tail_spec = val;
            else if (key == "t_list") cfg.t_list = parse_doubles(val);
            else if (key == "replicates") cfg.replicates = std::stoi(val);
            else if (key == "n") cfg.n_explicit = (val == "auto") ? 0 : std::stoi(val);
            else if (key == "dim") cfg.dim = std::stoi(val);
            else if (key == "seed") cfg.master_seed = std::stoull(val);
            else if (key == "statistic") cfg.statistic = parse_statistic(val);
            else if (key == "out") cfg.out_path = val;
            else if (key == "threads") cfg.threads = std::stoi(val);
            else if (key == "s_min_factor") cfg.s_min_factor = std::stod(val);
            else if (key == "moments") cfg.moments = parse_doubles(val);
            else if (key == "delta") cfg.delta = std::stod(val);
            else if (key == "modulus_grid_points") cfg.modulus_grid_points = std::stoi(val);
            else if (key == "n_sensitivity") cfg.n_sensitivity = (val == "true" || val == "1");
            else throw config_error("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw config_error("malformed config value for key: " + key);
        } catch (const std::out_of_range&) {
            throw config_error("config value out of range for key: " + key);
        }
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// experiment result
// ---------------------------------------------------------------------------

struct PerTResult {
    double t = 0.0;
    double v = 0.0;
    int n = 0;
    double ks = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> ecdf;                 // sorted statistic values
    std::map<std::string, double> moments;    // summary scalars
    std::map<std::string, double> exceedance; // per eps threshold
    std::vector<std::string> annotations;

    // auxiliary per-replicate values kept in memory for cross-checks; not
    // serialized
    std::vector<int> aux_root_counts;
    std::vector<double> aux_m;
    std::vector<double> aux_mhat;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<PerTResult> per_t;
    double wall_time_ms = 0.0;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        nlohmann::ordered_json jc;
        jc["measure"] = config.measure_spec;
        jc["tail"] = config.tail_spec;
        jc["t_list"] = config.t_list;
        jc["replicates"] = config.replicates;
        jc["n"] = config.n_explicit == 0 ? "auto" : std::to_string(config.n_explicit);
        jc["dim"] = config.dim;
        jc["seed"] = config.master_seed;
        jc["statistic"] = statistic_name(config.statistic);
        jc["s_min_factor"] = config.s_min_factor;
        jc["moments"] = config.moments;
        jc["delta"] = config.delta;
        jc["n_sensitivity"] = config.n_sensitivity;
        j["config"] = jc;
        j["per_t"] = nlohmann::ordered_json::array();
        for (const auto& p : per_t) {
            nlohmann::ordered_json jp;
            jp["t"] = p.t;
            jp["v"] = p.v;
            jp["n"] = p.n;
            if (std::isfinite(p.ks))
                jp["ks"] = p.ks;
            else
                jp["ks"] = nullptr;
            jp["ecdf_x"] = p.ecdf;
            std::vector<double> ecdf_y(p.ecdf.size());
            for (std::size_t i = 0; i < ecdf_y.size(); ++i)
                ecdf_y[i] = static_cast<double>(i + 1) / ecdf_y.size();
            jp["ecdf_y"] = ecdf_y;
            nlohmann::ordered_json jm;
            for (const auto& [k, v] : p.moments) jm[k] = v;
            jp["moments"] = jm;
            if (!p.exceedance.empty()) {
                nlohmann::ordered_json je;
                for (const auto& [k, v] : p.exceedance) je[k] = v;
                jp["exceedance"] = je;
            } else {
                jp["exceedance"] = nullptr;
            }
            jp["annotations"] = p.annotations;
            j["per_t"].push_back(jp);
        }
        nlohmann::ordered_json jmeta;
        jmeta["master_seed"] = config.master_seed;
        jmeta["statistic"] = statistic_name(config.statistic);
        jmeta["artifact_version"] = kArtifactVersion;
        jmeta["tolerance_note"] =
            "KS and exceedance thresholds are engineering margins; no "
            "convergence rates are available for these asymptotic limits";
        jmeta["wall_time_ms"] = wall_time_ms;
        j["meta"] = jmeta;
        return j;
    }

    // Serialization with the wall-time field removed; two runs of one config
    // must agree byte-for-byte on this string.
    std::string statistics_bytes() const {
        auto j = to_json();
        j["meta"].erase("wall_time_ms");
        return j.dump();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "t,v,n,ks,mean,sd,q05,q25,q50,q75,q95";
        const bool has_exceed = !per_t.empty() && !per_t.front().exceedance.empty();
        if (has_exceed)
            for (const auto& [k, v] : per_t.front().exceedance) os << ",exceed_" << k;
        os << "\n";
        for (const auto& p : per_t) {
            auto q = [&p](double level) {
                if (p.ecdf.empty()) return 0.0;
                const double idx = level * (p.ecdf.size() - 1);
                const std::size_t lo = static_cast<std::size_t>(idx);
                const std::size_t hi = std::min(lo + 1, p.ecdf.size() - 1);
                return p.ecdf[lo] + (idx - lo) * (p.ecdf[hi] - p.ecdf[lo]);
            };
            double mean = 0.0, sd = 0.0;
            if (!p.ecdf.empty()) {
                for (double v : p.ecdf) mean += v;
                mean /= p.ecdf.size();
                for (double v : p.ecdf) sd += (v - mean) * (v - mean);
                sd = std::sqrt(sd / p.ecdf.size());
            }
            os << p.t << "," << p.v << "," << p.n << "," << p.ks << "," << mean
               << "," << sd << "," << q(0.05) << "," << q(0.25) << "," << q(0.50)
               << "," << q(0.75) << "," << q(0.95);
            if (has_exceed)
                for (const auto& [k, v] : p.exceedance) os << "," << v;
            os << "\n";
        }
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

namespace detail {

inline void parallel_for(int n_items, int n_threads,
                         const std::function<void(int)>& fn) {
    n_threads = std::max(1, std::min(n_threads, n_items));
    if (n_threads == 1) {
        for (int i = 0; i < n_items; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&]() {
            try {
                for (int i = next.fetch_add(1); i < n_items; i = next.fetch_add(1))
                    fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline bool statistic_needs_motion(Statistic s) {
    switch (s) {
        case Statistic::m_scaled_lemma:
        case Statistic::n_over_v:
            return false;
        default:
            return true;
    }
}

inline bool statistic_is_in_probability(Statistic s) {
    return s == Statistic::log_m_over_log_v ||
           s == Statistic::phase_transition_a ||
           s == Statistic::phase_transition_b;
}

// center of the in-probability statistic, limit CDF otherwise
struct StatisticTarget {
    std::function<double(double)> limit;  // CDF of the limit law (or step at c)
    double center = 0.0;
    bool in_probability = false;
};

inline StatisticTarget statistic_target(Statistic s, const TailFamily& fam) {
    StatisticTarget tgt;
    switch (s) {
        case Statistic::m_scaled_lemma:
        case Statistic::mhat_exp1:
            tgt.limit = [](double x) { return limit_cdf(LimitKind::exp1, x); };
            break;
        case Statistic::mhat_frechet: {
            const double shape = fam.r2();
            tgt.limit = [shape](double x) {
                return limit_cdf(LimitKind::frechet, x, shape);
            };
            break;
        }
        case Statistic::mhat_gumbel:
        case Statistic::mhat_gumbel_r2eq1:
            tgt.limit = [](double x) { return limit_cdf(LimitKind::gumbel, x); };
            break;
        case Statistic::log_m_over_log_v:
            tgt.center = 1.0 / fam.r2();
            tgt.in_probability = true;
            break;
        case Statistic::phase_transition_a:
            tgt.center = 0.0;
            tgt.in_probability = true;
            break;
        case Statistic::phase_transition_b:
            tgt.center = 1.0;
            tgt.in_probability = true;
            break;
        case Statistic::n_over_v:
            tgt.center = 1.0;
            break;
        case Statistic::modulus:
            break;
    }
    if (tgt.in_probability || s == Statistic::n_over_v) {
        const double c = tgt.center;
        tgt.limit = [c](double x) { return x < c ? 0.0 : 1.0; };
    }
    return tgt;
}

inline void validate_statistic_family(Statistic s, const TailFamily& fam) {
    const TailKind k = fam.kind();
    auto is_slow = [&] { return k == TailKind::slow_power_log; };
    auto is_fast = [&] {
        return k == TailKind::fast_stretched_exp || k == TailKind::std_normal;
    };
    switch (s) {
        case Statistic::mhat_frechet:
            if (!is_slow())
                throw config_error("Mhat_frechet requires a slow (power-log) tail");
            break;
        case Statistic::mhat_exp1:
            if (!is_slow() || fam.r3() != 0.0)
                throw config_error("Mhat_exp1 requires a pure Pareto tail (r3 = 0)");
            break;
        case Statistic::log_m_over_log_v:
            if (!is_slow())
                throw config_error("logM_over_logv requires a slow (power-log) tail");
            break;
        case Statistic::mhat_gumbel:
            if (!is_fast())
                throw config_error("Mhat_gumbel requires a fast (stretched-exp) tail");
            break;
        case Statistic::mhat_gumbel_r2eq1: {
            if (!is_fast())
                throw config_error("Mhat_gumbel_r2eq1 requires a fast tail");
            double r1, r2, r3, r4;
            fam.fast_params(r1, r2, r3, r4);
            if (r2 != 1.0)
                throw config_error("Mhat_gumbel_r2eq1 requires r2 = 1");
            break;
        }
        case Statistic::phase_transition_a: {
            if (!is_fast())
                throw config_error("phase_transition_a requires a fast tail");
            double r1, r2, r3, r4;
            fam.fast_params(r1, r2, r3, r4);
            if (!(r2 > 1.0))
                throw config_error("phase_transition_a requires r2 > 1");
            break;
        }
        case Statistic::phase_transition_b:
            if (!is_fast())
                throw config_error("phase_transition_b requires a fast tail");
            break;
        default:
            break;
    }
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
    const auto t_start = std::chrono::steady_clock::now();
    config.validate();

    LambdaMeasure measure_raw = parse_measure(config.measure_spec);
    const TailFamily family = parse_tail(config.tail_spec);
    detail::validate_statistic_family(config.statistic, family);

    // The a.s. and moment CDI statements are stated for unit total mass;
    // non-unit measures are renormalized with the exact time rescaling
    // t -> mass * t, which leaves every statistic invariant in law.
    ExperimentResult result;
    result.config = config;
    const double mass = measure_raw.total_mass();
    std::vector<double> t_list = config.t_list;
    std::string mass_note;
    LambdaMeasure measure = measure_raw;
    if (std::abs(mass - 1.0) > 1e-12) {
        measure = measure_raw.scaled(1.0 / mass);
        for (double& t : t_list) t *= mass;
        mass_note = "measure renormalized to unit mass; time rescaled by " +
                    std::to_string(mass);
    }

    const bool needs_motion = detail::statistic_needs_motion(config.statistic);
    const detail::StatisticTarget target =
        detail::statistic_target(config.statistic, family);

    // speed table spanning the full experiment range, for the sup statistics
    // and the Gumbel assumption check
    const double t_small = t_list.back();
    const double t_big = t_list.front();
    SpeedTable table = build_speed_table(
        measure, std::min(t_small * config.s_min_factor * 0.5, t_small),
        t_big * 2.0, 96);

    double fr1 = 0, fr2 = 0, fr3 = 0, fr4 = 0;
    const bool fast_like = family.kind() == TailKind::fast_stretched_exp ||
                           family.kind() == TailKind::std_normal;
    if (fast_like) family.fast_params(fr1, fr2, fr3, fr4);
    std::optional<ScalingBundle> bundle;
    if (fast_like || family.kind() == TailKind::slow_power_log)
        bundle = ScalingBundle::for_family(family);

    for (std::size_t t_idx = 0; t_idx < t_list.size(); ++t_idx) {
        const double t = t_list[t_idx];  // unit-mass time
        PerTResult per;
        per.t = config.t_list[t_idx];    // reported in the caller's time units
        per.v = speed_v(measure, t);
        int n;
        if (config.n_explicit > 0) {
            n = config.n_explicit;
        } else {
            const double wanted = std::ceil(20.0 * per.v);
            if (wanted > 2e5) {
                // smallest feasible t solves v(t) = 1e4
                const double t_feasible = big_psi(measure, 1e4) / mass;
                throw config_error(
                    "n policy infeasible: v(t) too large for the 2e5 cap; "
                    "smallest feasible t is about " +
                    std::to_string(t_feasible));
            }
            n = static_cast<int>(wanted);
        }
        per.n = n;

        if ((config.statistic == Statistic::mhat_gumbel ||
             config.statistic == Statistic::mhat_gumbel_r2eq1) &&
            !assumption_v_check(table, config.delta, fr2)) {
            per.annotations.push_back(
                "assumption_v_check failed at delta=" + std::to_string(config.delta) +
                "; continuing (the condition is sufficient, not necessary)");
        }
        if (!mass_note.empty()) per.annotations.push_back(mass_note);

        const int reps = config.replicates;
        std::vector<double> values(reps);
        std::vector<int> root_counts(reps);
        std::vector<double> m_vals(reps), mhat_vals(reps);

        const double v = per.v;
        const double log_v = std::log(v);

        if (config.statistic == Statistic::n_over_v) {
            const double s_min = config.s_min_factor * t;
            NOverVAccumulator acc(table, t, s_min, config.moments);
            // sequential: the accumulator is order-stable and paths are large
            for (int i = 0; i < reps; ++i) {
                const auto path = simulate_block_count(
                    measure, n, t, seed_stream(config.master_seed, i, stream::genealogy));
                values[i] = block_count_at(path, t) / v;
                root_counts[i] = block_count_at(path, t);
                acc.add(path);
            }
            const auto summary = acc.summary();
            per.moments["mean_ratio"] = summary.mean_ratio_at_t;
            per.moments["se_ratio"] = summary.se_ratio_at_t;
            for (std::size_t j = 0; j < summary.moment_orders.size(); ++j) {
                std::ostringstream key;
                key << "sup_moment_" << summary.moment_orders[j];
                per.moments[key.str()] = summary.sup_moments[j];
                per.moments[key.str() + "_se"] = summary.sup_moment_ses[j];
            }
            if (summary.start_guard_warning)
                per.annotations.push_back("n0 below 10 v(s_min): start-from-infinity "
                                          "emulation is marginal");
        } else if (!needs_motion) {
            // M via the block-counting route: root count N, then N i.i.d. draws
            detail::parallel_for(reps, config.threads, [&](int i) {
                const auto path = simulate_block_count(
                    measure, n, t, seed_stream(config.master_seed, i, stream::genealogy));
                const int roots = block_count_at(path, t);
                Rng draw_rng(seed_stream(config.master_seed, i, stream::initial));
                double m = -std::numeric_limits<double>::infinity();
                for (int r = 0; r < roots; ++r)
                    m = std::max(m, family.sample(draw_rng));
                root_counts[i] = roots;
                m_vals[i] = m;
                values[i] = v * family.fbar(m);
            });
        } else {
            auto motion_pass = [&](int n_leaves, std::vector<double>& out_values,
                                   std::vector<int>& out_roots,
                                   std::vector<double>& out_m,
                                   std::vector<double>& out_mhat) {
                detail::parallel_for(reps, config.threads, [&](int i) {
                    auto forest = simulate_genealogy(
                        measure, n_leaves, t,
                        seed_stream(config.master_seed, i, stream::genealogy));
                    auto spatial = attach_motion(
                        std::move(forest),
                        [&family](Rng& r) { return family.sample(r); }, config.dim,
                        seed_stream(config.master_seed, i, stream::motion));
                    out_roots[i] = spatial.forest.root_count();
                    const double mhat = extremal_max(
                        spatial, config.dim == 1 ? ExtremalMode::coordinate_max
                                                 : ExtremalMode::norm);
                    out_mhat[i] = mhat;
                    out_m[i] = ancestor_max(spatial);
                    switch (config.statistic) {
                        case Statistic::mhat_frechet:
                            out_values[i] = bundle->a(v) * mhat;
                            break;
                        case Statistic::mhat_exp1:
                            out_values[i] =
                                family.r1() * std::pow(mhat, -family.r2()) * v;
                            break;
                        case Statistic::mhat_gumbel: {
                            const auto [abar, bbar] = bundle->abar_bbar(v);
                            out_values[i] = abar * mhat - bbar;
                            break;
                        }
                        case Statistic::mhat_gumbel_r2eq1:
                            out_values[i] = fr1 * mhat - log_v -
                                            fr3 * std::log(log_v) -
                                            std::log(fr4 * std::pow(fr1, -fr3));
                            break;
                        case Statistic::log_m_over_log_v:
                            out_values[i] = std::log(mhat) / log_v;
                            break;
                        case Statistic::phase_transition_a:
                            out_values[i] = mhat - std::pow(log_v / fr1, 1.0 / fr2);
                            break;
                        case Statistic::phase_transition_b:
                            out_values[i] =
                                mhat * std::pow(log_v / fr1, -1.0 / fr2);
                            break;
                        case Statistic::modulus: {
                            const auto grid =
                                default_modulus_grid(t, config.modulus_grid_points);
                            double sup = 0.0;
                            for (double s : grid)
                                sup = std::max(sup, dislocation(spatial, s) /
                                                        std::pow(t - s, config.delta));
                            out_values[i] = sup;
                            break;
                        }
                        default:
                            out_values[i] = v * family.fbar(mhat);
                    }
                });
            };
            motion_pass(n, values, root_counts, m_vals, mhat_vals);
            if (config.n_sensitivity && target.limit) {
                // finite-n truncation probe: rerun at 2n with the same seeds
                const int n2 = static_cast<int>(std::min(2.0 * n, 2e5));
                std::vector<double> v2(reps), m2(reps), mh2(reps);
                std::vector<int> r2(reps);
                motion_pass(n2, v2, r2, m2, mh2);
                std::sort(v2.begin(), v2.end());
                std::vector<double> v1 = values;
                std::sort(v1.begin(), v1.end());
                std::ostringstream note;
                note << "n-doubling sensitivity: ks(n=" << n
                     << ")=" << ks_statistic(v1, target.limit) << ", ks(n=" << n2
                     << ")=" << ks_statistic(v2, target.limit);
                per.annotations.push_back(note.str());
            }
        }

        per.aux_root_counts = root_counts;
        per.aux_m = m_vals;
        per.aux_mhat = mhat_vals;
        per.ecdf = values;
        std::sort(per.ecdf.begin(), per.ecdf.end());
        if (target.limit) per.ks = ks_statistic(per.ecdf, target.limit);
        if (per.moments.empty()) {
            double mean = 0.0;
            for (double z : per.ecdf) mean += z;
            mean /= per.ecdf.size();
            double var = 0.0;
            for (double z : per.ecdf) var += (z - mean) * (z - mean);
            per.moments["mean"] = mean;
            per.moments["sd"] = std::sqrt(var / per.ecdf.size());
        }
        if (target.in_probability) {
            for (double eps : {0.05, 0.1, 0.2}) {
                std::size_t exceed = 0;
                for (double z : values)
                    if (std::abs(z - target.center) > eps) ++exceed;
                std::ostringstream key;
                key << eps;
                per.exceedance[key.str()] =
                    static_cast<double>(exceed) / values.size();
            }
        }
        result.per_t.push_back(std::move(per));
    }

    const auto t_end = std::chrono::steady_clock::now();
    result.wall_time_ms =
        std::chrono::duration<double, std::milli>(t_end - t_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// genealogy/block-count law equality and spatial negligibility
// ---------------------------------------------------------------------------

// Two-sample chi-square between root counts from the backward genealogy and
// N(t) from the block-counting chain.
inline ChiSquareResult law_equality_chi_square(const LambdaMeasure& m, int n,
                                               double t, int replicates,
                                               std::uint64_t master_seed,
                                               int threads = 1) {
    std::vector<int> roots(replicates), blocks(replicates);
    detail::parallel_for(replicates, threads, [&](int i) {
        const auto forest = simulate_genealogy(
            m, n, t, seed_stream(master_seed, i, stream::genealogy));
        roots[i] = forest.root_count();
        const auto path = simulate_block_count(
            m, n, t, seed_stream(master_seed, i, stream::motion));
        blocks[i] = block_count_at(path, t);
    });
    return two_sample_chi_square(roots, blocks);
}

struct DisplacementSummary {
    double p99_abs_diff = 0.0;  // 99th percentile of |Mhat - M|
    double iqr_m = 0.0;         // interquartile range of M
};

inline DisplacementSummary displacement_summary(const LambdaMeasure& m,
                                                const TailFamily& family,
                                                double t, int n, int replicates,
                                                std::uint64_t master_seed,
                                                int threads = 1) {
    std::vector<double> diffs(replicates), ms(replicates);
    detail::parallel_for(replicates, threads, [&](int i) {
        auto forest = simulate_genealogy(
            m, n, t, seed_stream(master_seed, i, stream::genealogy));
        auto spatial =
            attach_motion(std::move(forest),
                          [&family](Rng& r) { return family.sample(r); }, 1,
                          seed_stream(master_seed, i, stream::motion));
        const double mhat = extremal_max(spatial);
        const double mm = ancestor_max(spatial);
        diffs[i] = std::abs(mhat - mm);
        ms[i] = mm;
    });
    std::sort(diffs.begin(), diffs.end());
    std::sort(ms.begin(), ms.end());
    auto quantile = [](const std::vector<double>& s, double q) {
        const double idx = q * (s.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(idx);
        const std::size_t hi = std::min(lo + 1, s.size() - 1);
        return s[lo] + (idx - lo) * (s[hi] - s[lo]);
    };
    DisplacementSummary out;
    out.p99_abs_diff = quantile(diffs, 0.99);
    out.iqr_m = quantile(ms, 0.75) - quantile(ms, 0.25);
    return out;
}

// Numerical check of the displacement-robustness condition: reports
// v(t) |Fbar(Fbar^{(-1)}(x/v) +- C t^delta) - x/v| across the t ladder; the
// sequence should decrease toward 0 when the condition holds.
inline std::vector<double> fa_condition_report(const TailFamily& family,
                                               const LambdaMeasure& m,
                                               std::span<const double> t_list,
                                               double delta, double c_delta,
                                               double x = 1.0) {
    std::vector<double> out;
    for (double t : t_list) {
        const double v = speed_v(m, t);
        const double y = x / v;
        const double inv = family.fbar_inv_asymptotic(y);
        const double shift = c_delta * std::pow(t, delta);
        const double up = std::abs(family.fbar(inv + shift) - y);
        const double dn = std::abs(family.fbar(inv - shift) - y);
        out.push_back(v * std::max(up, dn));
    }
    return out;
}

}  // namespace cdilab
