// cdi-lab: command-line front end for the Lambda-coalescent speed-of-CDI
// toolkit. Subcommands: speed, rates, simulate-n, genealogy, experiment.
// Exit codes: 0 success, 2 configuration error, 3 internal-consistency error.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdilab/coalescent.hpp"
#include "cdilab/evt.hpp"
#include "cdilab/harness.hpp"
#include "cdilab/lookdown.hpp"
#include "cdilab/measure.hpp"
#include "cdilab/speed.hpp"

namespace {

using nlohmann::ordered_json;

int cmd_speed(const std::string& measure_spec, double t_query,
              const std::vector<double>& table_args, const std::string& out) {
    const auto m = cdilab::parse_measure(measure_spec);
    if (!table_args.empty()) {
        if (table_args.size() != 3)
            throw cdilab::config_error("--table needs t_min t_max n");
        const auto table = cdilab::build_speed_table(
            m, table_args[0], table_args[1], static_cast<int>(table_args[2]));
        std::ostream* os = &std::cout;
        std::ofstream file;
        if (!out.empty()) {
            file.open(out);
            if (!file) throw cdilab::config_error("cannot open output file: " + out);
            os = &file;
        }
        (*os) << "t,v\n";
        for (std::size_t i = 0; i < table.t_grid().size(); ++i)
            (*os) << table.t_grid()[i] << "," << table.v_values()[i] << "\n";
        return 0;
    }
    if (!(t_query > 0.0)) throw cdilab::config_error("speed: provide --t > 0");
    const auto res = cdilab::speed_v_checked(m, t_query);
    std::cout << res.v << "\n";
    if (res.post_absorption)
        std::cerr << "warning: post-absorption regime (v(t) < 1)\n";
    return 0;
}

int cmd_rates(const std::string& measure_spec, int b, int k, int n, double q,
              bool cdi) {
    const auto m = cdilab::parse_measure(measure_spec);
    if (!(b > 0 && k > 0) && n <= 0 && q <= 0.0 && !cdi) {
        std::cout << "total_mass = " << m.total_mass()
                  << "  (use --b/--k, --n, --psi, or --cdi)\n";
        return 0;
    }
    if (b > 0 && k > 0)
        std::cout << "lambda_" << b << "," << k << " = "
                  << cdilab::lambda_bk(m, b, k) << "\n";
    if (n > 0)
        std::cout << "lambda_" << n << " = " << cdilab::total_rate(m, n) << "\n";
    if (q > 0.0) std::cout << "psi(" << q << ") = " << cdilab::psi(m, q) << "\n";
    if (cdi) {
        const auto res = cdilab::cdi_test(m);
        std::cout << "comes_down_from_infinity = "
                  << (res.comes_down ? "true" : "false");
        if (res.comes_down) std::cout << "  (diagnostic " << res.diagnostic << ")";
        std::cout << "\n";
    }
    return 0;
}

int cmd_simulate_n(const std::string& measure_spec, int n0, double t, int reps,
                   std::uint64_t seed, const std::string& out) {
    const auto m = cdilab::parse_measure(measure_spec);
    ordered_json arr = ordered_json::array();
    for (int i = 0; i < reps; ++i) {
        const std::uint64_t s = cdilab::seed_stream(seed, i, cdilab::stream::genealogy);
        const auto path = cdilab::simulate_block_count(m, n0, t, s);
        ordered_json jp;
        jp["seed"] = s;
        jp["jump_times"] = path.jump_times;
        jp["counts_after"] = path.counts_after;
        jp["merge_sizes"] = path.merge_sizes;
        arr.push_back(std::move(jp));
    }
    if (out.empty()) {
        std::cout << arr.dump(2) << "\n";
    } else {
        std::ofstream file(out);
        if (!file) throw cdilab::config_error("cannot open output file: " + out);
        file << arr.dump(2) << "\n";
    }
    return 0;
}

int cmd_genealogy(const std::string& measure_spec, int n, double t, int dim,
                  const std::string& tail_spec, int reps, std::uint64_t seed,
                  double delta, const std::string& out) {
    const auto m = cdilab::parse_measure(measure_spec);
    const auto family = cdilab::parse_tail(tail_spec);
    ordered_json arr = ordered_json::array();
    const auto grid = cdilab::default_modulus_grid(t);
    for (int i = 0; i < reps; ++i) {
        auto forest = cdilab::simulate_genealogy(
            m, n, t, cdilab::seed_stream(seed, i, cdilab::stream::genealogy));
        auto spatial = cdilab::attach_motion(
            std::move(forest),
            [&family](cdilab::Rng& r) { return family.sample(r); }, dim,
            cdilab::seed_stream(seed, i, cdilab::stream::motion));
        ordered_json jp;
        jp["root_count"] = spatial.forest.root_count();
        jp["M"] = cdilab::ancestor_max(spatial);
        jp["M_hat"] = cdilab::extremal_max(
            spatial, dim == 1 ? cdilab::ExtremalMode::coordinate_max
                              : cdilab::ExtremalMode::norm);
        jp["dislocation_max"] = cdilab::dislocation(spatial, 0.0);
        double sup = 0.0;
        for (double s : grid)
            sup = std::max(sup, cdilab::dislocation(spatial, s) /
                                    std::pow(t - s, delta));
        jp["sup_ratio_delta"] = sup;
        arr.push_back(std::move(jp));
    }
    if (out.empty()) {
        std::cout << arr.dump(2) << "\n";
    } else {
        std::ofstream file(out);
        if (!file) throw cdilab::config_error("cannot open output file: " + out);
        file << arr.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lambda-coalescent speed-of-CDI toolkit"};
    app.require_subcommand(1);

    // speed
    auto* speed = app.add_subcommand("speed", "evaluate the speed function v(t)");
    std::string sp_measure = "kingman", sp_out;
    double sp_t = 0.0;
    std::vector<double> sp_table;
    speed->add_option("--measure", sp_measure, "measure spec");
    speed->add_option("--t", sp_t, "time at which to evaluate v");
    speed->add_option("--table", sp_table, "t_min t_max n: write a speed table")
        ->expected(3);
    speed->add_option("--out", sp_out, "output CSV path (columns t,v)");

    // rates
    auto* rates = app.add_subcommand("rates", "merge rates and the psi functional");
    std::string rt_measure = "kingman";
    int rt_b = 0, rt_k = 0, rt_n = 0;
    double rt_q = 0.0;
    bool rt_cdi = false;
    rates->add_option("--measure", rt_measure, "measure spec");
    rates->add_option("--b", rt_b, "block count for lambda_{b,k}");
    rates->add_option("--k", rt_k, "merge size for lambda_{b,k}");
    rates->add_option("--n", rt_n, "block count for the total rate");
    rates->add_option("--psi", rt_q, "evaluate psi at this q");
    rates->add_flag("--cdi", rt_cdi, "run the coming-down-from-infinity test");

    // simulate-n
    auto* simn = app.add_subcommand("simulate-n", "block-counting jump chain");
    std::string sn_measure = "kingman", sn_out;
    int sn_n0 = 100, sn_reps = 1;
    double sn_t = 1.0;
    std::uint64_t sn_seed = 1;
    simn->add_option("--measure", sn_measure, "measure spec");
    simn->add_option("--n0", sn_n0, "initial block count")->required();
    simn->add_option("--t", sn_t, "horizon")->required();
    simn->add_option("--reps", sn_reps, "replicates");
    simn->add_option("--seed", sn_seed, "master seed");
    simn->add_option("--out", sn_out, "output JSON path");

    // genealogy
    auto* gen = app.add_subcommand("genealogy", "lookdown genealogy with motion");
    std::string ge_measure = "kingman", ge_tail = "pareto:1,2", ge_out;
    int ge_n = 100, ge_dim = 1, ge_reps = 1;
    double ge_t = 0.01, ge_delta = 0.4;
    std::uint64_t ge_seed = 1;
    gen->add_option("--measure", ge_measure, "measure spec");
    gen->add_option("--n", ge_n, "leaf count")->required();
    gen->add_option("--t", ge_t, "horizon")->required();
    gen->add_option("--dim", ge_dim, "spatial dimension");
    gen->add_option("--tail", ge_tail, "initial-law tail spec");
    gen->add_option("--reps", ge_reps, "replicates");
    gen->add_option("--seed", ge_seed, "master seed");
    gen->add_option("--delta", ge_delta, "modulus exponent for sup_ratio_delta");
    gen->add_option("--out", ge_out, "output JSON path");

    // experiment
    auto* exp = app.add_subcommand("experiment", "limit-theorem experiment");
    std::string ex_config, ex_out, ex_csv;
    std::string ex_measure, ex_tail, ex_statistic, ex_t;
    int ex_reps = 0, ex_n = -1, ex_dim = 0, ex_threads = 0;
    std::uint64_t ex_seed = 0;
    bool ex_have_seed = false;
    exp->add_option("--config", ex_config, "key=value config file");
    exp->add_option("--measure", ex_measure, "measure spec");
    exp->add_option("--tail", ex_tail, "tail spec");
    exp->add_option("--statistic", ex_statistic, "statistic name");
    exp->add_option("--t", ex_t, "comma-separated decreasing t list");
    exp->add_option("--reps", ex_reps, "replicates per t");
    exp->add_option("--n", ex_n, "leaf count (0 = auto)");
    exp->add_option("--dim", ex_dim, "spatial dimension");
    exp->add_option("--threads", ex_threads, "worker threads");
    exp->add_option("--seed", ex_seed, "master seed")
        ->each([&](const std::string&) { ex_have_seed = true; });
    exp->add_option("--out", ex_out, "result JSON path");
    exp->add_option("--csv", ex_csv, "also write per-t flat CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (speed->parsed()) return cmd_speed(sp_measure, sp_t, sp_table, sp_out);
        if (rates->parsed()) return cmd_rates(rt_measure, rt_b, rt_k, rt_n, rt_q, rt_cdi);
        if (simn->parsed())
            return cmd_simulate_n(sn_measure, sn_n0, sn_t, sn_reps, sn_seed, sn_out);
        if (gen->parsed())
            return cmd_genealogy(ge_measure, ge_n, ge_t, ge_dim, ge_tail, ge_reps,
                                 ge_seed, ge_delta, ge_out);
        if (exp->parsed()) {
            cdilab::ExperimentConfig cfg;
            if (!ex_config.empty()) cfg = cdilab::parse_config_file(ex_config);
            if (!ex_measure.empty()) cfg.measure_spec = ex_measure;
            if (!ex_tail.empty()) cfg.tail_spec = ex_tail;
            if (!ex_statistic.empty()) cfg.statistic = cdilab::parse_statistic(ex_statistic);
            if (!ex_t.empty()) {
                cfg.t_list.clear();
                std::istringstream ss(ex_t);
                std::string tok;
                while (std::getline(ss, tok, ','))
                    if (!tok.empty()) cfg.t_list.push_back(std::stod(tok));
            }
            if (ex_reps > 0) cfg.replicates = ex_reps;
            if (ex_n >= 0) cfg.n_explicit = ex_n;
            if (ex_dim > 0) cfg.dim = ex_dim;
            if (ex_threads > 0) cfg.threads = ex_threads;
            if (ex_have_seed) cfg.master_seed = ex_seed;
            if (!ex_out.empty()) cfg.out_path = ex_out;
            cfg.validate();
            const auto result = cdilab::run_experiment(cfg);
            const std::string json = result.to_json().dump(2);
            if (cfg.out_path.empty()) {
                std::cout << json << "\n";
            } else {
                std::ofstream file(cfg.out_path);
                if (!file)
                    throw cdilab::config_error("cannot open output file: " + cfg.out_path);
                file << json << "\n";
            }
            if (!ex_csv.empty()) {
                std::ofstream file(ex_csv);
                if (!file) throw cdilab::config_error("cannot open CSV file: " + ex_csv);
                file << result.to_csv();
            }
            return 0;
        }
    } catch (const cdilab::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::domain_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cdilab::consistency_error& e) {
        std::cerr << "internal-consistency error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
