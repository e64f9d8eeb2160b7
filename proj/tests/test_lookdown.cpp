#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cdilab/coalescent.hpp"
#include "cdilab/evt.hpp"
#include "cdilab/harness.hpp"
#include "cdilab/lookdown.hpp"

using namespace cdilab;

namespace {

std::function<double(Rng&)> pareto12() {
    return [](Rng& r) { return std::pow(r.uniform01(), -0.5); };
}

std::function<double(Rng&)> standard_normal() {
    return [](Rng& r) { return r.normal01(); };
}

}  // namespace

TEST_CASE("single leaf: no mergers, one root") {
    const auto f = simulate_genealogy(LambdaMeasure::kingman(), 1, 1.0, 5);
    CHECK(f.root_count() == 1);
    CHECK(f.mergers.empty());
    CHECK(f.nodes.size() == 1);
    CHECK(f.nodes[0].end_tau == doctest::Approx(1.0));
}

TEST_CASE("forest structural invariants") {
    const auto m = LambdaMeasure::beta(1.5);
    for (int i = 0; i < 50; ++i) {
        const auto f = simulate_genealogy(m, 60, 0.3, seed_stream(31, i, 1));
        // merger times strictly increasing
        for (std::size_t j = 1; j < f.mergers.size(); ++j)
            CHECK(f.mergers[j].tau > f.mergers[j - 1].tau);
        // root count + sum (k_j - 1) = n
        int removed = 0;
        for (const auto& mg : f.mergers)
            removed += static_cast<int>(mg.children.size()) - 1;
        CHECK(f.root_count() + removed == f.n_leaves);
        // every leaf reaches exactly one root
        for (int leaf = 0; leaf < f.n_leaves; ++leaf) {
            int node = leaf, hops = 0;
            while (f.nodes[node].parent >= 0 && hops < 1000) {
                node = f.nodes[node].parent;
                ++hops;
            }
            CHECK(std::binary_search(f.root_ids.begin(), f.root_ids.end(), node));
        }
    }
}

TEST_CASE("Kingman pair merges by t=0.5 with probability 1 - e^{-1/2}") {
    const auto m = LambdaMeasure::kingman();
    const int reps = 100000;
    int merged = 0;
    for (int i = 0; i < reps; ++i) {
        const auto f = simulate_genealogy(m, 2, 0.5, seed_stream(37, i, 1));
        if (f.root_count() == 1) ++merged;
    }
    const double frac = static_cast<double>(merged) / reps;
    CHECK(frac == doctest::Approx(1.0 - std::exp(-0.5)).epsilon(0.012));
}

TEST_CASE("root-count law equals the block-counting law (two-sample KS)") {
    const auto m = LambdaMeasure::kingman();
    const int reps = 10000;
    std::vector<double> roots(reps), blocks(reps);
    for (int i = 0; i < reps; ++i) {
        roots[i] = simulate_genealogy(m, 1000, 0.01, seed_stream(41, i, 1))
                       .root_count();
        blocks[i] = block_count_at(
            simulate_block_count(m, 1000, 0.01, seed_stream(41, i, 2)), 0.01);
    }
    std::sort(roots.begin(), roots.end());
    std::sort(blocks.begin(), blocks.end());
    // KS threshold for p ~ 0.001: 1.95 sqrt(2/n)
    CHECK(ks_two_sample(roots, blocks) < 1.95 * std::sqrt(2.0 / reps));
}

TEST_CASE("genealogy/block-count chi-square at n=500") {
    for (const auto& m : {LambdaMeasure::kingman(), LambdaMeasure::beta(1.5)}) {
        const auto res = law_equality_chi_square(m, 500, 0.01, 3000, 43);
        CHECK(res.p_value > 0.001);
    }
}

TEST_CASE("attach_motion basic laws") {
    const auto m = LambdaMeasure::kingman();

    // no-merger forest: leaf = root draw + N(0, t)
    {
        const int reps = 100000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < reps; ++i) {
            auto f = simulate_genealogy(m, 1, 1.0, seed_stream(47, i, 1));
            auto sp = attach_motion(std::move(f), standard_normal(), 1,
                                    seed_stream(47, i, 2));
            const double incr = sp.leaf_scalar(0) - sp.root(0)[0];
            sum += incr;
            sum2 += incr * incr;
        }
        CHECK(sum / reps == doctest::Approx(0.0).epsilon(0.02));
        CHECK(sum2 / reps == doctest::Approx(1.0).epsilon(0.02));
    }

    // two leaves sharing a root merged at backward tau: covariance = t - tau
    {
        const int reps = 100000;
        double sum_xy = 0.0, sum_cov_target = 0.0;
        int used = 0;
        for (int i = 0; i < reps; ++i) {
            auto f = simulate_genealogy(m, 2, 1.0, seed_stream(53, i, 1));
            if (f.root_count() != 1) continue;
            const double tau = f.mergers[0].tau;
            auto sp = attach_motion(std::move(f), standard_normal(), 1,
                                    seed_stream(53, i, 2));
            const double x = sp.leaf_scalar(0), y = sp.leaf_scalar(1);
            sum_xy += x * y;
            sum_cov_target += (1.0 - tau) + 1.0;  // shared BM time + Var(root)
            ++used;
        }
        REQUIRE(used > 30000);
        // E[xy] = Var(root) + (t - tau) averaged over merge times
        CHECK(sum_xy / used ==
              doctest::Approx(sum_cov_target / used).epsilon(0.03));
    }

    // vanishing horizon: leaves equal the root draws
    {
        auto f = simulate_genealogy(m, 5, 1e-12, 99);
        auto sp = attach_motion(std::move(f), pareto12(), 1, 100);
        REQUIRE(sp.forest.root_count() == 5);
        for (int i = 0; i < 5; ++i)
            CHECK(std::abs(sp.leaf_scalar(i) - sp.root(i)[0]) < 1e-5);
    }
}

TEST_CASE("leaf positions recompute from scratch") {
    auto f = simulate_genealogy(LambdaMeasure::beta(1.5), 40, 0.2, 61);
    auto sp = attach_motion(std::move(f), standard_normal(), 1, 62);
    std::vector<int> root_slot(sp.forest.nodes.size(), -1);
    for (std::size_t r = 0; r < sp.forest.root_ids.size(); ++r)
        root_slot[sp.forest.root_ids[r]] = static_cast<int>(r);
    for (int leaf = 0; leaf < sp.forest.n_leaves; ++leaf) {
        double pos = 0.0;
        int node = leaf;
        while (true) {
            pos += sp.edge_increments[node];
            if (sp.forest.nodes[node].parent < 0) break;
            node = sp.forest.nodes[node].parent;
        }
        pos += sp.root(root_slot[node])[0];
        CHECK(pos == doctest::Approx(sp.leaf_scalar(leaf)).epsilon(1e-12));
    }
}

TEST_CASE("extremal_max on pinned leaf positions") {
    auto f = simulate_genealogy(LambdaMeasure::kingman(), 3, 1e-12, 21);
    REQUIRE(f.root_count() == 3);
    std::vector<double> roots = {1.0, 1.5, -2.0};
    std::vector<double> incr(f.nodes.size(), 0.0);
    auto sp = decorate_forest(std::move(f), 1, std::move(roots), std::move(incr),
                              22, /*brownian_edges=*/false);
    CHECK(extremal_max(sp) == doctest::Approx(1.5));
    CHECK(ancestor_max(sp) == doctest::Approx(1.5));
}

TEST_CASE("ancestor_max and extremal_max") {
    // three isolated lineages with fixed draws
    auto f = simulate_genealogy(LambdaMeasure::kingman(), 3, 1e-12, 7);
    REQUIRE(f.root_count() == 3);
    int call = 0;
    const double draws[3] = {-1.0, 0.0, 2.0};
    auto sp = attach_motion(
        std::move(f), [&](Rng&) { return draws[call++ % 3]; }, 1, 8);
    CHECK(ancestor_max(sp) == doctest::Approx(2.0));
    // zero-duration edges: extremal equals ancestor max
    CHECK(extremal_max(sp) == doctest::Approx(2.0).epsilon(1e-6));

    // |Mhat - M| bounded by the largest leaf displacement
    auto f2 = simulate_genealogy(LambdaMeasure::kingman(), 50, 0.05, 9);
    auto sp2 = attach_motion(std::move(f2), pareto12(), 1, 10);
    const double mhat = extremal_max(sp2);
    const double mm = ancestor_max(sp2);
    double max_disp = dislocation(sp2, 0.0);
    CHECK(std::abs(mhat - mm) <= max_disp + 1e-12);
}

TEST_CASE("ancestor_max against the exact mixture CDF (fixed 100 roots)") {
    const auto family = TailFamily::slow(1.0, 2.0, 0.0);
    const int reps = 10000, roots = 100;
    std::vector<double> ms(reps);
    for (int i = 0; i < reps; ++i) {
        auto f = simulate_genealogy(LambdaMeasure::kingman(), roots, 1e-9,
                                    seed_stream(59, i, 1));
        REQUIRE(f.root_count() == roots);
        auto sp = attach_motion(
            std::move(f), [&family](Rng& r) { return family.sample(r); }, 1,
            seed_stream(59, i, 2));
        ms[i] = ancestor_max(sp);
    }
    std::sort(ms.begin(), ms.end());
    const double ks = ks_statistic(ms, [&](double x) {
        return std::pow(family.cdf(x), roots);
    });
    CHECK(ks <= 0.02);
}

TEST_CASE("dislocation") {
    const auto m = LambdaMeasure::kingman();

    // s = t gives zero; s = 0 is the max leaf-to-root displacement
    auto f = simulate_genealogy(m, 20, 0.05, 71);
    auto sp = attach_motion(std::move(f), standard_normal(), 1, 72);
    CHECK(dislocation(sp, 0.05) == 0.0);
    const double h0 = dislocation(sp, 0.0);
    CHECK(h0 > 0.0);

    // single lineage: H^t(s,t) ~ |N(0, t-s)|, mean sqrt(2(t-s)/pi)
    const int reps = 100000;
    const double t = 1.0, s = 0.4;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < reps; ++i) {
        auto f1 = simulate_genealogy(m, 1, t, seed_stream(73, i, 1));
        auto sp1 = attach_motion(std::move(f1), standard_normal(), 1,
                                 seed_stream(73, i, 2));
        const double h = dislocation(sp1, s);
        sum += h;
        sum2 += h * h;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
    CHECK(std::abs(mean - std::sqrt(2.0 * (t - s) / kPi)) <= 3.0 * se);

    // repeated queries are consistent (bridge cache)
    auto f3 = simulate_genealogy(m, 10, 0.1, 75);
    auto sp3 = attach_motion(std::move(f3), standard_normal(), 1, 76);
    const double a = dislocation(sp3, 0.037);
    const double b = dislocation(sp3, 0.037);
    CHECK(a == b);

    CHECK_THROWS_AS(dislocation(sp3, -0.01), std::domain_error);
    CHECK_THROWS_AS(dislocation(sp3, 0.2), std::domain_error);
}

TEST_CASE("modulus profile") {
    const auto m = LambdaMeasure::kingman();

    // zero-increment forest: profile identically zero
    {
        auto f = simulate_genealogy(m, 5, 0.02, 81);
        std::vector<double> roots(f.root_ids.size(), 1.5);
        std::vector<double> incr(f.nodes.size(), 0.0);
        auto sp = decorate_forest(std::move(f), 1, std::move(roots),
                                  std::move(incr), 82, /*brownian_edges=*/false);
        std::vector<SpatialForest> reps;
        reps.push_back(std::move(sp));
        const auto grid = default_modulus_grid(0.02);
        const auto prof = modulus_profile(reps, 0.4, grid);
        CHECK(prof.max == 0.0);
    }

    // single Brownian lineage: 99th percentile stable under 4x grid refinement
    {
        const double t = 0.01;
        auto run = [&](int grid_points) {
            std::vector<SpatialForest> reps;
            for (int i = 0; i < 400; ++i) {
                auto f = simulate_genealogy(m, 1, t, seed_stream(83, i, 1));
                reps.push_back(attach_motion(std::move(f), standard_normal(), 1,
                                             seed_stream(83, i, 2)));
            }
            const auto grid = default_modulus_grid(t, grid_points);
            return modulus_profile(reps, 0.4, grid).q99;
        };
        const double coarse = run(8);
        const double fine = run(32);
        CHECK(std::isfinite(fine));
        CHECK(std::abs(fine - coarse) / fine < 0.10);
    }

    // sup ratio grows with delta on a fixed realization when t - s < 1
    {
        std::vector<SpatialForest> reps;
        auto f = simulate_genealogy(m, 8, 0.01, 85);
        reps.push_back(attach_motion(std::move(f), standard_normal(), 1, 86));
        const auto grid = default_modulus_grid(0.01);
        double prev = 0.0;
        for (double delta : {0.2, 0.3, 0.4, 0.49}) {
            // re-query the same realization; bridge cache keeps it consistent
            const auto prof = modulus_profile(reps, delta, grid);
            CHECK(prof.max >= prev);
            prev = prof.max;
        }
    }
}

TEST_CASE("exchangeability: relabeling leaves leaves statistics unchanged") {
    // the extractors are permutation-invariant maxima; verify a relabeled
    // replicate stream matches in law by two-sample KS on Mhat
    const auto m = LambdaMeasure::beta(1.5);
    const auto family = TailFamily::slow(1.0, 2.0, 0.0);
    const int reps = 3000;
    std::vector<double> plain(reps), relabeled(reps);
    for (int i = 0; i < reps; ++i) {
        auto f = simulate_genealogy(m, 100, 0.05, seed_stream(91, i, 1));
        auto sp = attach_motion(
            std::move(f), [&family](Rng& r) { return family.sample(r); }, 1,
            seed_stream(91, i, 2));
        plain[i] = extremal_max(sp);

        auto f2 = simulate_genealogy(m, 100, 0.05, seed_stream(92, i, 1));
        // relabel: rotate leaf ids by a fixed shift before decorating
        std::vector<int> perm(f2.n_leaves);
        for (int j = 0; j < f2.n_leaves; ++j) perm[j] = (j + 37) % f2.n_leaves;
        GenealogyForest g = f2;
        for (auto& mg : g.mergers)
            for (auto& c : mg.children)
                if (c < g.n_leaves) c = perm[c];
        for (int j = 0; j < g.n_leaves; ++j) g.nodes[perm[j]] = f2.nodes[j];
        g.root_ids.clear();
        for (std::size_t j = 0; j < g.nodes.size(); ++j)
            if (g.nodes[j].parent < 0) g.root_ids.push_back(static_cast<int>(j));
        auto sp2 = attach_motion(
            std::move(g), [&family](Rng& r) { return family.sample(r); }, 1,
            seed_stream(92, i, 2));
        relabeled[i] = extremal_max(sp2);
    }
    std::sort(plain.begin(), plain.end());
    std::sort(relabeled.begin(), relabeled.end());
    CHECK(ks_two_sample(plain, relabeled) < 1.95 * std::sqrt(2.0 / reps));
}

TEST_CASE("determinism bit-for-bit") {
    const auto m = LambdaMeasure::beta(1.5);
    auto f1 = simulate_genealogy(m, 200, 0.05, 4242);
    auto f2 = simulate_genealogy(m, 200, 0.05, 4242);
    CHECK(f1.root_ids == f2.root_ids);
    REQUIRE(f1.mergers.size() == f2.mergers.size());
    for (std::size_t i = 0; i < f1.mergers.size(); ++i) {
        CHECK(f1.mergers[i].tau == f2.mergers[i].tau);
        CHECK(f1.mergers[i].children == f2.mergers[i].children);
    }
    auto sp1 = attach_motion(std::move(f1), standard_normal(), 1, 777);
    auto sp2 = attach_motion(std::move(f2), standard_normal(), 1, 777);
    CHECK(sp1.leaf_positions == sp2.leaf_positions);
    CHECK(sp1.root_positions == sp2.root_positions);
}

TEST_CASE("dim > 1: norm extremal max and flagged coordinate mode") {
    auto f = simulate_genealogy(LambdaMeasure::kingman(), 10, 0.01, 11);
    auto sp = attach_motion(std::move(f), standard_normal(), 3, 12);
    bool flagged = false;
    const double coord = extremal_max(sp, ExtremalMode::coordinate_max, &flagged);
    CHECK(flagged);
    const double norm = extremal_max(sp, ExtremalMode::norm);
    CHECK(norm >= coord - 1e-12);
}
