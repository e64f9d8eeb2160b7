#pragma once

// Backward genealogy of n individuals over [0, t] under the Lambda-coalescent,
// decorated with Brownian displacements and i.i.d. initial positions. Backward
// time tau runs from 0 (the individuals alive at real time t) to t (their
// ancestors at real time 0); a node's edge spans [birth_tau, end_tau].

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "cdilab/measure.hpp"
#include "cdilab/rng.hpp"

namespace cdilab {

struct ForestNode {
    int parent = -1;        // -1 for roots
    double birth_tau = 0.0; // when this lineage appeared (0 for leaves)
    double end_tau = 0.0;   // merger into the parent, or t for roots
};

struct Merger {
    double tau = 0.0;
    std::vector<int> children;
    int new_node = -1;
};

struct GenealogyForest {
    int n_leaves = 0;
    double t_horizon = 0.0;
    std::uint64_t seed = 0;
    std::vector<ForestNode> nodes;  // leaves first, internal nodes in merger order
    std::vector<Merger> mergers;
    std::vector<int> root_ids;      // ascending node ids

    int root_count() const { return static_cast<int>(root_ids.size()); }
};

// Runs the [n]-restricted coalescent backward from n leaves: jump chain on the
// lineage count with rates lambda_{b,k}, each merger collapsing a uniformly
// random k-subset of the active lineages.
inline GenealogyForest simulate_genealogy(const LambdaMeasure& m, int n,
                                          double t, std::uint64_t seed) {
    if (n < 1) throw std::domain_error("simulate_genealogy: need n >= 1");
    if (!(t > 0.0)) throw std::domain_error("simulate_genealogy: need t > 0");
    GenealogyForest f;
    f.n_leaves = n;
    f.t_horizon = t;
    f.seed = seed;
    f.nodes.resize(n);
    std::vector<int> active(n);
    for (int i = 0; i < n; ++i) active[i] = i;
    Rng rng(seed);
    const bool kingman_fast = m.kingman_only();
    const double kingman_mass = m.kingman_mass();
    double tau = 0.0;
    std::vector<int> picks;
    while (static_cast<int>(active.size()) >= 2) {
        const int b = static_cast<int>(active.size());
        int k;
        if (kingman_fast) {
            tau += rng.exponential(0.5 * kingman_mass * b * (b - 1.0));
            if (tau > t) break;
            k = 2;
        } else {
            const auto row = rate_row(m, b);
            tau += rng.exponential(row->total_rate);
            if (tau > t) break;
            k = row->sample_merge_size(rng.uniform01());
        }
        // k distinct positions among the b active lineages; rejection on the
        // smaller of the chosen set and its complement
        picks.clear();
        if (k == b) {
            for (int i = 0; i < b; ++i) picks.push_back(i);
        } else {
            const bool complement = k > b / 2;
            const int want = complement ? b - k : k;
            std::vector<int> chosen;
            while (static_cast<int>(chosen.size()) < want) {
                const int pos =
                    std::min(static_cast<int>(rng.uniform01() * b), b - 1);
                bool dup = false;
                for (int p : chosen) dup = dup || (p == pos);
                if (!dup) chosen.push_back(pos);
            }
            if (!complement) {
                picks = std::move(chosen);
            } else {
                std::sort(chosen.begin(), chosen.end());
                for (int i = 0, j = 0; i < b; ++i) {
                    if (j < want && chosen[j] == i)
                        ++j;
                    else
                        picks.push_back(i);
                }
            }
        }
        std::sort(picks.begin(), picks.end(), std::greater<int>());
        const int new_id = static_cast<int>(f.nodes.size());
        Merger mg;
        mg.tau = tau;
        mg.new_node = new_id;
        for (int pos : picks) {
            const int child = active[pos];
            f.nodes[child].parent = new_id;
            f.nodes[child].end_tau = tau;
            mg.children.push_back(child);
            active[pos] = active.back();
            active.pop_back();
        }
        ForestNode parent;
        parent.birth_tau = tau;
        f.nodes.push_back(parent);
        active.push_back(new_id);
        f.mergers.push_back(std::move(mg));
    }
    for (int id : active) f.nodes[id].end_tau = t;
    std::sort(active.begin(), active.end());
    f.root_ids = std::move(active);
    return f;
}

// ---------------------------------------------------------------------------
// spatial decoration
// ---------------------------------------------------------------------------

class SpatialForest {
public:
    GenealogyForest forest;
    int dim = 1;
    std::uint64_t seed = 0;
    std::vector<double> root_positions;  // root_count x dim, in root_ids order
    std::vector<double> edge_increments; // n_nodes x dim
    std::vector<double> leaf_positions;  // n_leaves x dim

    const double* leaf(int i) const { return &leaf_positions[i * dim]; }
    const double* root(int slot) const { return &root_positions[slot * dim]; }
    const double* pos_birth(int node) const { return &pos_birth_[node * dim]; }
    const double* pos_end(int node) const { return &pos_end_[node * dim]; }

    double leaf_scalar(int i) const { return leaf_positions[i * dim]; }

    // Lineage position of `node` at backward time tau inside its edge, refined
    // by Brownian-bridge conditioning; splits are cached so repeated queries on
    // one realization are consistent.
    std::vector<double> position_at(int node, double tau) {
        const ForestNode& nd = forest.nodes[node];
        if (tau < nd.birth_tau - 1e-15 || tau > nd.end_tau + 1e-15)
            throw std::domain_error("position_at: tau outside the node edge");
        std::vector<double> out(dim);
        if (tau >= nd.end_tau) {
            for (int d = 0; d < dim; ++d) out[d] = pos_end_[node * dim + d];
            return out;
        }
        if (tau <= nd.birth_tau) {
            for (int d = 0; d < dim; ++d) out[d] = pos_birth_[node * dim + d];
            return out;
        }
        auto& splits = bridge_[node];
        if (splits.empty()) {
            // seed the edge with its two endpoints; W(tau) is the displacement
            // accumulated from the edge's end (ancestral side) down to tau
            std::vector<double> w_end(dim, 0.0), w_birth(dim);
            for (int d = 0; d < dim; ++d)
                w_birth[d] = edge_increments[node * dim + d];
            splits.emplace(nd.end_tau, std::move(w_end));
            splits.emplace(nd.birth_tau, std::move(w_birth));
        }
        auto it = splits.lower_bound(tau);
        if (it != splits.end() && std::abs(it->first - tau) < 1e-18) {
            for (int d = 0; d < dim; ++d)
                out[d] = pos_end_[node * dim + d] + it->second[d];
            return out;
        }
        // bracketing cached points: hi is older (larger tau), lo younger
        auto hi = it;        // first key >= tau
        auto lo = std::prev(it);
        const double tau_hi = hi->first, tau_lo = lo->first;
        const double span = tau_hi - tau_lo;
        std::vector<double> w(dim);
        for (int d = 0; d < dim; ++d) {
            const double mean = hi->second[d] + (lo->second[d] - hi->second[d]) *
                                                    (tau_hi - tau) / span;
            const double var = (tau_hi - tau) * (tau - tau_lo) / span;
            w[d] = mean;
            if (brownian_edges_) w[d] += std::sqrt(var) * bridge_rng_.normal01();
        }
        for (int d = 0; d < dim; ++d) out[d] = pos_end_[node * dim + d] + w[d];
        splits.emplace(tau, std::move(w));
        return out;
    }

    friend SpatialForest decorate_forest(GenealogyForest forest, int dim,
                                         std::vector<double> root_positions,
                                         std::vector<double> edge_increments,
                                         std::uint64_t bridge_seed,
                                         bool brownian_edges);

private:
    std::vector<double> pos_birth_;  // n_nodes x dim
    std::vector<double> pos_end_;    // n_nodes x dim
    std::map<int, std::map<double, std::vector<double>>> bridge_;
    Rng bridge_rng_{0};
    bool brownian_edges_ = true;
};

// Assembles a spatial forest from explicit root positions (root_ids order)
// and per-edge increments. With brownian_edges = false the edges are treated
// as deterministic and interior queries interpolate linearly instead of
// refining by bridge conditioning.
inline SpatialForest decorate_forest(GenealogyForest forest, int dim,
                                     std::vector<double> root_positions,
                                     std::vector<double> edge_increments,
                                     std::uint64_t bridge_seed,
                                     bool brownian_edges = true) {
    if (dim < 1) throw std::domain_error("decorate_forest: dim >= 1");
    SpatialForest sf;
    sf.forest = std::move(forest);
    sf.dim = dim;
    sf.seed = bridge_seed;
    const auto& f = sf.forest;
    const int n_nodes = static_cast<int>(f.nodes.size());
    if (root_positions.size() != f.root_ids.size() * static_cast<std::size_t>(dim) ||
        edge_increments.size() != static_cast<std::size_t>(n_nodes) * dim)
        throw std::domain_error("decorate_forest: array sizes do not match forest");
    sf.root_positions = std::move(root_positions);
    sf.edge_increments = std::move(edge_increments);
    sf.bridge_rng_ = Rng(seed_stream(bridge_seed, 0, stream::bridge));
    sf.brownian_edges_ = brownian_edges;

    std::vector<int> root_slot(n_nodes, -1);
    for (std::size_t r = 0; r < f.root_ids.size(); ++r)
        root_slot[f.root_ids[r]] = static_cast<int>(r);

    // parents carry higher ids than their children, so a descending pass fills
    // positions top-down
    sf.pos_end_.assign(n_nodes * dim, 0.0);
    sf.pos_birth_.assign(n_nodes * dim, 0.0);
    for (int i = n_nodes - 1; i >= 0; --i) {
        for (int d = 0; d < dim; ++d) {
            const double base =
                (f.nodes[i].parent < 0)
                    ? sf.root_positions[root_slot[i] * dim + d]
                    : sf.pos_birth_[f.nodes[i].parent * dim + d];
            sf.pos_end_[i * dim + d] = base;
            sf.pos_birth_[i * dim + d] = base + sf.edge_increments[i * dim + d];
        }
    }
    sf.leaf_positions.assign(sf.pos_birth_.begin(),
                             sf.pos_birth_.begin() + f.n_leaves * dim);
    return sf;
}

// Roots draw i.i.d. initial positions (per coordinate for dim > 1); every edge
// of duration D gets an independent Normal(0, D) increment per coordinate.
inline SpatialForest attach_motion(GenealogyForest forest,
                                   const std::function<double(Rng&)>& sampler,
                                   int dim, std::uint64_t seed) {
    if (dim < 1) throw std::domain_error("attach_motion: dim >= 1");
    const int n_nodes = static_cast<int>(forest.nodes.size());

    Rng initial_rng(seed_stream(seed, 0, stream::initial));
    Rng motion_rng(seed_stream(seed, 0, stream::motion));

    std::vector<double> roots(forest.root_ids.size() * dim);
    for (double& r : roots) r = sampler(initial_rng);

    std::vector<double> increments(static_cast<std::size_t>(n_nodes) * dim);
    for (int i = 0; i < n_nodes; ++i) {
        const double dur = forest.nodes[i].end_tau - forest.nodes[i].birth_tau;
        const double sd = std::sqrt(std::max(0.0, dur));
        for (int d = 0; d < dim; ++d)
            increments[i * dim + d] = sd * motion_rng.normal01();
    }
    return decorate_forest(std::move(forest), dim, std::move(roots),
                           std::move(increments), seed);
}

// ---------------------------------------------------------------------------
// extremal statistics
// ---------------------------------------------------------------------------

namespace detail {

inline double norm_of(const double* p, int dim) {
    if (dim == 1) return std::abs(p[0]);
    double s = 0.0;
    for (int d = 0; d < dim; ++d) s += p[d] * p[d];
    return std::sqrt(s);
}

}  // namespace detail

// M(t): maximal initial position among the ancestors of the time-t population.
// For dim > 1 the Euclidean norm of the root draws is used.
inline double ancestor_max(const SpatialForest& sf) {
    double best = -std::numeric_limits<double>::infinity();
    const int nr = sf.forest.root_count();
    for (int r = 0; r < nr; ++r) {
        const double val = (sf.dim == 1) ? sf.root(r)[0]
                                         : detail::norm_of(sf.root(r), sf.dim);
        best = std::max(best, val);
    }
    return best;
}

enum class ExtremalMode { coordinate_max, norm };

// M_hat(t): maximal position among the individuals alive at t. coordinate_max
// with dim > 1 falls back to the first coordinate and sets *flagged.
inline double extremal_max(const SpatialForest& sf,
                           ExtremalMode mode = ExtremalMode::coordinate_max,
                           bool* flagged = nullptr) {
    if (flagged) *flagged = false;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < sf.forest.n_leaves; ++i) {
        double val;
        if (mode == ExtremalMode::norm) {
            val = detail::norm_of(sf.leaf(i), sf.dim);
        } else {
            val = sf.leaf(i)[0];
            if (sf.dim > 1 && flagged) *flagged = true;
        }
        best = std::max(best, val);
    }
    return best;
}

// H^t(s, t): maximal displacement between real times s and t along the
// ancestral lineages of the time-t population.
inline double dislocation(SpatialForest& sf, double s) {
    const double t = sf.forest.t_horizon;
    if (s < 0.0 || s > t)
        throw std::domain_error("dislocation: s outside [0, t]");
    if (s == t) return 0.0;
    const double tau_q = t - s;
    double best = 0.0;
    std::vector<double> anc;
    for (int i = 0; i < sf.forest.n_leaves; ++i) {
        int node = i;
        while (sf.forest.nodes[node].end_tau < tau_q)
            node = sf.forest.nodes[node].parent;
        anc = sf.position_at(node, tau_q);
        double d2 = 0.0;
        for (int d = 0; d < sf.dim; ++d) {
            const double diff = sf.leaf(i)[d] - anc[d];
            d2 += diff * diff;
        }
        best = std::max(best, std::sqrt(d2));
    }
    return best;
}

// ---------------------------------------------------------------------------
// modulus-of-continuity profile
// ---------------------------------------------------------------------------

struct ModulusProfile {
    std::vector<double> per_replicate_sup;  // sup_s H(s,t)/(t-s)^delta
    double q50 = 0.0, q90 = 0.0, q99 = 0.0, max = 0.0;
};

inline ModulusProfile modulus_profile(std::span<SpatialForest> replicates,
                                      double delta,
                                      std::span<const double> s_grid) {
    if (!(delta > 0.0 && delta < 1.0))
        throw std::domain_error("modulus_profile: delta in (0,1)");
    if (replicates.empty()) throw std::domain_error("modulus_profile: no replicates");
    ModulusProfile out;
    for (auto& sf : replicates) {
        const double t = sf.forest.t_horizon;
        double sup = 0.0;
        for (double s : s_grid) {
            if (!(s >= 0.0 && s < t)) continue;
            sup = std::max(sup, dislocation(sf, s) / std::pow(t - s, delta));
        }
        out.per_replicate_sup.push_back(sup);
    }
    std::vector<double> sorted = out.per_replicate_sup;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&sorted](double q) {
        const double idx = q * (sorted.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(idx);
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (idx - lo) * (sorted[hi] - sorted[lo]);
    };
    out.q50 = quantile(0.50);
    out.q90 = quantile(0.90);
    out.q99 = quantile(0.99);
    out.max = sorted.back();
    return out;
}

// Default s-grid for dislocation profiles: geometric in (t - s).
inline std::vector<double> default_modulus_grid(double t, int n_points = 16) {
    std::vector<double> grid;
    for (int i = 0; i < n_points; ++i) {
        const double gap = t * std::pow(0.5, i + 1);
        grid.push_back(t - gap);
    }
    return grid;
}

}  // namespace cdilab
