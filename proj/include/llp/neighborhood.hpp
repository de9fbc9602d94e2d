#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llp/bank.hpp"
#include "llp/common.hpp"
#include "llp/parallel.hpp"

namespace llp {

struct NeighborList {
    std::vector<std::uint32_t> ids;  // distinct, never the query's own id
    std::vector<double> scores;      // non-increasing; ties broken by lower id
};

struct DensityTable {
    std::vector<std::uint32_t> ids;   // labeled ids in input order
    std::vector<double> rho;          // matching local densities, each in (0, 1)
    std::vector<double> rho_by_id;    // NaN for points without an entry
    std::int64_t computed_at_epoch = -1;

    bool has(std::uint32_t id) const { return id < rho_by_id.size() && !std::isnan(rho_by_id[id]); }
    double at(std::uint32_t id) const {
        if (!has(id)) throw ContractError("missing density entry for point " + std::to_string(id));
        return rho_by_id[id];
    }
};

namespace detail {

struct ScoredId {
    double score;
    std::uint32_t id;
};

inline bool better(const ScoredId& a, const ScoredId& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

// Keeps the best k of a stream in a small sorted buffer. k is tiny compared
// to the candidate pool, so insertion sort beats a heap here.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) { buf_.reserve(k + 1); }

    void offer(double score, std::uint32_t id) {
        const ScoredId cand{score, id};
        if (buf_.size() == k_ && !better(cand, buf_.back())) return;
        auto pos = std::upper_bound(buf_.begin(), buf_.end(), cand, better);
        buf_.insert(pos, cand);
        if (buf_.size() > k_) buf_.pop_back();
    }

    const std::vector<ScoredId>& sorted() const { return buf_; }

private:
    std::size_t k_;
    std::vector<ScoredId> buf_;
};

}  // namespace detail

// Exact top-k by cosine similarity over an explicit candidate pool. Ties land
// on the lower point id, and the result does not depend on the worker count
// or on the ordering of `pool`. Asking for more neighbors than the pool holds
// returns the whole pool.
template <class Scalar>
NeighborList knn(const BasicSnapshot<Scalar>& snapshot, std::span<const double> query, std::size_t k,
                 std::span<const std::uint32_t> pool, std::optional<std::uint32_t> exclude = std::nullopt,
                 unsigned workers = 1) {
    std::size_t usable = 0;
    for (std::uint32_t id : pool) usable += (!exclude || id != *exclude) ? 1 : 0;
    if (usable == 0) throw PropagationError("knn requires a non-empty candidate pool");
    if (query.size() != snapshot.dim()) throw ContractError("knn query dimension mismatch");
    k = std::min(k, usable);

    const unsigned shards = shard_count(pool.size(), workers);
    std::vector<detail::TopK> partial(shards, detail::TopK(k));
    parallel_for(pool.size(), workers, [&](unsigned shard, std::size_t begin, std::size_t end) {
        detail::TopK& top = partial[shard];
        for (std::size_t p = begin; p < end; ++p) {
            const std::uint32_t id = pool[p];
            if (exclude && id == *exclude) continue;
            if (id >= snapshot.count()) throw IndexError("knn pool id out of range");
            top.offer(dot(snapshot.row(id), query), id);
        }
    });

    std::vector<detail::ScoredId> merged;
    for (const auto& top : partial) merged.insert(merged.end(), top.sorted().begin(), top.sorted().end());
    std::sort(merged.begin(), merged.end(), detail::better);
    merged.resize(std::min(k, merged.size()));

    NeighborList out;
    out.ids.reserve(merged.size());
    out.scores.reserve(merged.size());
    for (const auto& m : merged) {
        out.ids.push_back(m.id);
        out.scores.push_back(m.score);
    }
    return out;
}

// Local density rho(v_i) = sum over the t nearest neighbors j of P(j|v_i),
// with the recognition probability taken over every bank row. The neighbor
// pool spans all points by default (self excluded); both choices are knobs.
template <class Scalar>
DensityTable compute_density(const BasicSnapshot<Scalar>& snapshot, std::span<const std::uint32_t> labeled_ids,
                             std::size_t t, double tau, unsigned workers = 1,
                             std::span<const std::uint32_t> neighbor_pool = {}, bool include_self = false,
                             std::int64_t epoch = -1) {
    if (labeled_ids.empty()) throw PropagationError("density needs at least one labeled point");
    if (t == 0) throw ConfigError("density neighbor count must be positive");
    if (tau <= 0.0 || tau > 1.0) throw ConfigError("temperature must lie in (0, 1]");
    const std::size_t n = snapshot.count();

    DensityTable table;
    table.ids.assign(labeled_ids.begin(), labeled_ids.end());
    table.rho.assign(labeled_ids.size(), 0.0);
    table.rho_by_id.assign(n, std::numeric_limits<double>::quiet_NaN());
    table.computed_at_epoch = epoch;

    const std::size_t pool_size = neighbor_pool.empty() ? n : neighbor_pool.size();
    const std::size_t max_neighbors = pool_size - (include_self ? 0 : 1);
    if (max_neighbors == 0) throw PropagationError("density neighbor pool has no usable candidates");
    if (t > max_neighbors) {
        log_warning("density neighbor count " + std::to_string(t) + " clamped to " + std::to_string(max_neighbors));
        t = max_neighbors;
    }

    parallel_for(labeled_ids.size(), workers, [&](unsigned, std::size_t begin, std::size_t end) {
        std::vector<double> scaled(n);  // v_j . v_i / tau, one pass per labeled point
        for (std::size_t li = begin; li < end; ++li) {
            const std::uint32_t i = labeled_ids[li];
            if (i >= n) throw IndexError("density labeled id out of range");
            const auto vi = snapshot.row(i);

            double max_score = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                scaled[j] = dot(snapshot.row(j), vi) / tau;
                max_score = std::max(max_score, scaled[j]);
            }
            // Full log-sum-exp denominator over all N rows (self included, as
            // in the recognition probability itself).
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j) denom += std::exp(scaled[j] - max_score);
            const double log_denom = max_score + std::log(denom);

            detail::TopK top(t);
            if (neighbor_pool.empty()) {
                for (std::size_t j = 0; j < n; ++j) {
                    if (!include_self && j == i) continue;
                    top.offer(scaled[j], static_cast<std::uint32_t>(j));
                }
            } else {
                for (std::uint32_t j : neighbor_pool) {
                    if (!include_self && j == i) continue;
                    if (j >= n) throw IndexError("density pool id out of range");
                    top.offer(scaled[j], j);
                }
            }

            double rho = 0.0;
            for (const auto& nb : top.sorted()) rho += std::exp(nb.score - log_denom);
            table.rho[li] = rho;
            table.rho_by_id[i] = rho;
        }
    });
    return table;
}

}  // namespace llp
