#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "llp/bank.hpp"
#include "llp/common.hpp"

namespace llp {

// Recognition probabilities over the whole bank for one query vector:
//   P(i|v) = exp(v_i . v / tau) / sum_j exp(v_j . v / tau)
// The denominator is evaluated once per query as a log-sum-exp with
// max-subtraction and always runs over every bank row.
struct SoftmaxContext {
    double tau = 0.07;
    double log_denominator = 0.0;
    std::vector<double> query;
    const void* bank_id = nullptr;

    bool matches(const BankSnapshot& snapshot) const { return bank_id == snapshot.buffer_id(); }
};

inline SoftmaxContext make_softmax_context(const BankSnapshot& snapshot, std::span<const double> query, double tau) {
    if (tau <= 0.0 || tau > 1.0) throw ConfigError("temperature must lie in (0, 1]");
    if (query.size() != snapshot.dim()) throw ContractError("softmax query dimension mismatch");
    const std::size_t n = snapshot.count();
    double max_score = -std::numeric_limits<double>::infinity();
    std::vector<double> scores(n);
    for (std::size_t j = 0; j < n; ++j) {
        scores[j] = dot(snapshot.row(j), query) / tau;
        max_score = std::max(max_score, scores[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(scores[j] - max_score);
    SoftmaxContext ctx;
    ctx.tau = tau;
    ctx.log_denominator = max_score + std::log(sum);
    ctx.query.assign(query.begin(), query.end());
    ctx.bank_id = snapshot.buffer_id();
    return ctx;
}

inline void require_fresh(const SoftmaxContext& ctx, const BankSnapshot& snapshot) {
    if (!ctx.matches(snapshot)) throw ContractError("softmax context built from a different snapshot");
}

inline double log_prob(const SoftmaxContext& ctx, const BankSnapshot& snapshot, std::size_t i) {
    require_fresh(ctx, snapshot);
    if (i >= snapshot.count()) throw IndexError("softmax point id out of range");
    return dot(snapshot.row(i), std::span<const double>(ctx.query)) / ctx.tau - ctx.log_denominator;
}

inline double prob(const SoftmaxContext& ctx, const BankSnapshot& snapshot, std::size_t i) {
    return std::exp(log_prob(ctx, snapshot, i));
}

// P(S|v) = sum of member probabilities; empty sets yield 0.
inline double prob_set(const SoftmaxContext& ctx, const BankSnapshot& snapshot, std::span<const std::uint32_t> ids) {
    require_fresh(ctx, snapshot);
    double acc = 0.0;
    for (std::uint32_t i : ids) {
        if (i >= snapshot.count()) throw IndexError("softmax point id out of range");
        acc += std::exp(dot(snapshot.row(i), std::span<const double>(ctx.query)) / ctx.tau - ctx.log_denominator);
    }
    return acc;
}

}  // namespace llp
