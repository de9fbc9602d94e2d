#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "llp/bank.hpp"
#include "llp/common.hpp"
#include "llp/softmax.hpp"

namespace llp {

// Loss value plus gradients. Either gradient block may be empty, meaning
// identically zero; bank rows are treated as constants throughout, so only
// the live embedding and the classifier logits receive gradient.
struct GradBundle {
    double loss = 0.0;
    std::vector<double> d_embedding;
    std::vector<double> d_logits;
};

// Aggregation loss -log P(A|v) for the set A of points sharing the query's
// pseudo-label. Gradient w.r.t. the live embedding v:
//   (1/tau) * (sum_j P(j|v) v_j  -  sum_{i in A} P(i|v)/P(A|v) v_i)
inline GradBundle aggregation_loss(const SoftmaxContext& ctx, const BankSnapshot& snapshot,
                                   std::span<const std::uint32_t> same_label_ids, std::uint32_t self_id) {
    require_fresh(ctx, snapshot);
    if (same_label_ids.empty()) throw ContractError("aggregation loss needs a non-empty same-label set");
    if (self_id >= snapshot.count()) throw IndexError("aggregation self id out of range");
    const std::size_t n = snapshot.count();
    const std::size_t d = snapshot.dim();
    const std::span<const double> query(ctx.query);

    GradBundle out;
    out.d_embedding.assign(d, 0.0);

    // Weighted mean over all rows; probabilities come straight from the
    // context's log denominator, so no extra max pass is needed.
    for (std::size_t j = 0; j < n; ++j) {
        const auto row = snapshot.row(j);
        const double pj = std::exp(dot(row, query) / ctx.tau - ctx.log_denominator);
        for (std::size_t k = 0; k < d; ++k) out.d_embedding[k] += pj * row[k];
    }

    // Separate log-sum-exp over A keeps the loss finite even when the whole
    // set sits far from the query.
    double max_a = -std::numeric_limits<double>::infinity();
    for (std::uint32_t i : same_label_ids) {
        if (i >= n) throw IndexError("aggregation member id out of range");
        max_a = std::max(max_a, dot(snapshot.row(i), query) / ctx.tau);
    }
    double sum_a = 0.0;
    for (std::uint32_t i : same_label_ids) sum_a += std::exp(dot(snapshot.row(i), query) / ctx.tau - max_a);
    const double lse_a = max_a + std::log(sum_a);

    out.loss = ctx.log_denominator - lse_a;  // = -log P(A|v) >= 0
    if (out.loss < 0.0) out.loss = 0.0;      // clamp the A == all-points roundoff

    std::vector<double> mean_a(d, 0.0);
    for (std::uint32_t i : same_label_ids) {
        const auto row = snapshot.row(i);
        const double qi = std::exp(dot(row, query) / ctx.tau - lse_a);
        for (std::size_t k = 0; k < d; ++k) mean_a[k] += qi * row[k];
    }
    for (std::size_t k = 0; k < d; ++k) out.d_embedding[k] = (out.d_embedding[k] - mean_a[k]) / ctx.tau;
    return out;
}

// Softmax cross-entropy on the classifier head.
inline GradBundle classification_loss(std::span<const double> logits, std::uint32_t target) {
    if (target >= logits.size()) throw ContractError("classification target out of range");
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double s : logits) max_logit = std::max(max_logit, s);
    double sum = 0.0;
    for (double s : logits) sum += std::exp(s - max_logit);
    const double lse = max_logit + std::log(sum);

    GradBundle out;
    out.loss = lse - logits[target];
    out.d_logits.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) out.d_logits[j] = std::exp(logits[j] - lse);
    out.d_logits[target] -= 1.0;
    return out;
}

// Instance-recognition loss -log P(self|v); the aggregation loss with a
// singleton set, used for the unsupervised warmup.
inline GradBundle ir_loss(const SoftmaxContext& ctx, const BankSnapshot& snapshot, std::uint32_t self_id) {
    require_fresh(ctx, snapshot);
    if (self_id >= snapshot.count()) throw IndexError("ir self id out of range");
    const std::size_t n = snapshot.count();
    const std::size_t d = snapshot.dim();
    const std::span<const double> query(ctx.query);

    GradBundle out;
    out.d_embedding.assign(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const auto row = snapshot.row(j);
        const double pj = std::exp(dot(row, query) / ctx.tau - ctx.log_denominator);
        for (std::size_t k = 0; k < d; ++k) out.d_embedding[k] += pj * row[k];
    }
    const auto self_row = snapshot.row(self_id);
    out.loss = ctx.log_denominator - dot(self_row, query) / ctx.tau;
    for (std::size_t k = 0; k < d; ++k) out.d_embedding[k] = (out.d_embedding[k] - self_row[k]) / ctx.tau;
    return out;
}

// Confidence-weighted total: c * (L_A + L_C) + lambda * |theta|^2. The
// regularizer contributes to the reported loss only; its gradient is applied
// as decoupled weight decay inside the optimizer.
inline GradBundle total_loss(const GradBundle& agg, const GradBundle& cls, double confidence, double params_sq_norm,
                             double lambda) {
    if (confidence < 0.0 || confidence > 1.0) throw ContractError("confidence must lie in [0, 1]");
    GradBundle out;
    out.loss = confidence * (agg.loss + cls.loss) + lambda * params_sq_norm;

    const std::size_t d = std::max(agg.d_embedding.size(), cls.d_embedding.size());
    const std::size_t q = std::max(agg.d_logits.size(), cls.d_logits.size());
    out.d_embedding.assign(d, 0.0);
    out.d_logits.assign(q, 0.0);
    for (std::size_t k = 0; k < agg.d_embedding.size(); ++k) out.d_embedding[k] += confidence * agg.d_embedding[k];
    for (std::size_t k = 0; k < cls.d_embedding.size(); ++k) out.d_embedding[k] += confidence * cls.d_embedding[k];
    for (std::size_t k = 0; k < agg.d_logits.size(); ++k) out.d_logits[k] += confidence * agg.d_logits[k];
    for (std::size_t k = 0; k < cls.d_logits.size(); ++k) out.d_logits[k] += confidence * cls.d_logits[k];
    return out;
}

}  // namespace llp
