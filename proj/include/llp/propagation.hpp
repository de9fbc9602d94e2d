#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "llp/bank.hpp"
#include "llp/common.hpp"
#include "llp/io.hpp"
#include "llp/neighborhood.hpp"
#include "llp/parallel.hpp"

namespace llp {

struct PropagationConfig {
    std::uint32_t k = 10;             // labeled voters per query
    std::uint32_t t = 25;             // neighborhood size for the density estimate
    double tau = 0.07;                // softmax temperature
    bool locally_weighted = true;     // density-corrected votes vs plain weighted KNN
    bool use_confidence = true;       // weight training losses by pseudo-label confidence
    bool density_pool_labeled_only = false;
    bool density_include_self = false;
    unsigned workers = 1;
};

// Per-point label assignment shared by propagation, training and evaluation.
// label -1 means never assigned; truly labeled points always carry
// confidence exactly 1 and are never rewritten by propagation.
struct LabelState {
    std::vector<std::int32_t> label;
    std::vector<std::uint8_t> is_labeled;
    std::vector<double> confidence;
    std::uint32_t class_count = 0;

    static LabelState empty(std::size_t n, std::uint32_t classes) {
        LabelState s;
        s.label.assign(n, -1);
        s.is_labeled.assign(n, 0);
        s.confidence.assign(n, 0.0);
        s.class_count = classes;
        return s;
    }

    std::size_t size() const { return label.size(); }

    void set_labeled(std::size_t i, std::int32_t cls) {
        label[i] = cls;
        is_labeled[i] = 1;
        confidence[i] = 1.0;
    }

    std::vector<std::uint32_t> labeled_ids() const {
        std::vector<std::uint32_t> out;
        for (std::size_t i = 0; i < label.size(); ++i)
            if (is_labeled[i]) out.push_back(static_cast<std::uint32_t>(i));
        return out;
    }

    std::vector<std::uint32_t> unlabeled_ids() const {
        std::vector<std::uint32_t> out;
        for (std::size_t i = 0; i < label.size(); ++i)
            if (!is_labeled[i]) out.push_back(static_cast<std::uint32_t>(i));
        return out;
    }
};

// Vote tally for one query. w holds the per-class vote mass up to a positive
// per-query scale (the softmax denominator cancels in p, winner and
// confidence, which is what makes propagation O(NM) instead of O(N^2)).
struct ClassWeights {
    std::vector<double> w;
    std::vector<double> p;
    std::int32_t winner = -1;
    double confidence = 0.0;
};

namespace detail {

struct VoteScratch {
    std::vector<double> scaled;  // similarity / tau per labeled candidate
    std::vector<std::uint32_t> order;
};

template <class Scalar>
ClassWeights tally_votes(const BasicSnapshot<Scalar>& snapshot, const LabelState& labels,
                         std::span<const std::uint32_t> labeled, const DensityTable* density,
                         const PropagationConfig& cfg, std::uint32_t query_id, VoteScratch& scratch) {
    if (labeled.empty()) throw PropagationError("propagation needs at least one labeled point");
    if (labels.is_labeled[query_id]) throw ContractError("propagation query must be unlabeled");
    const auto query = snapshot.row(query_id);

    scratch.scaled.resize(labeled.size());
    double max_scaled = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < labeled.size(); ++c) {
        scratch.scaled[c] = dot(snapshot.row(labeled[c]), query) / cfg.tau;
        max_scaled = std::max(max_scaled, scratch.scaled[c]);
    }

    // Per-candidate vote weight, shared positive scale dropped:
    //   naive:  exp(sim/tau - max)
    //   local:  exp(sim/tau - max) * rho_ref / rho(v_i)
    // rho_ref is the largest candidate density, so uniform density tables
    // reproduce the naive weights bit for bit.
    double rho_ref = 1.0;
    if (density) {
        rho_ref = 0.0;
        for (std::uint32_t id : labeled) rho_ref = std::max(rho_ref, density->at(id));
    }

    detail::TopK top(std::min<std::size_t>(cfg.k, labeled.size()));
    for (std::size_t c = 0; c < labeled.size(); ++c) {
        double weight = std::exp(scratch.scaled[c] - max_scaled);
        if (density) weight *= rho_ref / density->at(labeled[c]);
        top.offer(weight, labeled[c]);
    }

    ClassWeights out;
    out.w.assign(labels.class_count, 0.0);
    for (const auto& vote : top.sorted()) out.w[static_cast<std::size_t>(labels.label[vote.id])] += vote.score;

    double total = 0.0;
    for (double wj : out.w) total += wj;
    if (total <= 0.0) {
        // Every selected weight underflowed (only reachable at extreme
        // temperatures); fall back to an unweighted vote.
        log_warning("vote weights underflowed for query " + std::to_string(query_id) + "; using unweighted votes");
        std::fill(out.w.begin(), out.w.end(), 0.0);
        for (const auto& vote : top.sorted()) out.w[static_cast<std::size_t>(labels.label[vote.id])] += 1.0;
        total = static_cast<double>(top.sorted().size());
    }
    out.p.assign(labels.class_count, 0.0);
    for (std::size_t j = 0; j < out.w.size(); ++j) out.p[j] = out.w[j] / total;

    out.winner = 0;
    for (std::size_t j = 1; j < out.p.size(); ++j)
        if (out.p[j] > out.p[static_cast<std::size_t>(out.winner)]) out.winner = static_cast<std::int32_t>(j);
    out.confidence = out.p[static_cast<std::size_t>(out.winner)];
    return out;
}

}  // namespace detail

// Plain weighted-KNN vote over the K nearest labeled neighbors.
template <class Scalar>
ClassWeights propagate_naive(const BasicSnapshot<Scalar>& snapshot, const LabelState& labels,
                             const PropagationConfig& cfg, std::uint32_t query_id) {
    const auto labeled = labels.labeled_ids();
    detail::VoteScratch scratch;
    return detail::tally_votes(snapshot, labels, labeled, nullptr, cfg, query_id, scratch);
}

// Density-corrected vote: candidates are ranked and weighted by
// P(i|v) / rho(v_i), so neighbors from sparse regions count for more.
template <class Scalar>
ClassWeights propagate_local(const BasicSnapshot<Scalar>& snapshot, const LabelState& labels,
                             const DensityTable& density, const PropagationConfig& cfg, std::uint32_t query_id) {
    const auto labeled = labels.labeled_ids();
    detail::VoteScratch scratch;
    return detail::tally_votes(snapshot, labels, labeled, &density, cfg, query_id, scratch);
}

// Assigns a pseudo-label and confidence to every unlabeled point. Labeled
// points pass through untouched. Queries are sharded across workers with
// per-point outputs, so the result does not depend on the worker count.
template <class Scalar>
LabelState propagate_all(const BasicSnapshot<Scalar>& snapshot, const LabelState& labels, const DensityTable& density,
                         const PropagationConfig& cfg) {
    if (labels.size() != snapshot.count()) throw ContractError("label state does not match the snapshot");
    LabelState out = labels;
    const auto labeled = labels.labeled_ids();
    const auto queries = labels.unlabeled_ids();
    if (queries.empty()) return out;
    if (labeled.empty()) throw PropagationError("propagation needs at least one labeled point");
    const DensityTable* table = cfg.locally_weighted ? &density : nullptr;

    parallel_for(queries.size(), cfg.workers, [&](unsigned, std::size_t begin, std::size_t end) {
        detail::VoteScratch scratch;
        for (std::size_t qi = begin; qi < end; ++qi) {
            const std::uint32_t q = queries[qi];
            const ClassWeights vote = detail::tally_votes(snapshot, labels, labeled, table, cfg, q, scratch);
            out.label[q] = vote.winner;
            out.confidence[q] = vote.confidence;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// LabelState CSV: header `point_id,label,is_labeled,confidence`; the label
// field is empty for never-assigned points.

inline void save_label_state(const LabelState& s, const std::filesystem::path& path) {
    auto out = io::open_output(path);
    out << "point_id,label,is_labeled,confidence\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << i << ',';
        if (s.label[i] >= 0) out << s.label[i];
        out << ',' << (s.is_labeled[i] ? 1 : 0) << ',' << io::format_double(s.confidence[i]) << '\n';
    }
    if (!out) throw IoError("write failure on " + path.string());
}

inline LabelState load_label_state(const std::filesystem::path& path, std::uint32_t class_count = 0) {
    auto in = io::open_input(path);
    std::string line;
    if (!std::getline(in, line) || io::split_csv_line(line) != std::vector<std::string>{"point_id", "label", "is_labeled", "confidence"})
        throw IoError("bad label state header in " + path.string());
    LabelState s;
    std::int32_t max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = io::split_csv_line(line);
        if (fields.size() != 4) throw IoError("bad label state row in " + path.string());
        if (static_cast<std::size_t>(io::parse_int(fields[0])) != s.label.size())
            throw IoError("non-contiguous point ids in " + path.string());
        const std::int32_t label = fields[1].empty() ? -1 : static_cast<std::int32_t>(io::parse_int(fields[1]));
        s.label.push_back(label);
        s.is_labeled.push_back(io::parse_int(fields[2]) != 0);
        s.confidence.push_back(io::parse_double(fields[3]));
        max_label = std::max(max_label, label);
    }
    s.class_count = std::max(class_count, static_cast<std::uint32_t>(max_label + 1));
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.is_labeled[i] && s.label[i] < 0) throw IoError("labeled point without a label in " + path.string());
        if (s.is_labeled[i]) s.confidence[i] = 1.0;
    }
    return s;
}

}  // namespace llp
