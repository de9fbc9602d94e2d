#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "llp/bank.hpp"
#include "llp/common.hpp"
#include "llp/data.hpp"
#include "llp/model.hpp"
#include "llp/neighborhood.hpp"
#include "llp/propagation.hpp"

namespace llp {

struct EvalReport {
    double nn_accuracy = 0.0;
    double softmax_accuracy = 0.0;
    std::vector<double> per_class_agg;  // L2 norm of each class-mean embedding; NaN for empty classes
    double mean_agg = 0.0;
};

// Label of the cosine-nearest pool member; ties fall on the lower point id.
// The default pool is the truly labeled points.
inline std::int32_t nn_classify(const BankSnapshot& snapshot, const LabelState& labels,
                                std::span<const double> query_embedding, bool pool_all_points = false) {
    std::vector<std::uint32_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pool_all_points ? labels.label[i] >= 0 : labels.is_labeled[i] != 0)
            pool.push_back(static_cast<std::uint32_t>(i));
    if (pool.empty()) throw PropagationError("nearest-neighbor pool is empty");
    const auto nearest = knn(snapshot, query_embedding, 1, pool);
    return labels.label[nearest.ids.front()];
}

struct AggregationMetric {
    std::vector<double> per_class;
    double mean = 0.0;
};

// L2 norm of each class-mean embedding: 1 for a collapsed class, 0 for a
// maximally dispersed one. Empty classes are skipped with a warning.
inline AggregationMetric aggregation_metric(const BankSnapshot& snapshot, std::span<const std::int32_t> true_labels,
                                            std::uint32_t class_count) {
    if (true_labels.size() != snapshot.count()) throw ContractError("labels do not match the snapshot");
    const std::size_t d = snapshot.dim();
    std::vector<std::vector<double>> sums(class_count, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        const std::int32_t c = true_labels[i];
        if (c < 0 || c >= static_cast<std::int32_t>(class_count)) continue;
        const auto row = snapshot.row(i);
        auto& s = sums[static_cast<std::size_t>(c)];
        for (std::size_t k = 0; k < d; ++k) s[k] += row[k];
        ++counts[static_cast<std::size_t>(c)];
    }
    AggregationMetric out;
    out.per_class.assign(class_count, std::numeric_limits<double>::quiet_NaN());
    double acc = 0.0;
    std::size_t present = 0;
    for (std::uint32_t c = 0; c < class_count; ++c) {
        if (counts[c] == 0) {
            log_warning("aggregation metric skipping empty class " + std::to_string(c));
            continue;
        }
        for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
        out.per_class[c] = l2_norm(std::span<const double>(sums[c]));
        acc += out.per_class[c];
        ++present;
    }
    out.mean = present ? acc / static_cast<double>(present) : 0.0;
    return out;
}

// Classical (Torgerson) MDS of the embeddings from their cosine-distance
// matrix. For unit vectors the squared inter-point distance is
// |v_i - v_j|^2 = 2 (1 - v_i . v_j), which is what gets double centered, so
// planar configurations (great circles) are reconstructed exactly. Top two
// eigenpairs, eigenvectors scaled by sqrt(eigenvalue); the sign of each
// coordinate column is fixed by making its largest-magnitude entry positive;
// non-positive eigenvalues give a zero column.
inline std::vector<std::array<double, 2>> mds_coords(const BankSnapshot& snapshot,
                                                     std::span<const std::uint32_t> point_ids) {
    const std::size_t n = point_ids.size();
    if (n < 3) throw ConfigError("mds needs at least three points");
    Eigen::MatrixXd b(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dist2 = 2.0 * (1.0 - dot(snapshot.row(point_ids[i]), snapshot.row(point_ids[j])));
            b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dist2;
            b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = dist2;
        }
    }
    const Eigen::VectorXd row_mean = b.rowwise().mean();
    const double grand_mean = b.mean();
    for (Eigen::Index i = 0; i < b.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j)
            b(i, j) = -0.5 * (b(i, j) - row_mean(i) - row_mean(j) + grand_mean);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(b);
    if (solver.info() != Eigen::Success) throw Error("mds eigendecomposition failed");

    std::vector<std::array<double, 2>> coords(n, {0.0, 0.0});
    const auto& values = solver.eigenvalues();  // ascending
    for (int axis = 0; axis < 2; ++axis) {
        const Eigen::Index idx = static_cast<Eigen::Index>(n) - 1 - axis;
        const double lambda = values(idx);
        if (lambda <= 1e-12) continue;  // rank-deficient direction stays zero
        Eigen::VectorXd column = solver.eigenvectors().col(idx) * std::sqrt(lambda);
        Eigen::Index arg_max = 0;
        for (Eigen::Index i = 1; i < column.size(); ++i)
            if (std::abs(column(i)) > std::abs(column(arg_max))) arg_max = i;
        if (column(arg_max) < 0.0) column = -column;
        for (std::size_t i = 0; i < n; ++i) coords[i][static_cast<std::size_t>(axis)] = column(static_cast<Eigen::Index>(i));
    }
    return coords;
}

// Forwards every validation point through the network and scores it against
// the bank: nearest-neighbor label, softmax argmax, plus the aggregation
// metric of the bank itself under the true training labels.
inline EvalReport evaluate_model(const MlpNetwork& net, const BankSnapshot& snapshot, const Dataset& dataset,
                                 const LabelState& labels, bool nn_pool_all_points = false) {
    const auto train = dataset.train_ids();
    const auto val = dataset.validation_ids();
    if (labels.size() != train.size() || snapshot.count() != train.size())
        throw ContractError("evaluation inputs disagree on the training split");

    EvalReport report;
    std::size_t nn_hits = 0;
    std::size_t softmax_hits = 0;
    for (std::uint32_t row : val) {
        const auto tape = net.forward(dataset.point(row));
        if (nn_classify(snapshot, labels, tape.embedding, nn_pool_all_points) == dataset.true_labels[row]) ++nn_hits;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < tape.logits.size(); ++j)
            if (tape.logits[j] > tape.logits[arg]) arg = j;
        if (static_cast<std::int32_t>(arg) == dataset.true_labels[row]) ++softmax_hits;
    }
    if (!val.empty()) {
        report.nn_accuracy = static_cast<double>(nn_hits) / static_cast<double>(val.size());
        report.softmax_accuracy = static_cast<double>(softmax_hits) / static_cast<double>(val.size());
    }

    std::vector<std::int32_t> bank_truth(train.size());
    for (std::size_t b = 0; b < train.size(); ++b) bank_truth[b] = dataset.true_labels[train[b]];
    const auto agg = aggregation_metric(snapshot, bank_truth, dataset.class_count);
    report.per_class_agg = agg.per_class;
    report.mean_agg = agg.mean;
    return report;
}

}  // namespace llp
