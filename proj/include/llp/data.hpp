#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "llp/common.hpp"
#include "llp/io.hpp"
#include "llp/propagation.hpp"
#include "llp/rng.hpp"

namespace llp {

enum class Split : std::uint8_t { train = 0, validation = 1 };

// Immutable point collection with ground-truth labels and a train/validation
// partition. True labels of unlabeled training points are held back from the
// learner and only used for evaluation.
struct Dataset {
    std::vector<double> features;  // n x feature_dim, row-major
    std::uint32_t feature_dim = 0;
    std::vector<std::int32_t> true_labels;
    std::vector<std::uint8_t> split;
    std::uint32_t class_count = 0;
    std::string provenance;

    std::size_t size() const { return true_labels.size(); }

    std::span<const double> point(std::size_t i) const { return {features.data() + i * feature_dim, feature_dim}; }

    std::vector<std::uint32_t> ids_in(Split s) const {
        std::vector<std::uint32_t> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == static_cast<std::uint8_t>(s)) out.push_back(static_cast<std::uint32_t>(i));
        return out;
    }

    std::vector<std::uint32_t> train_ids() const { return ids_in(Split::train); }
    std::vector<std::uint32_t> validation_ids() const { return ids_in(Split::validation); }
};

namespace detail {

inline void assign_splits(Dataset& ds, double val_fraction, Rng& rng) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("validation fraction must lie in [0, 1)");
    ds.split.assign(ds.size(), static_cast<std::uint8_t>(Split::train));
    if (val_fraction == 0.0) return;
    // Stratified so every class appears in both halves when it can.
    for (std::uint32_t c = 0; c < ds.class_count; ++c) {
        std::vector<std::uint32_t> members;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.true_labels[i] == static_cast<std::int32_t>(c)) members.push_back(static_cast<std::uint32_t>(i));
        rng.shuffle(members);
        std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(members.size())));
        if (n_val == members.size() && n_val > 0) --n_val;
        for (std::size_t i = 0; i < n_val; ++i) ds.split[members[i]] = static_cast<std::uint8_t>(Split::validation);
    }
}

}  // namespace detail

// Isotropic Gaussian clusters around seeded centers.
inline Dataset make_blobs(std::uint32_t q_classes, std::size_t n_points, double spread, std::uint64_t seed,
                          std::uint32_t feature_dim = 2, double val_fraction = 0.2) {
    if (q_classes < 2) throw ConfigError("blobs need at least two classes");
    if (n_points < q_classes) throw ConfigError("blobs need at least one point per class");
    if (feature_dim == 0) throw ConfigError("blobs need a positive feature dimension");
    Dataset ds;
    ds.feature_dim = feature_dim;
    ds.class_count = q_classes;
    ds.provenance = "blobs:q=" + std::to_string(q_classes) + ",n=" + std::to_string(n_points) +
                    ",spread=" + io::format_double(spread) + ",seed=" + std::to_string(seed);
    Rng centers_rng(seed, "blob-centers");
    std::vector<double> centers(std::size_t{q_classes} * feature_dim);
    for (auto& c : centers) c = centers_rng.uniform(-10.0, 10.0);

    Rng rng(seed, "blob-points");
    ds.features.resize(n_points * feature_dim);
    ds.true_labels.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const auto cls = static_cast<std::uint32_t>(i % q_classes);
        ds.true_labels[i] = static_cast<std::int32_t>(cls);
        for (std::uint32_t k = 0; k < feature_dim; ++k)
            ds.features[i * feature_dim + k] = centers[cls * feature_dim + k] + spread * rng.gaussian();
    }
    Rng split_rng(seed, "split");
    detail::assign_splits(ds, val_fraction, split_rng);
    return ds;
}

// Concentric annuli in the plane; class q sits at radius q + 1. Not linearly
// separable in the raw features, which is the point.
inline Dataset make_rings(std::uint32_t q_classes, std::size_t n_points, double noise, std::uint64_t seed,
                          double val_fraction = 0.2) {
    if (q_classes < 2) throw ConfigError("rings need at least two classes");
    if (n_points < q_classes) throw ConfigError("rings need at least one point per class");
    Dataset ds;
    ds.feature_dim = 2;
    ds.class_count = q_classes;
    ds.provenance = "rings:q=" + std::to_string(q_classes) + ",n=" + std::to_string(n_points) +
                    ",noise=" + io::format_double(noise) + ",seed=" + std::to_string(seed);
    Rng rng(seed, "ring-points");
    ds.features.resize(n_points * 2);
    ds.true_labels.resize(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const auto cls = static_cast<std::uint32_t>(i % q_classes);
        ds.true_labels[i] = static_cast<std::int32_t>(cls);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double radius = static_cast<double>(cls) + 1.0 + noise * rng.gaussian();
        ds.features[i * 2] = radius * std::cos(angle);
        ds.features[i * 2 + 1] = radius * std::sin(angle);
    }
    Rng split_rng(seed, "split");
    detail::assign_splits(ds, val_fraction, split_rng);
    return ds;
}

// Stratified label masking over the training split. The returned LabelState
// is indexed in training-split order (the bank's index space): entry b
// corresponds to dataset row train_ids()[b]. Validation points are never
// labeled. Roughly ceil(p * n_train) points are labeled, spread across
// classes with counts differing by at most one and a floor of one per class.
inline LabelState mask_labels(const Dataset& ds, double p_fraction, std::uint64_t seed) {
    if (p_fraction <= 0.0 || p_fraction > 1.0) throw ConfigError("label fraction must lie in (0, 1]");
    const auto train = ds.train_ids();
    if (train.empty()) throw ConfigError("dataset has no training points");

    std::vector<std::vector<std::uint32_t>> members(ds.class_count);  // bank-index members per class
    for (std::size_t b = 0; b < train.size(); ++b) {
        const std::int32_t cls = ds.true_labels[train[b]];
        if (cls < 0 || cls >= static_cast<std::int32_t>(ds.class_count)) throw ConfigError("dataset label out of range");
        members[static_cast<std::size_t>(cls)].push_back(static_cast<std::uint32_t>(b));
    }
    for (std::uint32_t c = 0; c < ds.class_count; ++c)
        if (members[c].empty()) throw ConfigError("class " + std::to_string(c) + " has no training points");

    const auto total = static_cast<std::size_t>(std::ceil(p_fraction * static_cast<double>(train.size())));
    const std::size_t base = total / ds.class_count;
    const std::size_t extra = total % ds.class_count;

    LabelState labels = LabelState::empty(train.size(), ds.class_count);
    Rng rng(seed, "mask");
    for (std::uint32_t c = 0; c < ds.class_count; ++c) {
        std::size_t quota = base + (c < extra ? 1 : 0);
        quota = std::max<std::size_t>(quota, 1);
        quota = std::min(quota, members[c].size());
        rng.shuffle(members[c]);
        std::vector<std::uint32_t> chosen(members[c].begin(), members[c].begin() + static_cast<std::ptrdiff_t>(quota));
        std::sort(chosen.begin(), chosen.end());
        for (std::uint32_t b : chosen) labels.set_labeled(b, static_cast<std::int32_t>(c));
    }
    return labels;
}

// Keeps every labeled point and a seeded sample of the unlabeled training
// points so that roughly q_fraction of the training split remains. Returns
// the surviving dataset rows plus the matching relabeled LabelState.
inline std::pair<Dataset, LabelState> apply_unlabeled_fraction(const Dataset& ds, const LabelState& labels,
                                                               double q_fraction, std::uint64_t seed) {
    if (q_fraction <= 0.0 || q_fraction > 1.0) throw ConfigError("unlabeled fraction must lie in (0, 1]");
    const auto train = ds.train_ids();
    if (labels.size() != train.size()) throw ContractError("label state does not match the training split");
    if (q_fraction == 1.0) return {ds, labels};

    const auto target = static_cast<std::size_t>(std::llround(q_fraction * static_cast<double>(train.size())));
    std::vector<std::uint32_t> keep;  // bank indices
    std::vector<std::uint32_t> unlabeled;
    for (std::size_t b = 0; b < train.size(); ++b)
        (labels.is_labeled[b] ? keep : unlabeled).push_back(static_cast<std::uint32_t>(b));
    Rng rng(seed, "q-trim");
    rng.shuffle(unlabeled);
    for (std::uint32_t b : unlabeled) {
        if (keep.size() >= target) break;  // labeled points may already exceed the target
        keep.push_back(b);
    }
    std::sort(keep.begin(), keep.end());

    Dataset out;
    out.feature_dim = ds.feature_dim;
    out.class_count = ds.class_count;
    out.provenance = ds.provenance + "|q=" + io::format_double(q_fraction);
    LabelState new_labels = LabelState::empty(keep.size(), ds.class_count);
    for (std::size_t nb = 0; nb < keep.size(); ++nb) {
        const std::uint32_t row = train[keep[nb]];
        out.features.insert(out.features.end(), ds.point(row).begin(), ds.point(row).end());
        out.true_labels.push_back(ds.true_labels[row]);
        out.split.push_back(static_cast<std::uint8_t>(Split::train));
        if (labels.is_labeled[keep[nb]]) new_labels.set_labeled(nb, labels.label[keep[nb]]);
    }
    for (std::uint32_t row : ds.validation_ids()) {
        out.features.insert(out.features.end(), ds.point(row).begin(), ds.point(row).end());
        out.true_labels.push_back(ds.true_labels[row]);
        out.split.push_back(static_cast<std::uint8_t>(Split::validation));
    }
    return {out, new_labels};
}

// Rows restricted to `rows` (dataset indices), order preserved.
inline Dataset subset(const Dataset& ds, std::span<const std::uint32_t> rows) {
    Dataset out;
    out.feature_dim = ds.feature_dim;
    out.class_count = ds.class_count;
    out.provenance = ds.provenance + "|subset";
    for (std::uint32_t r : rows) {
        if (r >= ds.size()) throw IndexError("subset row out of range");
        out.features.insert(out.features.end(), ds.point(r).begin(), ds.point(r).end());
        out.true_labels.push_back(ds.true_labels[r]);
        out.split.push_back(ds.split[r]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV format: header f0,...,fK,label,split with split in {train, val, 0, 1}.

inline void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    auto out = io::open_output(path);
    for (std::uint32_t k = 0; k < ds.feature_dim; ++k) out << 'f' << k << ',';
    out << "label,split\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::uint32_t k = 0; k < ds.feature_dim; ++k) out << io::format_double(ds.point(i)[k]) << ',';
        out << ds.true_labels[i] << ',' << (ds.split[i] == static_cast<std::uint8_t>(Split::train) ? "train" : "val")
            << '\n';
    }
    if (!out) throw IoError("write failure on " + path.string());
}

inline Dataset load_dataset_csv(const std::filesystem::path& path) {
    auto in = io::open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty dataset file " + path.string());
    const auto header = io::split_csv_line(line);
    if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "split")
        throw IoError("bad dataset header in " + path.string());
    Dataset ds;
    ds.feature_dim = static_cast<std::uint32_t>(header.size() - 2);
    ds.provenance = "csv:" + path.string();
    std::int32_t max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = io::split_csv_line(line);
        if (fields.size() != header.size()) throw IoError("bad dataset row in " + path.string());
        for (std::uint32_t k = 0; k < ds.feature_dim; ++k) ds.features.push_back(io::parse_double(fields[k]));
        const auto label = static_cast<std::int32_t>(io::parse_int(fields[ds.feature_dim]));
        ds.true_labels.push_back(label);
        max_label = std::max(max_label, label);
        const std::string& s = fields[ds.feature_dim + 1];
        if (s == "train" || s == "0")
            ds.split.push_back(static_cast<std::uint8_t>(Split::train));
        else if (s == "val" || s == "validation" || s == "1")
            ds.split.push_back(static_cast<std::uint8_t>(Split::validation));
        else
            throw IoError("bad split value '" + s + "' in " + path.string());
    }
    if (ds.true_labels.empty()) throw IoError("dataset file " + path.string() + " has no rows");
    ds.class_count = static_cast<std::uint32_t>(max_label + 1);
    return ds;
}

inline constexpr char kFeatureMagic[9] = "LLPBANK1";  // shared flat matrix container

inline void save_features_bin(const Dataset& ds, const std::filesystem::path& path) {
    io::save_matrix(path, kFeatureMagic, ds.size(), ds.feature_dim, ds.features);
}

// Binary features plus a labels/split CSV with columns label,split.
inline Dataset load_features_bin(const std::filesystem::path& features_path, const std::filesystem::path& labels_csv) {
    auto m = io::load_matrix(features_path, kFeatureMagic);
    Dataset ds;
    ds.feature_dim = static_cast<std::uint32_t>(m.d);
    ds.features = std::move(m.data);
    ds.provenance = "bin:" + features_path.string();
    auto in = io::open_input(labels_csv);
    std::string line;
    if (!std::getline(in, line) || io::split_csv_line(line) != std::vector<std::string>{"label", "split"})
        throw IoError("bad labels header in " + labels_csv.string());
    std::int32_t max_label = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = io::split_csv_line(line);
        if (fields.size() != 2) throw IoError("bad labels row in " + labels_csv.string());
        const auto label = static_cast<std::int32_t>(io::parse_int(fields[0]));
        ds.true_labels.push_back(label);
        max_label = std::max(max_label, label);
        ds.split.push_back(fields[1] == "train" || fields[1] == "0" ? static_cast<std::uint8_t>(Split::train)
                                                                    : static_cast<std::uint8_t>(Split::validation));
    }
    if (ds.true_labels.size() != m.n) throw IoError("labels file does not match the feature matrix");
    ds.class_count = static_cast<std::uint32_t>(max_label + 1);
    return ds;
}

}  // namespace llp
