#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llp/data.hpp"
#include "llp/propagation.hpp"
#include "llp/trainer.hpp"

namespace llp {

// One grid cell: a propagation variant plus the loss toggles it pairs with.
// Names follow the TopX[wc][lw][woc] convention: K value, with/without
// category loss, locally weighted or not, confidence weighting off.
struct AblationCell {
    std::string name;
    std::uint32_t k = 10;
    bool locally_weighted = false;
    bool use_confidence = true;
    bool use_class_loss = false;
};

inline std::string cell_name(const AblationCell& c) {
    std::string name = "Top" + std::to_string(c.k);
    if (!c.use_confidence) name += "woc";
    if (c.use_class_loss) name += "wc";
    if (c.locally_weighted) name += "lw";
    return name;
}

struct AblationResult {
    AblationCell cell;
    std::vector<double> per_seed_nn_accuracy;
    double mean_nn_accuracy = 0.0;
};

// Trains one cell per grid entry with shared seeds, so cells differ only in
// the flag under test. The IR warmup has no ablation knobs, so per seed it is
// run once and its weights are reused across cells.
inline std::vector<AblationResult> run_ablation_grid(const Dataset& dataset, const LabelState& labels,
                                                     const TrainSchedule& schedule, const PropagationConfig& base_cfg,
                                                     std::span<const AblationCell> grid,
                                                     std::span<const std::uint64_t> seeds) {
    if (grid.empty()) throw ConfigError("ablation grid is empty");
    if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
    const auto n_train = dataset.train_ids().size();

    std::vector<AblationResult> results(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) results[g].cell = grid[g];

    for (std::uint64_t seed : seeds) {
        TrainSchedule sched = schedule;
        sched.seed = seed;

        MlpConfig mcfg;
        mcfg.layer_sizes = {dataset.feature_dim, 64, 64, 32};
        mcfg.embed_dim = 16;
        mcfg.class_count = dataset.class_count;
        MlpNetwork warm_net(mcfg, seed);
        EmbeddingBank warm_bank(n_train, mcfg.embed_dim, seed);
        warmup(warm_net, warm_bank, dataset, sched, base_cfg.tau);

        for (std::size_t g = 0; g < grid.size(); ++g) {
            const AblationCell& cell = grid[g];
            PropagationConfig cfg = base_cfg;
            cfg.k = cell.k;
            cfg.locally_weighted = cell.locally_weighted;
            cfg.use_confidence = cell.use_confidence;
            sched.use_class_loss = cell.use_class_loss;

            MlpNetwork net = warm_net;
            EmbeddingBank bank = warm_bank;
            const TrainReport report = train(net, bank, dataset, labels, sched, cfg);
            const double acc = report.epochs.empty() ? 0.0 : report.epochs.back().val_nn_accuracy;
            results[g].per_seed_nn_accuracy.push_back(acc);
        }
    }
    for (auto& r : results) {
        double acc = 0.0;
        for (double a : r.per_seed_nn_accuracy) acc += a;
        r.mean_nn_accuracy = acc / static_cast<double>(r.per_seed_nn_accuracy.size());
    }
    return results;
}

// Wide CSV in the ablation table's layout: one column per model variant,
// a single accuracy row; per-seed rows follow in long form.
inline std::string ablation_to_csv(std::span<const AblationResult> results) {
    std::string out = "model";
    for (const auto& r : results) out += ',' + r.cell.name;
    out += "\nnn_accuracy";
    for (const auto& r : results) out += ',' + io::format_double(r.mean_nn_accuracy);
    out += '\n';
    return out;
}

inline std::string ablation_runs_to_csv(std::span<const AblationResult> results,
                                        std::span<const std::uint64_t> seeds) {
    std::string out = "model,seed,nn_accuracy\n";
    for (const auto& r : results)
        for (std::size_t s = 0; s < seeds.size(); ++s)
            out += r.cell.name + ',' + std::to_string(seeds[s]) + ',' + io::format_double(r.per_seed_nn_accuracy[s]) + '\n';
    return out;
}

}  // namespace llp
