#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llp/bank.hpp"
#include "llp/common.hpp"
#include "llp/data.hpp"
#include "llp/eval.hpp"
#include "llp/io.hpp"
#include "llp/losses.hpp"
#include "llp/model.hpp"
#include "llp/neighborhood.hpp"
#include "llp/parallel.hpp"
#include "llp/propagation.hpp"
#include "llp/rng.hpp"
#include "llp/softmax.hpp"

namespace llp {

struct TrainSchedule {
    std::uint32_t warmup_epochs = 10;
    double base_lr = 0.03;
    double lr_drop_factor = 10.0;
    double sgd_momentum = 0.9;
    std::uint32_t batch_size = 128;
    double weight_decay = 1e-4;  // decoupled, applied inside the optimizer step
    std::uint32_t max_epochs = 30;
    std::uint32_t patience = 5;  // epochs without validation improvement before an LR drop
    std::uint32_t max_drops = 3;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    bool use_class_loss = true;
    double class_loss_scale = 1.0;   // relative weight of L_C against L_A
    double confidence_floor = 0.0;   // skip examples below this confidence (ablation knob)
    bool per_batch_propagation = false;

    void validate() const {
        if (base_lr <= 0.0 || lr_drop_factor <= 1.0) throw ConfigError("learning rate schedule must be positive");
        if (sgd_momentum < 0.0 || sgd_momentum >= 1.0) throw ConfigError("sgd momentum must lie in [0, 1)");
        if (batch_size == 0) throw ConfigError("batch size must be positive");
        if (patience == 0) throw ConfigError("patience must be at least one epoch");
        if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
        if (confidence_floor < 0.0 || confidence_floor > 1.0) throw ConfigError("confidence floor must lie in [0, 1]");
    }
};

struct EpochRecord {
    std::uint32_t epoch = 0;
    double prop_accuracy = 0.0;      // pseudo-labels vs held-back truth on unlabeled training points
    double val_nn_accuracy = 0.0;
    double val_softmax_accuracy = 0.0;
    double mean_confidence = 0.0;    // over unlabeled training points
    double aggregation_metric = 0.0;
    double learning_rate = 0.0;
    double wall_time_s = 0.0;        // kept out of the CSV so reports stay byte-reproducible
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double initial_prop_accuracy = 0.0;  // accuracy of the propagation that seeds epoch 1
    std::vector<std::uint32_t> lr_drop_epochs;
    double total_wall_time_s = 0.0;

    // Deterministic artifact: timing columns are deliberately absent.
    std::string to_csv() const {
        std::string out = "epoch,prop_accuracy,val_nn_accuracy,val_softmax_accuracy,mean_confidence,"
                          "aggregation_metric,learning_rate\n";
        for (const auto& r : epochs) {
            out += std::to_string(r.epoch) + ',' + io::format_double(r.prop_accuracy) + ',' +
                   io::format_double(r.val_nn_accuracy) + ',' + io::format_double(r.val_softmax_accuracy) + ',' +
                   io::format_double(r.mean_confidence) + ',' + io::format_double(r.aggregation_metric) + ',' +
                   io::format_double(r.learning_rate) + '\n';
        }
        return out;
    }
};

namespace detail {

class SgdMomentum {
public:
    SgdMomentum(std::size_t n, double momentum, double weight_decay)
        : velocity_(n, 0.0), momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::span<double> params, std::span<const double> grad, double lr) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity_[i] = momentum_ * velocity_[i] + grad[i];
            params[i] -= lr * velocity_[i] + lr * weight_decay_ * params[i];
        }
    }

private:
    std::vector<double> velocity_;
    double momentum_;
    double weight_decay_;
};

// Per-example forward/backward across a batch with gradients reduced in
// example order, so the sum is identical for every worker count.
struct BatchResult {
    std::vector<double> grad_sum;
    std::vector<std::vector<double>> embeddings;  // per example, for bank updates
    std::size_t contributing = 0;
};

template <class PerExample>
BatchResult run_batch(const MlpNetwork& net, const Dataset& dataset, std::span<const std::uint32_t> train_rows,
                      std::span<const std::uint32_t> batch, unsigned workers, PerExample&& per_example) {
    BatchResult result;
    result.grad_sum.assign(net.param_count(), 0.0);
    result.embeddings.assign(batch.size(), {});
    std::vector<std::vector<double>> grads(batch.size());
    std::vector<std::uint8_t> used(batch.size(), 0);

    parallel_for(batch.size(), workers, [&](unsigned, std::size_t begin, std::size_t end) {
        for (std::size_t bi = begin; bi < end; ++bi) {
            const std::uint32_t bank_id = batch[bi];
            const auto tape = net.forward(dataset.point(train_rows[bank_id]));
            result.embeddings[bi] = tape.embedding;
            GradBundle bundle = per_example(bank_id, tape);
            if (bundle.d_embedding.empty() && bundle.d_logits.empty()) continue;
            grads[bi] = net.backward(tape, bundle.d_embedding, bundle.d_logits);
            used[bi] = 1;
        }
    });
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        if (!used[bi]) continue;
        for (std::size_t k = 0; k < result.grad_sum.size(); ++k) result.grad_sum[k] += grads[bi][k];
        ++result.contributing;
    }
    return result;
}

}  // namespace detail

// Unsupervised warmup: plain instance-recognition loss over all training
// points, updating the bank row of each visited example.
inline void warmup(MlpNetwork& net, EmbeddingBank& bank, const Dataset& dataset, const TrainSchedule& schedule,
                   double tau = 0.07) {
    schedule.validate();
    const auto train_rows = dataset.train_ids();
    if (bank.count() != train_rows.size()) throw ContractError("bank size does not match the training split");
    detail::SgdMomentum optimizer(net.param_count(), schedule.sgd_momentum, schedule.weight_decay);
    Rng shuffle_rng(schedule.seed, "warmup-shuffle");
    std::vector<std::uint32_t> order(train_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);

    for (std::uint32_t epoch = 0; epoch < schedule.warmup_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
            const std::size_t stop = std::min(order.size(), start + schedule.batch_size);
            const std::span<const std::uint32_t> batch(order.data() + start, stop - start);
            const auto snapshot = bank.snapshot();
            auto result = detail::run_batch(net, dataset, train_rows, batch, schedule.workers,
                                            [&](std::uint32_t bank_id, const ForwardTape& tape) {
                                                auto ctx = make_softmax_context(snapshot, tape.embedding, tau);
                                                return ir_loss(ctx, snapshot, bank_id);
                                            });
            if (result.contributing > 0) {
                for (auto& g : result.grad_sum) g /= static_cast<double>(result.contributing);
                optimizer.step(net.mutable_params(), result.grad_sum, schedule.base_lr);
            }
            for (std::size_t bi = 0; bi < batch.size(); ++bi) bank.update(batch[bi], result.embeddings[bi]);
        }
    }
}

inline DensityTable density_for(const BankSnapshot& snapshot, const LabelState& labels, const PropagationConfig& cfg,
                                std::int64_t epoch) {
    if (!cfg.locally_weighted) return {};
    const auto labeled = labels.labeled_ids();
    std::vector<std::uint32_t> pool;
    if (cfg.density_pool_labeled_only) pool = labeled;
    return compute_density(snapshot, labeled, cfg.t, cfg.tau, cfg.workers,
                           cfg.density_pool_labeled_only ? std::span<const std::uint32_t>(pool)
                                                         : std::span<const std::uint32_t>{},
                           cfg.density_include_self, epoch);
}

// One label-propagation pass: density recompute (when locally weighted)
// followed by propagate_all against the same snapshot.
inline LabelState propagation_pass(const BankSnapshot& snapshot, const LabelState& labels,
                                   const PropagationConfig& cfg, std::int64_t epoch) {
    return propagate_all(snapshot, labels, density_for(snapshot, labels, cfg, epoch), cfg);
}

// Full LLP loop. `labels` indexes the training split (the bank's space) and
// must contain at least one labeled point per class. Alternates epochs of
// confidence-weighted representation learning with epoch-end density
// recomputation and label propagation; the LR drops by `lr_drop_factor`
// whenever validation NN accuracy stalls for `patience` epochs.
inline TrainReport train(MlpNetwork& net, EmbeddingBank& bank, const Dataset& dataset, const LabelState& labels,
                         const TrainSchedule& schedule, const PropagationConfig& cfg,
                         std::optional<std::filesystem::path> artifact_dir = std::nullopt) {
    schedule.validate();
    const auto train_rows = dataset.train_ids();
    if (labels.size() != train_rows.size()) throw ContractError("label state does not match the training split");
    if (bank.count() != train_rows.size()) throw ContractError("bank size does not match the training split");
    {
        std::vector<std::size_t> per_class(dataset.class_count, 0);
        for (std::size_t b = 0; b < labels.size(); ++b)
            if (labels.is_labeled[b]) ++per_class[static_cast<std::size_t>(labels.label[b])];
        for (std::uint32_t c = 0; c < dataset.class_count; ++c)
            if (per_class[c] == 0) throw ConfigError("class " + std::to_string(c) + " has no labeled point");
    }

    const auto t_start = std::chrono::steady_clock::now();
    TrainReport report;
    detail::SgdMomentum optimizer(net.param_count(), schedule.sgd_momentum, schedule.weight_decay);
    Rng shuffle_rng(schedule.seed, "train-shuffle");

    std::vector<std::uint32_t> unlabeled_bank_ids = labels.unlabeled_ids();
    auto prop_accuracy = [&](const LabelState& state) {
        if (unlabeled_bank_ids.empty()) return 1.0;
        std::size_t hits = 0;
        for (std::uint32_t b : unlabeled_bank_ids)
            if (state.label[b] == dataset.true_labels[train_rows[b]]) ++hits;
        return static_cast<double>(hits) / static_cast<double>(unlabeled_bank_ids.size());
    };
    auto mean_confidence = [&](const LabelState& state) {
        if (unlabeled_bank_ids.empty()) return 1.0;
        double acc = 0.0;
        for (std::uint32_t b : unlabeled_bank_ids) acc += state.confidence[b];
        return acc / static_cast<double>(unlabeled_bank_ids.size());
    };

    // Propagation that seeds epoch 1. The density table is kept for the
    // optional per-batch mode, which refreshes votes against the live
    // snapshot but leaves densities on their epoch cadence.
    DensityTable epoch_density = density_for(bank.snapshot(), labels, cfg, 0);
    LabelState current = propagate_all(bank.snapshot(), labels, epoch_density, cfg);
    report.initial_prop_accuracy = prop_accuracy(current);

    std::vector<std::vector<std::uint32_t>> members(dataset.class_count);  // same-pseudo-label sets, frozen per epoch
    auto rebuild_members = [&] {
        for (auto& m : members) m.clear();
        for (std::size_t b = 0; b < current.size(); ++b)
            if (current.label[b] >= 0) members[static_cast<std::size_t>(current.label[b])].push_back(static_cast<std::uint32_t>(b));
    };

    double lr = schedule.base_lr;
    std::uint32_t drops_done = 0;
    std::uint32_t stall = 0;
    double best_val = -1.0;
    std::vector<std::uint32_t> order(train_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);

    for (std::uint32_t epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
        const auto t_epoch = std::chrono::steady_clock::now();
        rebuild_members();
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
            const std::size_t stop = std::min(order.size(), start + schedule.batch_size);
            const std::span<const std::uint32_t> batch(order.data() + start, stop - start);
            const auto snapshot = bank.snapshot();

            if (schedule.per_batch_propagation) {
                bool changed = false;
                for (std::uint32_t b : batch) {
                    if (current.is_labeled[b]) continue;
                    const ClassWeights vote = cfg.locally_weighted
                                                  ? propagate_local(snapshot, current, epoch_density, cfg, b)
                                                  : propagate_naive(snapshot, current, cfg, b);
                    changed = changed || vote.winner != current.label[b];
                    current.label[b] = vote.winner;
                    current.confidence[b] = vote.confidence;
                }
                if (changed) rebuild_members();
            }

            auto result = detail::run_batch(
                net, dataset, train_rows, batch, schedule.workers,
                [&](std::uint32_t bank_id, const ForwardTape& tape) -> GradBundle {
                    const std::int32_t label = current.label[bank_id];
                    if (label < 0) return {};  // never-assigned point contributes nothing
                    double confidence = cfg.use_confidence ? current.confidence[bank_id] : 1.0;
                    if (!current.is_labeled[bank_id] && current.confidence[bank_id] < schedule.confidence_floor)
                        return {};
                    auto ctx = make_softmax_context(snapshot, tape.embedding, cfg.tau);
                    GradBundle agg = aggregation_loss(ctx, snapshot, members[static_cast<std::size_t>(label)], bank_id);
                    GradBundle cls;
                    if (schedule.use_class_loss) {
                        cls = classification_loss(tape.logits, static_cast<std::uint32_t>(label));
                        cls.loss *= schedule.class_loss_scale;
                        for (auto& g : cls.d_logits) g *= schedule.class_loss_scale;
                    }
                    return total_loss(agg, cls, confidence, 0.0, 0.0);  // weight decay lives in the optimizer
                });
            if (result.contributing > 0) {
                for (auto& g : result.grad_sum) g /= static_cast<double>(result.contributing);
                optimizer.step(net.mutable_params(), result.grad_sum, lr);
            }
            for (std::size_t bi = 0; bi < batch.size(); ++bi) bank.update(batch[bi], result.embeddings[bi]);
        }

        // Epoch end: recompute density, re-propagate, evaluate.
        const auto snapshot = bank.snapshot();
        epoch_density = density_for(snapshot, current, cfg, epoch);
        current = propagate_all(snapshot, current, epoch_density, cfg);
        const EvalReport eval = evaluate_model(net, snapshot, dataset, labels);

        EpochRecord record;
        record.epoch = epoch;
        record.prop_accuracy = prop_accuracy(current);
        record.val_nn_accuracy = eval.nn_accuracy;
        record.val_softmax_accuracy = eval.softmax_accuracy;
        record.mean_confidence = mean_confidence(current);
        record.aggregation_metric = eval.mean_agg;
        record.learning_rate = lr;
        record.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_epoch).count();
        report.epochs.push_back(record);

        if (record.val_nn_accuracy > best_val) {
            best_val = record.val_nn_accuracy;
            stall = 0;
        } else if (++stall >= schedule.patience) {
            if (drops_done >= schedule.max_drops) break;
            lr /= schedule.lr_drop_factor;
            ++drops_done;
            stall = 0;
            report.lr_drop_epochs.push_back(epoch);
            if (artifact_dir) {
                net.save(*artifact_dir / ("net_drop" + std::to_string(drops_done) + ".bin"));
                bank.save(*artifact_dir / ("bank_drop" + std::to_string(drops_done) + ".bin"));
            }
        }
    }

    report.total_wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (artifact_dir) {
        net.save(*artifact_dir / "net_final.bin");
        bank.save(*artifact_dir / "bank_final.bin");
        save_label_state(current, *artifact_dir / "labels_final.csv");
    }
    return report;
}

}  // namespace llp
