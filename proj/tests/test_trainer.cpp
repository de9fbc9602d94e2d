#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "llp/ablation.hpp"
#include "llp/data.hpp"
#include "llp/trainer.hpp"

using llp::EmbeddingBank;
using llp::MlpConfig;
using llp::MlpNetwork;
using llp::PropagationConfig;
using llp::TrainSchedule;

namespace {

MlpNetwork small_net(const llp::Dataset& ds, std::uint64_t seed) {
    MlpConfig cfg;
    cfg.layer_sizes = {ds.feature_dim, 24, 12};
    cfg.embed_dim = 8;
    cfg.class_count = ds.class_count;
    return MlpNetwork(cfg, seed);
}

TrainSchedule quick_schedule(std::uint64_t seed) {
    TrainSchedule s;
    s.warmup_epochs = 2;
    s.max_epochs = 5;
    s.batch_size = 64;
    s.patience = 2;
    s.max_drops = 1;
    s.seed = seed;
    return s;
}

double mean_ir_loss(const MlpNetwork& net, const EmbeddingBank& bank, const llp::Dataset& ds) {
    const auto snap = bank.snapshot();
    const auto rows = ds.train_ids();
    double acc = 0.0;
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const auto tape = net.forward(ds.point(rows[b]));
        auto ctx = llp::make_softmax_context(snap, tape.embedding, 0.07);
        acc += llp::ir_loss(ctx, snap, static_cast<std::uint32_t>(b)).loss;
    }
    return acc / static_cast<double>(rows.size());
}

}  // namespace

TEST_CASE("zero warmup epochs change nothing", "[trainer]") {
    const auto ds = llp::make_blobs(3, 120, 0.4, 1, 2, 0.0);
    auto net = small_net(ds, 1);
    EmbeddingBank bank(120, 8, 1);
    const std::vector<double> before(net.params().begin(), net.params().end());
    auto sched = quick_schedule(1);
    sched.warmup_epochs = 0;
    llp::warmup(net, bank, ds, sched);
    CHECK(std::equal(before.begin(), before.end(), net.params().begin()));
}

TEST_CASE("warmup is deterministic and reduces the IR loss", "[trainer]") {
    const auto ds = llp::make_blobs(3, 300, 0.5, 2, 2, 0.0);
    auto sched = quick_schedule(7);
    sched.warmup_epochs = 3;

    auto net_a = small_net(ds, 7);
    EmbeddingBank bank_a(300, 8, 7);
    const double loss_before = mean_ir_loss(net_a, bank_a, ds);
    llp::warmup(net_a, bank_a, ds, sched);
    const double loss_after = mean_ir_loss(net_a, bank_a, ds);
    CHECK(loss_after < loss_before);

    auto net_b = small_net(ds, 7);
    EmbeddingBank bank_b(300, 8, 7);
    llp::warmup(net_b, bank_b, ds, sched);
    CHECK(std::equal(net_a.params().begin(), net_a.params().end(), net_b.params().begin()));
    CHECK(bank_a.snapshot() == bank_b.snapshot());
}

TEST_CASE("fully labeled training is supervised and keeps labels intact", "[trainer]") {
    const auto ds = llp::make_blobs(3, 150, 0.4, 3, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 1.0, 3);
    auto net = small_net(ds, 3);
    EmbeddingBank bank(ds.train_ids().size(), 8, 3);
    PropagationConfig cfg;
    cfg.t = 10;
    const auto report = llp::train(net, bank, ds, labels, quick_schedule(3), cfg);
    REQUIRE_FALSE(report.epochs.empty());
    CHECK(report.initial_prop_accuracy == 1.0);  // propagation is the identity
    for (const auto& e : report.epochs) {
        CHECK(e.prop_accuracy == 1.0);
        CHECK(e.mean_confidence == 1.0);
    }
}

TEST_CASE("training is reproducible at worker count one", "[trainer]") {
    const auto ds = llp::make_blobs(4, 240, 0.6, 5, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 0.1, 5);
    PropagationConfig cfg;
    cfg.t = 10;

    auto run = [&] {
        auto net = small_net(ds, 5);
        EmbeddingBank bank(ds.train_ids().size(), 8, 5);
        auto sched = quick_schedule(5);
        llp::warmup(net, bank, ds, sched);
        return llp::train(net, bank, ds, labels, sched, cfg).to_csv();
    };
    CHECK(run() == run());
}

TEST_CASE("labeled points are never touched by training", "[trainer]") {
    const auto ds = llp::make_blobs(3, 200, 0.5, 8, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 0.15, 8);
    const auto labels_copy = labels;
    auto net = small_net(ds, 8);
    EmbeddingBank bank(ds.train_ids().size(), 8, 8);
    PropagationConfig cfg;
    cfg.t = 10;
    auto sched = quick_schedule(8);
    llp::warmup(net, bank, ds, sched);
    llp::train(net, bank, ds, labels, sched, cfg);
    CHECK(labels.label == labels_copy.label);
    CHECK(labels.is_labeled == labels_copy.is_labeled);
    CHECK(labels.confidence == labels_copy.confidence);
}

TEST_CASE("learning rate drops at most max_drops times and never rises", "[trainer]") {
    const auto ds = llp::make_blobs(3, 150, 0.8, 9, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 0.2, 9);
    auto net = small_net(ds, 9);
    EmbeddingBank bank(ds.train_ids().size(), 8, 9);
    PropagationConfig cfg;
    cfg.t = 10;
    TrainSchedule sched = quick_schedule(9);
    sched.max_epochs = 12;
    sched.patience = 1;  // force drops quickly
    sched.max_drops = 2;
    const auto report = llp::train(net, bank, ds, labels, sched, cfg);

    double prev = report.epochs.front().learning_rate;
    std::set<double> below_base;
    for (const auto& e : report.epochs) {
        CHECK(e.learning_rate <= prev);
        prev = e.learning_rate;
        if (e.learning_rate < sched.base_lr) below_base.insert(e.learning_rate);
    }
    CHECK(below_base.size() <= sched.max_drops);
    CHECK(report.lr_drop_epochs.size() <= sched.max_drops);
}

TEST_CASE("a class without labels is a configuration error", "[trainer]") {
    const auto ds = llp::make_blobs(3, 90, 0.4, 10, 2, 0.0);
    auto labels = llp::LabelState::empty(90, 3);
    labels.set_labeled(0, 0);
    labels.set_labeled(1, 1);  // class 2 missing
    auto net = small_net(ds, 10);
    EmbeddingBank bank(90, 8, 10);
    PropagationConfig cfg;
    CHECK_THROWS_AS(llp::train(net, bank, ds, labels, quick_schedule(10), cfg), llp::ConfigError);
}

TEST_CASE("semi-supervised training beats its own starting point on blobs", "[trainer]") {
    const auto ds = llp::make_blobs(3, 400, 0.6, 11, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 0.05, 11);
    auto net = small_net(ds, 11);
    EmbeddingBank bank(ds.train_ids().size(), 8, 11);
    PropagationConfig cfg;
    cfg.t = 15;
    TrainSchedule sched = quick_schedule(11);
    sched.warmup_epochs = 3;
    sched.max_epochs = 8;
    llp::warmup(net, bank, ds, sched);
    const auto report = llp::train(net, bank, ds, labels, sched, cfg);
    REQUIRE_FALSE(report.epochs.empty());
    CHECK(report.epochs.back().prop_accuracy > report.initial_prop_accuracy);
    CHECK(report.epochs.back().aggregation_metric > 0.0);
    for (const auto& e : report.epochs) {
        CHECK(e.mean_confidence > 0.0);
        CHECK(e.mean_confidence <= 1.0);
    }
}

TEST_CASE("per-batch propagation mode stays consistent", "[trainer]") {
    const auto ds = llp::make_blobs(3, 150, 0.5, 12, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 0.2, 12);
    auto net = small_net(ds, 12);
    EmbeddingBank bank(ds.train_ids().size(), 8, 12);
    PropagationConfig cfg;
    cfg.t = 10;
    TrainSchedule sched = quick_schedule(12);
    sched.per_batch_propagation = true;
    const auto report = llp::train(net, bank, ds, labels, sched, cfg);
    REQUIRE_FALSE(report.epochs.empty());
    for (const auto& e : report.epochs) {
        CHECK(e.prop_accuracy >= 0.0);
        CHECK(e.prop_accuracy <= 1.0);
    }
}

TEST_CASE("ablation cells with identical flags reproduce identical accuracies", "[trainer]") {
    const auto ds = llp::make_blobs(3, 200, 0.6, 13, 2, 0.2);
    const auto labels = llp::mask_labels(ds, 0.1, 13);
    TrainSchedule sched = quick_schedule(13);
    sched.warmup_epochs = 1;
    sched.max_epochs = 3;
    PropagationConfig cfg;
    cfg.t = 10;

    llp::AblationCell a{"Top5wclw", 5, true, true, true};
    llp::AblationCell twin{"Top5wclw-twin", 5, true, true, true};
    const std::vector<llp::AblationCell> grid{a, twin};
    const std::vector<std::uint64_t> seeds{13};
    const auto results = llp::run_ablation_grid(ds, labels, sched, cfg, grid, seeds);
    REQUIRE(results.size() == 2);
    CHECK(results[0].mean_nn_accuracy == results[1].mean_nn_accuracy);
}
