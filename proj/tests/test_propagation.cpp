#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "llp/bank.hpp"
#include "llp/propagation.hpp"
#include "llp/trainer.hpp"
#include "oracle.hpp"

using llp::EmbeddingBank;
using llp::LabelState;
using llp::PropagationConfig;

namespace {

EmbeddingBank bank_from(const oracle::Matrix& m) {
    EmbeddingBank bank(m.size(), m[0].size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) bank.set_row(i, m[i]);
    return bank;
}

LabelState labels_from(const oracle::Instance& inst) {
    LabelState s = LabelState::empty(inst.labels.size(), static_cast<std::uint32_t>(inst.class_count));
    for (std::size_t i = 0; i < inst.labels.size(); ++i)
        if (inst.labels[i] >= 0) s.set_labeled(i, inst.labels[i]);
    return s;
}

void check_vote_matches(const llp::ClassWeights& got, const oracle::Vote& want) {
    CHECK(got.winner == want.winner);
    REQUIRE(got.p.size() == want.p.size());
    for (std::size_t j = 0; j < want.p.size(); ++j) CHECK(got.p[j] == Catch::Approx(want.p[j]).margin(1e-9));
    CHECK(got.confidence == Catch::Approx(want.confidence).margin(1e-9));
}

}  // namespace

TEST_CASE("unanimous neighborhood votes with full confidence", "[propagation]") {
    oracle::Instance inst;
    inst.class_count = 2;
    inst.vectors = oracle::random_unit_matrix(8, 6, 4);
    inst.labels = {-1, 1, 1, 1, 0, 0, 0, 0};
    // Query 0 far from the three class-0 points: keep K at 3 so only class-1
    // labeled points vote.
    auto labels = labels_from(inst);
    auto bank = bank_from(inst.vectors);
    PropagationConfig cfg;
    cfg.k = 3;
    // put the class-1 voters right next to the query
    for (std::uint32_t id : {1u, 2u, 3u}) {
        auto v = inst.vectors[0];
        v[id % 6] += 0.05;
        bank.set_row(id, oracle::normalized(std::move(v)));
    }
    const auto vote = llp::propagate_naive(bank.snapshot(), labels, cfg, 0);
    CHECK(vote.winner == 1);
    CHECK(vote.confidence == 1.0);
}

TEST_CASE("exact two-way symmetry splits the vote and ties to class 0", "[propagation]") {
    oracle::Matrix m{{1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}};
    auto bank = bank_from(m);
    LabelState labels = LabelState::empty(3, 2);
    labels.set_labeled(1, 1);
    labels.set_labeled(2, 0);
    PropagationConfig cfg;
    cfg.k = 2;
    const auto vote = llp::propagate_naive(bank.snapshot(), labels, cfg, 0);
    CHECK(vote.p[0] == 0.5);
    CHECK(vote.p[1] == 0.5);
    CHECK(vote.winner == 0);
    CHECK(vote.confidence == 0.5);
}

TEST_CASE("sixty-point instance matches the brute-force reference", "[propagation]") {
    const auto inst = oracle::random_instance(60, 8, 2, 20, 60601);
    auto bank = bank_from(inst.vectors);
    auto labels = labels_from(inst);
    auto snap = bank.snapshot();
    PropagationConfig cfg;
    cfg.k = 10;
    cfg.t = 12;
    const auto density = llp::compute_density(snap, labels.labeled_ids(), cfg.t, cfg.tau);
    for (std::size_t q = 0; q < 60; ++q) {
        if (inst.labels[q] >= 0) continue;
        check_vote_matches(llp::propagate_naive(snap, labels, cfg, static_cast<std::uint32_t>(q)),
                           oracle::propagate_naive(inst.vectors, inst.labels, 2, 10, cfg.tau, q));
        check_vote_matches(llp::propagate_local(snap, labels, density, cfg, static_cast<std::uint32_t>(q)),
                           oracle::propagate_local(inst.vectors, inst.labels, 2, 10, cfg.t, cfg.tau, q));
    }
}

TEST_CASE("random instances agree with the oracle for both rules", "[propagation]") {
    std::mt19937_64 eng(999);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t n = 30 + eng() % 90;
        const int q = 2 + static_cast<int>(eng() % 4);
        const std::size_t m = static_cast<std::size_t>(q) + eng() % (n / 3);
        const std::size_t k = 1 + eng() % 12;
        const std::size_t t = 1 + eng() % 20;
        const auto inst = oracle::random_instance(n, 10, q, m, eng());

        auto bank = bank_from(inst.vectors);
        auto labels = labels_from(inst);
        auto snap = bank.snapshot();
        PropagationConfig cfg;
        cfg.k = static_cast<std::uint32_t>(k);
        cfg.t = static_cast<std::uint32_t>(t);
        const auto density = llp::compute_density(snap, labels.labeled_ids(), t, cfg.tau);

        for (std::size_t query = 0; query < n; ++query) {
            if (inst.labels[query] >= 0) continue;
            check_vote_matches(llp::propagate_naive(snap, labels, cfg, static_cast<std::uint32_t>(query)),
                               oracle::propagate_naive(inst.vectors, inst.labels, q, k, cfg.tau, query));
            check_vote_matches(llp::propagate_local(snap, labels, density, cfg, static_cast<std::uint32_t>(query)),
                               oracle::propagate_local(inst.vectors, inst.labels, q, k, t, cfg.tau, query));
        }
    }
}

TEST_CASE("forced-uniform densities reproduce the naive rule exactly", "[propagation]") {
    const auto inst = oracle::random_instance(80, 8, 3, 24, 505);
    auto bank = bank_from(inst.vectors);
    auto labels = labels_from(inst);
    auto snap = bank.snapshot();
    PropagationConfig cfg;
    cfg.k = 7;

    llp::DensityTable uniform;
    uniform.rho_by_id.assign(80, std::numeric_limits<double>::quiet_NaN());
    for (std::uint32_t id : labels.labeled_ids()) {
        uniform.ids.push_back(id);
        uniform.rho.push_back(0.25);
        uniform.rho_by_id[id] = 0.25;
    }

    for (std::size_t query = 0; query < 80; ++query) {
        if (inst.labels[query] >= 0) continue;
        const auto naive = llp::propagate_naive(snap, labels, cfg, static_cast<std::uint32_t>(query));
        const auto local = llp::propagate_local(snap, labels, uniform, cfg, static_cast<std::uint32_t>(query));
        CHECK(local.winner == naive.winner);
        CHECK(local.p == naive.p);  // bitwise: rho_ref / rho == 1.0 exactly
        CHECK(local.confidence == naive.confidence);
    }
}

TEST_CASE("equidistant three-cluster scene flips to the sparse class", "[propagation]") {
    // Frozen from the committed brute-force oracle run on this instance
    // (tests/make_fixtures.cpp regenerates it).
    constexpr double kNaiveMaxP = 0.33333333333333331;
    constexpr double kLocalConfidence = 0.57567158411955677;

    const auto scene = oracle::three_cluster_scene();
    const auto& inst = scene.instance;
    auto bank = bank_from(inst.vectors);
    auto labels = labels_from(inst);
    auto snap = bank.snapshot();
    PropagationConfig cfg;  // defaults: k=10 (clamps to 3 voters), t=25

    const auto naive = llp::propagate_naive(snap, labels, cfg, 0);
    double naive_max_p = 0.0;
    for (double p : naive.p) naive_max_p = std::max(naive_max_p, p);
    CHECK(naive_max_p < 0.5);
    CHECK(naive_max_p == Catch::Approx(kNaiveMaxP).margin(1e-9));

    const auto density = llp::compute_density(snap, labels.labeled_ids(), cfg.t, cfg.tau);
    const auto local = llp::propagate_local(snap, labels, density, cfg, 0);
    CHECK(local.winner == 0);  // the sparse cluster's class
    CHECK(local.confidence > 0.5);
    CHECK(local.confidence == Catch::Approx(kLocalConfidence).margin(1e-9));

    const auto ref = oracle::propagate_local(inst.vectors, inst.labels, 3, cfg.k, cfg.t, cfg.tau, 0);
    check_vote_matches(local, ref);
}

TEST_CASE("single labeled point forces the vote", "[propagation]") {
    const auto m = oracle::random_unit_matrix(10, 5, 8);
    auto bank = bank_from(m);
    LabelState labels = LabelState::empty(10, 3);
    labels.set_labeled(6, 2);
    PropagationConfig cfg;
    const auto vote = llp::propagate_naive(bank.snapshot(), labels, cfg, 0);
    CHECK(vote.winner == 2);
    CHECK(vote.confidence == 1.0);
}

TEST_CASE("propagate_all assigns everything and preserves labeled points", "[propagation]") {
    const auto inst = oracle::random_instance(70, 8, 3, 9, 3131);
    auto bank = bank_from(inst.vectors);
    auto labels = labels_from(inst);
    auto snap = bank.snapshot();
    PropagationConfig cfg;
    cfg.t = 10;
    const auto density = llp::compute_density(snap, labels.labeled_ids(), cfg.t, cfg.tau);
    const auto result = llp::propagate_all(snap, labels, density, cfg);

    for (std::size_t i = 0; i < 70; ++i) {
        if (labels.is_labeled[i]) {
            CHECK(result.label[i] == labels.label[i]);
            CHECK(result.confidence[i] == 1.0);
        } else {
            CHECK(result.label[i] >= 0);
            CHECK(result.confidence[i] > 0.0);
            CHECK(result.confidence[i] <= 1.0);
        }
    }
}

TEST_CASE("propagate_all is identical across worker counts", "[propagation]") {
    const auto inst = oracle::random_instance(150, 12, 4, 30, 7171);
    auto bank = bank_from(inst.vectors);
    auto labels = labels_from(inst);
    auto snap = bank.snapshot();
    PropagationConfig cfg;
    const auto density = llp::compute_density(snap, labels.labeled_ids(), cfg.t, cfg.tau);

    PropagationConfig one = cfg, eight = cfg;
    one.workers = 1;
    eight.workers = 8;
    const auto a = llp::propagate_all(snap, labels, density, one);
    const auto b = llp::propagate_all(snap, labels, density, eight);
    CHECK(a.label == b.label);
    CHECK(a.confidence == b.confidence);  // bitwise

    // density is worker-invariant too
    const auto d8 = llp::compute_density(snap, labels.labeled_ids(), cfg.t, cfg.tau, 8);
    CHECK(density.rho == d8.rho);
}

TEST_CASE("propagate_all with no unlabeled points is the identity", "[propagation]") {
    const auto m = oracle::random_unit_matrix(6, 4, 44);
    auto bank = bank_from(m);
    LabelState labels = LabelState::empty(6, 2);
    for (std::size_t i = 0; i < 6; ++i) labels.set_labeled(i, static_cast<std::int32_t>(i % 2));
    PropagationConfig cfg;
    const auto result = llp::propagate_all(bank.snapshot(), labels, {}, cfg);
    CHECK(result.label == labels.label);
    CHECK(result.confidence == labels.confidence);
}

TEST_CASE("propagation error paths", "[propagation]") {
    const auto m = oracle::random_unit_matrix(5, 4, 12);
    auto bank = bank_from(m);
    auto snap = bank.snapshot();
    PropagationConfig cfg;

    LabelState none = LabelState::empty(5, 2);
    CHECK_THROWS_AS(llp::propagate_naive(snap, none, cfg, 0), llp::PropagationError);

    LabelState some = LabelState::empty(5, 2);
    some.set_labeled(1, 0);
    CHECK_THROWS_AS(llp::propagate_naive(snap, some, cfg, 1), llp::ContractError);  // labeled query

    llp::DensityTable missing;  // no entries at all
    missing.rho_by_id.assign(5, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(llp::propagate_local(snap, some, missing, cfg, 0), llp::ContractError);
}

TEST_CASE("relabeling classes permutes the tally", "[propagation]") {
    const auto inst = oracle::random_instance(40, 6, 3, 12, 808);
    auto bank = bank_from(inst.vectors);
    auto snap = bank.snapshot();
    PropagationConfig cfg;
    cfg.k = 5;

    auto labels = labels_from(inst);
    const int perm[3] = {2, 0, 1};
    LabelState permuted = LabelState::empty(40, 3);
    for (std::size_t i = 0; i < 40; ++i)
        if (labels.is_labeled[i]) permuted.set_labeled(i, perm[labels.label[i]]);

    for (std::size_t query = 0; query < 40; ++query) {
        if (labels.is_labeled[query]) continue;
        const auto base = llp::propagate_naive(snap, labels, cfg, static_cast<std::uint32_t>(query));
        const auto mapped = llp::propagate_naive(snap, permuted, cfg, static_cast<std::uint32_t>(query));
        CHECK(mapped.winner == perm[base.winner]);
        for (int j = 0; j < 3; ++j) {
            CHECK(mapped.p[static_cast<std::size_t>(perm[j])] == base.p[static_cast<std::size_t>(j)]);
            CHECK(mapped.w[static_cast<std::size_t>(perm[j])] == base.w[static_cast<std::size_t>(j)]);
        }
    }
}

TEST_CASE("label state CSV round-trips", "[propagation]") {
    LabelState s = LabelState::empty(4, 3);
    s.set_labeled(1, 2);
    s.label[2] = 1;
    s.confidence[2] = 0.62591237189;
    const auto path = std::filesystem::temp_directory_path() / "llp_labels_roundtrip.csv";
    llp::save_label_state(s, path);
    const auto back = llp::load_label_state(path, 3);
    CHECK(back.label == s.label);
    CHECK(back.is_labeled == s.is_labeled);
    CHECK(back.confidence == s.confidence);
    CHECK(back.class_count == 3);
    std::filesystem::remove(path);
}
