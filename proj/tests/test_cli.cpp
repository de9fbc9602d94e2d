#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "llp/bank.hpp"
#include "llp/data.hpp"
#include "llp/io.hpp"
#include "llp/propagation.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = LLP_CLI_PATH;
const fs::path kFixtures = LLP_FIXTURE_DIR;

int run_cli(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("llp_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("train writes its artifacts and exits cleanly", "[cli]") {
    const auto dir = fresh_dir("train");
    const int code = run_cli("train --dataset blobs:q=3,n=200,spread=0.5,seed=1 --labels 0.1 --warmup 1 --epochs 2 "
                             "--t 10 --seed 1 --out " +
                             (dir / "run").string());
    CHECK(code == 0);
    CHECK(fs::exists(dir / "run" / "report.csv"));
    CHECK(fs::exists(dir / "run" / "summary.json"));
    CHECK(fs::exists(dir / "run" / "config.json"));
    CHECK(fs::exists(dir / "run" / "net_final.bin"));
    CHECK(fs::exists(dir / "run" / "bank_final.bin"));
    CHECK(fs::exists(dir / "run" / "labels_final.csv"));

    const auto report = slurp(dir / "run" / "report.csv");
    CHECK(report.starts_with("epoch,prop_accuracy,val_nn_accuracy"));
    CHECK(std::count(report.begin(), report.end(), '\n') >= 2);  // header + at least one epoch
    fs::remove_all(dir);
}

TEST_CASE("invalid invocations exit with code 2", "[cli]") {
    CHECK(run_cli("propagate") == 2);                      // missing required flags
    CHECK(run_cli("train --labels 7 --epochs 1") == 2);    // label fraction out of range
    CHECK(run_cli("definitely-not-a-command") == 2);
    CHECK(run_cli("") == 2);  // a subcommand is required
}

TEST_CASE("identical seeds give byte-identical reports", "[cli]") {
    const auto dir = fresh_dir("determinism");
    const std::string base = "train --dataset blobs:q=3,n=150,spread=0.5,seed=2 --labels 0.1 --warmup 1 --epochs 2 "
                             "--t 10 --seed 9 --workers 1 --out ";
    REQUIRE(run_cli(base + (dir / "a").string()) == 0);
    REQUIRE(run_cli(base + (dir / "b").string()) == 0);
    CHECK(slurp(dir / "a" / "report.csv") == slurp(dir / "b" / "report.csv"));
    CHECK(slurp(dir / "a" / "labels_final.csv") == slurp(dir / "b" / "labels_final.csv"));
    fs::remove_all(dir);
}

TEST_CASE("the config written next to a run reproduces it", "[cli]") {
    const auto dir = fresh_dir("config");
    REQUIRE(run_cli("train --dataset blobs:q=3,n=150,spread=0.4,seed=3 --labels 0.2 --warmup 1 --epochs 2 --t 10 "
                    "--seed 4 --out " +
                    (dir / "a").string()) == 0);
    // Rerun purely from the emitted config, overriding only the output dir.
    REQUIRE(run_cli("--config " + (dir / "a" / "config.json").string() + " train --out " + (dir / "b").string()) == 0);
    CHECK(slurp(dir / "a" / "report.csv") == slurp(dir / "b" / "report.csv"));
    fs::remove_all(dir);
}

TEST_CASE("propagate matches the committed oracle fixture", "[cli]") {
    const auto dir = fresh_dir("fixture");
    const auto bank = (kFixtures / "propagate60" / "bank.bin").string();
    const auto labels = (kFixtures / "propagate60" / "labels.csv").string();

    for (const std::string method : {"naive", "local"}) {
        const auto out = dir / (method + ".csv");
        REQUIRE(run_cli("propagate --bank " + bank + " --labels-file " + labels + " --method " + method +
                        " --out " + out.string()) == 0);
        const auto got = llp::load_label_state(out);
        const auto want = llp::load_label_state(kFixtures / "propagate60" / ("expected_" + method + ".csv"));
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got.label[i] == want.label[i]);
            CHECK(got.confidence[i] == Catch::Approx(want.confidence[i]).margin(1e-9));
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("propagate is the identity when everything is labeled", "[cli]") {
    const auto dir = fresh_dir("identity");
    llp::EmbeddingBank bank(10, 4, 5);
    bank.save(dir / "bank.bin");
    llp::LabelState s = llp::LabelState::empty(10, 2);
    for (std::size_t i = 0; i < 10; ++i) s.set_labeled(i, static_cast<std::int32_t>(i % 2));
    llp::save_label_state(s, dir / "labels.csv");

    REQUIRE(run_cli("propagate --bank " + (dir / "bank.bin").string() + " --labels-file " +
                    (dir / "labels.csv").string() + " --out " + (dir / "out.csv").string()) == 0);
    CHECK(slurp(dir / "labels.csv") == slurp(dir / "out.csv"));
    fs::remove_all(dir);
}

TEST_CASE("local propagation under symmetric densities equals naive", "[cli]") {
    // Four simplex anchors (equal densities by symmetry) plus two poles that
    // are equidistant from every anchor.
    const auto dir = fresh_dir("uniform");
    oracle::Matrix m;
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> v(4, -0.25);
        v[i] += 1.0;
        m.push_back(oracle::normalized(std::move(v)));
    }
    m.push_back({0.5, 0.5, 0.5, 0.5});
    m.push_back({-0.5, -0.5, -0.5, -0.5});
    llp::EmbeddingBank bank(6, 4, 0);
    for (std::size_t i = 0; i < 6; ++i) bank.set_row(i, m[i]);
    bank.save(dir / "bank.bin");

    llp::LabelState s = llp::LabelState::empty(6, 4);
    for (std::size_t i = 0; i < 4; ++i) s.set_labeled(i, static_cast<std::int32_t>(i));
    llp::save_label_state(s, dir / "labels.csv");

    const std::string common = "propagate --bank " + (dir / "bank.bin").string() + " --labels-file " +
                               (dir / "labels.csv").string() + " --t 3 --out ";
    REQUIRE(run_cli(common + (dir / "naive.csv").string() + " --method naive") == 0);
    REQUIRE(run_cli(common + (dir / "local.csv").string() + " --method local") == 0);
    const auto naive = llp::load_label_state(dir / "naive.csv");
    const auto local = llp::load_label_state(dir / "local.csv");
    CHECK(naive.label == local.label);
    for (std::size_t i = 0; i < naive.size(); ++i)
        CHECK(naive.confidence[i] == Catch::Approx(local.confidence[i]).margin(1e-12));
    fs::remove_all(dir);
}

TEST_CASE("propagate rejects mismatched inputs with exit 2", "[cli]") {
    const auto dir = fresh_dir("mismatch");
    llp::EmbeddingBank bank(8, 4, 5);
    bank.save(dir / "bank.bin");
    llp::LabelState s = llp::LabelState::empty(5, 2);  // wrong point count
    s.set_labeled(0, 0);
    llp::save_label_state(s, dir / "labels.csv");
    CHECK(run_cli("propagate --bank " + (dir / "bank.bin").string() + " --labels-file " +
                  (dir / "labels.csv").string() + " --out " + (dir / "out.csv").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("an untrained checkpoint scores at chance on label-free data", "[cli]") {
    const auto dir = fresh_dir("chance");
    // Features carry no label information: standard gaussians with
    // round-robin labels.
    llp::Dataset ds;
    ds.feature_dim = 3;
    ds.class_count = 4;
    std::mt19937_64 eng(17);
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
        const auto g = oracle::random_unit(eng, 3);
        for (double x : g) ds.features.push_back(2.0 * x);
        ds.true_labels.push_back(static_cast<std::int32_t>(i % 4));
        ds.split.push_back(i < n / 2 ? 0 : 1);
    }
    llp::save_dataset_csv(ds, dir / "data.csv");

    const std::string spec = "csv:path=" + (dir / "data.csv").string();
    REQUIRE(run_cli("train --dataset " + spec + " --labels 0.1 --warmup 0 --epochs 0 --seed 3 --out " +
                    (dir / "run").string()) == 0);
    REQUIRE(run_cli("eval --net " + (dir / "run" / "net_final.bin").string() + " --bank " +
                    (dir / "run" / "bank_final.bin").string() + " --dataset " + spec + " --labels-file " +
                    (dir / "run" / "labels_initial.csv").string() + " --out " + (dir / "eval.csv").string()) == 0);

    double nn = -1.0, softmax = -1.0;
    std::ifstream in(dir / "eval.csv");
    std::string line;
    while (std::getline(in, line)) {
        const auto fields = llp::io::split_csv_line(line);
        if (fields[0] == "nn_accuracy") nn = llp::io::parse_double(fields[1]);
        if (fields[0] == "softmax_accuracy") softmax = llp::io::parse_double(fields[1]);
    }
    // 3 sigma binomial band around 1/Q with 500 validation points
    const double sigma = std::sqrt(0.25 * 0.75 / 500.0);
    CHECK(nn > 0.25 - 3.0 * sigma);
    CHECK(nn < 0.25 + 3.0 * sigma);
    CHECK(softmax > 0.25 - 3.0 * sigma);
    CHECK(softmax < 0.25 + 3.0 * sigma);
    fs::remove_all(dir);
}

TEST_CASE("mds emits triangle coordinates for three points", "[cli]") {
    const auto dir = fresh_dir("mds");
    llp::EmbeddingBank bank(3, 4, 21);
    bank.save(dir / "bank.bin");
    REQUIRE(run_cli("mds --bank " + (dir / "bank.bin").string() + " --out " + (dir / "coords.csv").string()) == 0);
    const auto text = slurp(dir / "coords.csv");
    CHECK(text.starts_with("point_id,x,y\n"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    fs::remove_all(dir);
}

TEST_CASE("bench writes one median row per cell in a fixed order", "[cli]") {
    const auto dir = fresh_dir("bench");
    REQUIRE(run_cli("bench --n-list 400,800 --m 50 --d 8 --workers-list 1 --reps 3 --out " +
                    (dir / "bench.csv").string()) == 0);
    const auto text = slurp(dir / "bench.csv");
    CHECK(text.starts_with("n,m,d,precision,workers,sample,seconds\n"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * (3 + 1));
    const auto first = text.find("\n400,");
    const auto second = text.find("\n800,");
    CHECK(first != std::string::npos);
    CHECK(second > first);

    REQUIRE(run_cli("bench --n-list 300 --m 30 --d 8 --workers-list 1 --reps 1 --precision f32 --out " +
                    (dir / "bench32.csv").string()) == 0);
    CHECK(slurp(dir / "bench32.csv").find(",f32,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("a one-cell ablation equals a plain train and eval", "[cli]") {
    const auto dir = fresh_dir("ablate");
    const std::string data = "--dataset blobs:q=3,n=150,spread=0.5,seed=6 --labels 0.1 --warmup 1 --epochs 2 --t 10 ";
    REQUIRE(run_cli("ablate " + data + "--cells Top10wclw --seeds 5 --seed 5 --out " + (dir / "grid").string()) == 0);
    REQUIRE(run_cli("train " + data + "--seed 5 --out " + (dir / "run").string()) == 0);

    const auto ablation = slurp(dir / "grid" / "ablation.csv");
    REQUIRE(ablation.starts_with("model,Top10wclw\nnn_accuracy,"));
    const double cell_acc = llp::io::parse_double(ablation.substr(ablation.rfind(',') + 1,
                                                                  ablation.find_last_of('\n') - ablation.rfind(',') - 1));

    nlohmann::json summary;
    std::ifstream(dir / "run" / "summary.json") >> summary;
    CHECK(cell_acc == summary["final_val_nn_accuracy"].get<double>());
    fs::remove_all(dir);
}
