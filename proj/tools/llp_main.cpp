// Experiment CLI: train / propagate / eval / ablate / mds / bench.
// Exit codes: 0 success, 2 configuration or usage error, 1 runtime failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "llp/llp.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

// Dataset grammar: name:key=value,key=value
//   blobs: q,n,spread,seed[,dim][,val]   rings: q,n,noise,seed[,val]
//   csv: path                            bin: path,labels
llp::Dataset parse_dataset(const std::string& spec, std::uint64_t default_seed) {
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    std::map<std::string, std::string> kv;
    if (colon != std::string::npos && colon + 1 < spec.size()) {
        for (const auto& pair : split(spec.substr(colon + 1), ',')) {
            const auto eq = pair.find('=');
            if (eq == std::string::npos) throw llp::ConfigError("bad dataset option '" + pair + "'");
            kv[pair.substr(0, eq)] = pair.substr(eq + 1);
        }
    }
    auto get_u = [&](const std::string& key, std::uint64_t fallback, bool required = false) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            if (required) throw llp::ConfigError("dataset spec is missing '" + key + "'");
            return fallback;
        }
        return static_cast<std::uint64_t>(llp::io::parse_int(it->second));
    };
    auto get_d = [&](const std::string& key, double fallback) {
        auto it = kv.find(key);
        return it == kv.end() ? fallback : llp::io::parse_double(it->second);
    };

    if (kind == "blobs") {
        return llp::make_blobs(static_cast<std::uint32_t>(get_u("q", 0, true)), get_u("n", 0, true),
                               get_d("spread", 0.5), get_u("seed", default_seed),
                               static_cast<std::uint32_t>(get_u("dim", 2)), get_d("val", 0.2));
    }
    if (kind == "rings") {
        return llp::make_rings(static_cast<std::uint32_t>(get_u("q", 0, true)), get_u("n", 0, true),
                               get_d("noise", 0.1), get_u("seed", default_seed), get_d("val", 0.2));
    }
    if (kind == "csv") {
        auto it = kv.find("path");
        if (it == kv.end()) throw llp::ConfigError("csv dataset needs path=");
        return llp::load_dataset_csv(it->second);
    }
    if (kind == "bin") {
        auto p = kv.find("path");
        auto l = kv.find("labels");
        if (p == kv.end() || l == kv.end()) throw llp::ConfigError("bin dataset needs path= and labels=");
        return llp::load_features_bin(p->second, l->second);
    }
    throw llp::ConfigError("unknown dataset kind '" + kind + "'");
}

llp::AblationCell parse_cell(const std::string& name) {
    llp::AblationCell cell;
    cell.name = name;
    if (name.rfind("Top", 0) != 0) throw llp::ConfigError("ablation cell must look like Top10wclw, got '" + name + "'");
    std::size_t pos = 3;
    std::size_t digits = 0;
    while (pos + digits < name.size() && std::isdigit(static_cast<unsigned char>(name[pos + digits]))) ++digits;
    if (digits == 0) throw llp::ConfigError("ablation cell is missing K: '" + name + "'");
    cell.k = static_cast<std::uint32_t>(llp::io::parse_int(name.substr(pos, digits)));
    pos += digits;
    while (pos < name.size()) {
        if (name.compare(pos, 3, "woc") == 0) {
            cell.use_confidence = false;
            pos += 3;
        } else if (name.compare(pos, 2, "wc") == 0) {
            cell.use_class_loss = true;
            pos += 2;
        } else if (name.compare(pos, 2, "lw") == 0) {
            cell.locally_weighted = true;
            pos += 2;
        } else {
            throw llp::ConfigError("bad ablation cell suffix in '" + name + "'");
        }
    }
    return cell;
}

llp::MlpNetwork build_network(const llp::ExperimentConfig& cfg, const llp::Dataset& ds) {
    llp::MlpConfig mcfg;
    mcfg.layer_sizes.push_back(ds.feature_dim);
    for (auto w : cfg.hidden_layers) mcfg.layer_sizes.push_back(w);
    mcfg.embed_dim = cfg.embed_dim;
    mcfg.class_count = ds.class_count;
    return llp::MlpNetwork(mcfg, cfg.seed);
}

struct TrainArtifacts {
    llp::TrainReport report;
    fs::path out_dir;
};

TrainArtifacts run_training(const llp::ExperimentConfig& cfg) {
    cfg.validate();
    llp::Dataset ds = parse_dataset(cfg.dataset, llp::derive_seed(cfg.seed, "dataset"));
    llp::LabelState labels = llp::mask_labels(ds, cfg.label_fraction, cfg.seed);
    if (cfg.unlabeled_fraction < 1.0)
        std::tie(ds, labels) = llp::apply_unlabeled_fraction(ds, labels, cfg.unlabeled_fraction, cfg.seed);

    llp::MlpNetwork net = build_network(cfg, ds);
    llp::EmbeddingBank bank(ds.train_ids().size(), cfg.embed_dim, cfg.seed);

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    llp::save_config(cfg, out / "config.json");
    llp::save_label_state(labels, out / "labels_initial.csv");

    llp::TrainSchedule sched = cfg.schedule;
    sched.seed = cfg.seed;
    llp::warmup(net, bank, ds, sched, cfg.propagation.tau);
    llp::TrainReport report = llp::train(net, bank, ds, labels, sched, cfg.propagation, out);

    {
        auto f = llp::io::open_output(out / "report.csv");
        f << report.to_csv();
    }
    nlohmann::json summary;
    summary["epochs_completed"] = report.epochs.size();
    summary["initial_prop_accuracy"] = report.initial_prop_accuracy;
    summary["lr_drop_epochs"] = report.lr_drop_epochs;
    summary["total_wall_time_s"] = report.total_wall_time_s;
    if (!report.epochs.empty()) {
        const auto& last = report.epochs.back();
        summary["final_prop_accuracy"] = last.prop_accuracy;
        summary["final_val_nn_accuracy"] = last.val_nn_accuracy;
        summary["final_val_softmax_accuracy"] = last.val_softmax_accuracy;
        summary["final_mean_confidence"] = last.mean_confidence;
        summary["final_aggregation_metric"] = last.aggregation_metric;
    }
    std::vector<double> epoch_times;
    for (const auto& e : report.epochs) epoch_times.push_back(e.wall_time_s);
    summary["per_epoch_wall_time_s"] = epoch_times;
    {
        auto f = llp::io::open_output(out / "summary.json");
        f << summary.dump(2) << '\n';
    }
    return {std::move(report), out};
}

void add_schedule_options(CLI::App* cmd, llp::ExperimentConfig& cfg) {
    cmd->add_option("--warmup", cfg.schedule.warmup_epochs, "IR warmup epochs");
    cmd->add_option("--epochs", cfg.schedule.max_epochs, "maximum training epochs");
    cmd->add_option("--lr", cfg.schedule.base_lr, "initial learning rate");
    cmd->add_option("--lr-drop-factor", cfg.schedule.lr_drop_factor, "divide LR by this on saturation");
    cmd->add_option("--momentum", cfg.schedule.sgd_momentum, "SGD momentum");
    cmd->add_option("--batch", cfg.schedule.batch_size, "mini-batch size");
    cmd->add_option("--weight-decay", cfg.schedule.weight_decay, "decoupled weight decay");
    cmd->add_option("--patience", cfg.schedule.patience, "epochs without improvement before an LR drop");
    cmd->add_option("--max-drops", cfg.schedule.max_drops, "maximum LR drops");
    cmd->add_option("--class-loss-scale", cfg.schedule.class_loss_scale, "weight of L_C against L_A");
    cmd->add_option("--confidence-floor", cfg.schedule.confidence_floor, "skip examples below this confidence");
    cmd->add_flag("--no-class-loss", [&cfg](std::size_t) { cfg.schedule.use_class_loss = false; },
                  "train the embedding head only");
    cmd->add_flag("--per-batch-propagation", cfg.schedule.per_batch_propagation,
                  "refresh batch pseudo-labels every batch (ablation)");
}

void add_propagation_options(CLI::App* cmd, llp::PropagationConfig& prop) {
    cmd->add_option("--k", prop.k, "labeled voters per query");
    cmd->add_option("--t", prop.t, "density neighborhood size");
    cmd->add_option("--tau", prop.tau, "softmax temperature");
    cmd->add_option("--method", [&prop](const std::vector<std::string>& vals) {
        if (vals.back() == "naive") prop.locally_weighted = false;
        else if (vals.back() == "local") prop.locally_weighted = true;
        else return false;
        return true;
    }, "propagation rule: naive | local")->expected(1);
    cmd->add_flag("--no-confidence", [&prop](std::size_t) { prop.use_confidence = false; },
                  "do not weight losses by pseudo-label confidence");
    cmd->add_flag("--density-labeled-only", prop.density_pool_labeled_only,
                  "estimate density over labeled points only");
    cmd->add_flag("--density-include-self", prop.density_include_self, "include self in the density neighborhood");
}

int do_train(llp::ExperimentConfig cfg) {
    const auto arts = run_training(cfg);
    std::cout << "wrote " << (arts.out_dir / "report.csv").string() << " (" << arts.report.epochs.size()
              << " epochs)\n";
    return 0;
}

int do_propagate(const std::string& bank_file, const std::string& labels_file, const std::string& out_file,
                 llp::PropagationConfig prop) {
    const auto bank = llp::EmbeddingBank::load(bank_file);
    const auto labels = llp::load_label_state(labels_file);
    if (labels.size() != bank.count())
        throw llp::ConfigError("label state has " + std::to_string(labels.size()) + " points but the bank has " +
                               std::to_string(bank.count()));
    const auto snapshot = bank.snapshot();
    const auto result = llp::propagation_pass(snapshot, labels, prop, 0);
    llp::save_label_state(result, out_file);
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

int do_eval(const std::string& net_file, const std::string& bank_file, const std::string& dataset_spec,
            const std::string& labels_file, const std::string& out_file, bool pool_all, std::uint64_t seed) {
    const auto net = llp::MlpNetwork::load(net_file);
    const auto bank = llp::EmbeddingBank::load(bank_file);
    const auto ds = parse_dataset(dataset_spec, llp::derive_seed(seed, "dataset"));
    const auto labels = llp::load_label_state(labels_file, ds.class_count);
    const auto report = llp::evaluate_model(net, bank.snapshot(), ds, labels, pool_all);

    auto f = llp::io::open_output(out_file);
    f << "metric,value\n";
    f << "nn_accuracy," << llp::io::format_double(report.nn_accuracy) << '\n';
    f << "softmax_accuracy," << llp::io::format_double(report.softmax_accuracy) << '\n';
    f << "mean_aggregation," << llp::io::format_double(report.mean_agg) << '\n';
    for (std::size_t c = 0; c < report.per_class_agg.size(); ++c)
        f << "aggregation_class_" << c << ',' << llp::io::format_double(report.per_class_agg[c]) << '\n';
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

int do_mds(const std::string& bank_file, const std::string& out_file, std::string ids_arg, std::size_t first,
           std::size_t sample, std::uint64_t seed) {
    const auto bank = llp::EmbeddingBank::load(bank_file);
    std::vector<std::uint32_t> ids;
    if (!ids_arg.empty()) {
        for (const auto& tok : split(ids_arg, ','))
            ids.push_back(static_cast<std::uint32_t>(llp::io::parse_int(tok)));
    } else if (sample > 0) {
        std::vector<std::uint32_t> all(bank.count());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
        llp::Rng rng(seed, "mds-sample");
        rng.shuffle(all);
        all.resize(std::min(sample, all.size()));
        std::sort(all.begin(), all.end());
        ids = std::move(all);
    } else {
        const std::size_t n = std::min(first ? first : bank.count(), bank.count());
        for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<std::uint32_t>(i));
    }
    if (ids.size() > 2000) llp::log_warning("mds on " + std::to_string(ids.size()) + " points will be slow");

    const auto coords = llp::mds_coords(bank.snapshot(), ids);
    auto f = llp::io::open_output(out_file);
    f << "point_id,x,y\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        f << ids[i] << ',' << llp::io::format_double(coords[i][0]) << ',' << llp::io::format_double(coords[i][1])
          << '\n';
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

int do_ablate(llp::ExperimentConfig cfg, const std::string& cells_arg, const std::string& seeds_arg) {
    cfg.validate();
    std::vector<llp::AblationCell> cells;
    for (const auto& name : split(cells_arg, ';'))
        if (!name.empty()) cells.push_back(parse_cell(name));
    std::vector<std::uint64_t> seeds;
    for (const auto& tok : split(seeds_arg, ','))
        if (!tok.empty()) seeds.push_back(static_cast<std::uint64_t>(llp::io::parse_int(tok)));
    if (seeds.empty()) seeds.push_back(cfg.seed);

    llp::Dataset ds = parse_dataset(cfg.dataset, llp::derive_seed(cfg.seed, "dataset"));
    llp::LabelState labels = llp::mask_labels(ds, cfg.label_fraction, cfg.seed);
    if (cfg.unlabeled_fraction < 1.0)
        std::tie(ds, labels) = llp::apply_unlabeled_fraction(ds, labels, cfg.unlabeled_fraction, cfg.seed);

    const auto results = llp::run_ablation_grid(ds, labels, cfg.schedule, cfg.propagation, cells, seeds);

    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    {
        auto f = llp::io::open_output(out / "ablation.csv");
        f << llp::ablation_to_csv(results);
    }
    {
        auto f = llp::io::open_output(out / "ablation_runs.csv");
        f << llp::ablation_runs_to_csv(results, seeds);
    }
    std::cout << "wrote " << (out / "ablation.csv").string() << "\n";
    return 0;
}

template <class Scalar>
double time_propagation_pass(const llp::BasicBank<Scalar>& bank, const llp::LabelState& labels,
                             const llp::PropagationConfig& cfg) {
    const auto snapshot = bank.snapshot();
    const auto labeled = labels.labeled_ids();
    const auto start = std::chrono::steady_clock::now();
    auto density = llp::compute_density(snapshot, labeled, cfg.t, cfg.tau, cfg.workers);
    auto result = llp::propagate_all(snapshot, labels, density, cfg);
    const auto stop = std::chrono::steady_clock::now();
    if (result.label.empty()) throw llp::Error("unreachable");
    return std::chrono::duration<double>(stop - start).count();
}

int do_bench(const std::string& n_list, std::size_t m, std::size_t d, const std::string& workers_list,
             std::size_t reps, const std::string& out_file, const std::string& precision, std::uint64_t seed,
             const llp::PropagationConfig& base) {
    std::vector<std::size_t> ns;
    for (const auto& tok : split(n_list, ',')) ns.push_back(static_cast<std::size_t>(llp::io::parse_int(tok)));
    std::vector<unsigned> workers;
    for (const auto& tok : split(workers_list, ',')) workers.push_back(static_cast<unsigned>(llp::io::parse_int(tok)));
    if (precision != "f64" && precision != "f32") throw llp::ConfigError("precision must be f64 or f32");

    auto f = llp::io::open_output(out_file);
    f << "n,m,d,precision,workers,sample,seconds\n";
    for (std::size_t n : ns) {
        if (m >= n) throw llp::ConfigError("bench needs m < n");
        llp::LabelState labels = llp::LabelState::empty(n, 10);
        for (std::size_t i = 0; i < m; ++i) labels.set_labeled(i, static_cast<std::int32_t>(i % 10));

        llp::PropagationConfig cfg = base;
        for (unsigned w : workers) {
            cfg.workers = w;
            std::vector<double> times;
            for (std::size_t rep = 0; rep < reps; ++rep) {
                double seconds = 0.0;
                if (precision == "f32") {
                    llp::BasicBank<float> bank(n, d, seed);
                    seconds = time_propagation_pass(bank, labels, cfg);
                } else {
                    llp::EmbeddingBank bank(n, d, seed);
                    seconds = time_propagation_pass(bank, labels, cfg);
                }
                times.push_back(seconds);
                f << n << ',' << m << ',' << d << ',' << precision << ',' << w << ",rep" << rep << ','
                  << llp::io::format_double(seconds) << '\n';
            }
            std::sort(times.begin(), times.end());
            const double median = times.size() % 2 ? times[times.size() / 2]
                                                   : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
            f << n << ',' << m << ',' << d << ',' << precision << ',' << w << ",median,"
              << llp::io::format_double(median) << '\n';
        }
    }
    std::cout << "wrote " << out_file << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    // Pre-scan for --config so CLI flags can override file values.
    llp::ExperimentConfig cfg;
    try {
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config") cfg = llp::load_config(argv[i + 1]);
    } catch (const llp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"Local label propagation over a learned unit-sphere embedding"};
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("--config", config_file, "JSON config file; command-line flags override it")->expected(1);

    unsigned workers = cfg.schedule.workers;
    std::optional<unsigned> knn_workers;
    app.add_option("--workers", workers, "worker threads for batch evaluation and propagation");
    app.add_option("--knn-workers", knn_workers, "worker threads for knn/density/propagation only");

    auto* train_cmd = app.add_subcommand("train", "run warmup + LLP training");
    train_cmd->add_option("--dataset", cfg.dataset, "dataset spec, e.g. blobs:q=4,n=5000,spread=0.5,seed=1");
    train_cmd->add_option("--labels", cfg.label_fraction, "labeled fraction p of the training split");
    train_cmd->add_option("--unlabeled", cfg.unlabeled_fraction, "kept fraction q of the training split");
    train_cmd->add_option("--out", cfg.out_dir, "output directory");
    train_cmd->add_option("--seed", cfg.seed, "experiment seed");
    train_cmd->add_option("--embed-dim", cfg.embed_dim, "embedding dimensionality D");
    train_cmd->add_option("--hidden", cfg.hidden_layers, "trunk widths, e.g. --hidden 64 64 32");
    add_schedule_options(train_cmd, cfg);
    add_propagation_options(train_cmd, cfg.propagation);

    auto* prop_cmd = app.add_subcommand("propagate", "pseudo-label a bank/labels pair");
    std::string bank_file, labels_file, out_file = "pseudo_labels.csv";
    prop_cmd->add_option("--bank", bank_file, "bank file (LLPBANK1)")->required();
    prop_cmd->add_option("--labels-file", labels_file, "label state CSV")->required();
    prop_cmd->add_option("--out", out_file, "output CSV");
    add_propagation_options(prop_cmd, cfg.propagation);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string net_file, eval_out = "eval.csv";
    bool pool_all = false;
    eval_cmd->add_option("--net", net_file, "network checkpoint (LLPNET01)")->required();
    eval_cmd->add_option("--bank", bank_file, "bank file")->required();
    eval_cmd->add_option("--dataset", cfg.dataset, "dataset spec")->required();
    eval_cmd->add_option("--labels-file", labels_file, "label state CSV")->required();
    eval_cmd->add_option("--out", eval_out, "output CSV");
    eval_cmd->add_option("--seed", cfg.seed, "seed used to regenerate the dataset");
    eval_cmd->add_flag("--pool-all", pool_all, "nearest-neighbor pool includes pseudo-labeled points");

    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
    std::string cells = "Top10wclw";
    std::string seeds_arg;
    ablate_cmd->add_option("--dataset", cfg.dataset, "dataset spec");
    ablate_cmd->add_option("--labels", cfg.label_fraction, "labeled fraction p");
    ablate_cmd->add_option("--unlabeled", cfg.unlabeled_fraction, "kept fraction q");
    ablate_cmd->add_option("--out", cfg.out_dir, "output directory");
    ablate_cmd->add_option("--seed", cfg.seed, "base seed");
    ablate_cmd->add_option("--cells", cells, "semicolon-separated cell names, e.g. Top10wclw;Top50woc");
    ablate_cmd->add_option("--seeds", seeds_arg, "comma-separated seeds (default: --seed)");
    add_schedule_options(ablate_cmd, cfg);
    add_propagation_options(ablate_cmd, cfg.propagation);

    auto* mds_cmd = app.add_subcommand("mds", "2-D classical MDS coordinates of bank rows");
    std::string ids_arg, mds_out = "mds.csv";
    std::size_t first = 0, sample = 0;
    mds_cmd->add_option("--bank", bank_file, "bank file")->required();
    mds_cmd->add_option("--out", mds_out, "output CSV");
    mds_cmd->add_option("--ids", ids_arg, "comma-separated point ids");
    mds_cmd->add_option("--first", first, "use the first N points");
    mds_cmd->add_option("--sample", sample, "use a seeded sample of N points");
    mds_cmd->add_option("--seed", cfg.seed, "sampling seed");

    auto* bench_cmd = app.add_subcommand("bench", "propagation scaling benchmark");
    std::string n_list = "10000,20000,40000,80000", workers_list = "1,4", bench_out = "bench.csv",
                precision = "f64";
    std::size_t bench_m = 1000, bench_d = 16, reps = 5;
    bench_cmd->add_option("--n-list", n_list, "comma-separated bank sizes");
    bench_cmd->add_option("--m", bench_m, "labeled point count");
    bench_cmd->add_option("--d", bench_d, "embedding dimensionality");
    bench_cmd->add_option("--workers-list", workers_list, "comma-separated worker counts");
    bench_cmd->add_option("--reps", reps, "repetitions per cell (median reported)");
    bench_cmd->add_option("--out", bench_out, "output CSV");
    bench_cmd->add_option("--precision", precision, "f64 | f32 bank storage");
    bench_cmd->add_option("--seed", cfg.seed, "bank seed");
    add_propagation_options(bench_cmd, cfg.propagation);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        cfg.schedule.workers = workers;
        cfg.propagation.workers = knn_workers.value_or(workers);
        if (train_cmd->parsed()) return do_train(cfg);
        if (prop_cmd->parsed()) return do_propagate(bank_file, labels_file, out_file, cfg.propagation);
        if (eval_cmd->parsed()) return do_eval(net_file, bank_file, cfg.dataset, labels_file, eval_out, pool_all, cfg.seed);
        if (ablate_cmd->parsed()) return do_ablate(cfg, cells, seeds_arg);
        if (mds_cmd->parsed()) return do_mds(bank_file, mds_out, ids_arg, first, sample, cfg.seed);
        if (bench_cmd->parsed()) return do_bench(n_list, bench_m, bench_d, workers_list, reps, bench_out, precision,
                                                 cfg.seed, cfg.propagation);
    } catch (const llp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
