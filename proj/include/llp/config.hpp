#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "llp/common.hpp"
#include "llp/propagation.hpp"
#include "llp/trainer.hpp"

namespace llp {

// Everything one experiment run needs; serializes losslessly to JSON so the
// copy written next to the outputs reproduces the run exactly.
struct ExperimentConfig {
    std::string dataset = "blobs:q=4,n=2000,spread=0.5,seed=1";
    double label_fraction = 0.1;
    double unlabeled_fraction = 1.0;
    PropagationConfig propagation;
    TrainSchedule schedule;
    std::vector<std::uint32_t> hidden_layers = {64, 64, 32};  // trunk widths after the input
    std::uint32_t embed_dim = 16;
    std::string out_dir = "run";
    std::uint64_t seed = 1;

    void validate() const {
        if (label_fraction <= 0.0 || label_fraction > 1.0) throw ConfigError("label fraction must lie in (0, 1]");
        if (unlabeled_fraction <= 0.0 || unlabeled_fraction > 1.0)
            throw ConfigError("unlabeled fraction must lie in (0, 1]");
        if (hidden_layers.empty()) throw ConfigError("network needs at least one trunk layer");
        schedule.validate();
    }
};

inline void to_json(nlohmann::json& j, const PropagationConfig& c) {
    j = nlohmann::json{{"k", c.k},
                       {"t", c.t},
                       {"tau", c.tau},
                       {"locally_weighted", c.locally_weighted},
                       {"use_confidence", c.use_confidence},
                       {"density_pool_labeled_only", c.density_pool_labeled_only},
                       {"density_include_self", c.density_include_self},
                       {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, PropagationConfig& c) {
    c.k = j.value("k", c.k);
    c.t = j.value("t", c.t);
    c.tau = j.value("tau", c.tau);
    c.locally_weighted = j.value("locally_weighted", c.locally_weighted);
    c.use_confidence = j.value("use_confidence", c.use_confidence);
    c.density_pool_labeled_only = j.value("density_pool_labeled_only", c.density_pool_labeled_only);
    c.density_include_self = j.value("density_include_self", c.density_include_self);
    c.workers = j.value("workers", c.workers);
}

inline void to_json(nlohmann::json& j, const TrainSchedule& s) {
    j = nlohmann::json{{"warmup_epochs", s.warmup_epochs},
                       {"base_lr", s.base_lr},
                       {"lr_drop_factor", s.lr_drop_factor},
                       {"sgd_momentum", s.sgd_momentum},
                       {"batch_size", s.batch_size},
                       {"weight_decay", s.weight_decay},
                       {"max_epochs", s.max_epochs},
                       {"patience", s.patience},
                       {"max_drops", s.max_drops},
                       {"seed", s.seed},
                       {"workers", s.workers},
                       {"use_class_loss", s.use_class_loss},
                       {"class_loss_scale", s.class_loss_scale},
                       {"confidence_floor", s.confidence_floor},
                       {"per_batch_propagation", s.per_batch_propagation}};
}

inline void from_json(const nlohmann::json& j, TrainSchedule& s) {
    s.warmup_epochs = j.value("warmup_epochs", s.warmup_epochs);
    s.base_lr = j.value("base_lr", s.base_lr);
    s.lr_drop_factor = j.value("lr_drop_factor", s.lr_drop_factor);
    s.sgd_momentum = j.value("sgd_momentum", s.sgd_momentum);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.max_epochs = j.value("max_epochs", s.max_epochs);
    s.patience = j.value("patience", s.patience);
    s.max_drops = j.value("max_drops", s.max_drops);
    s.seed = j.value("seed", s.seed);
    s.workers = j.value("workers", s.workers);
    s.use_class_loss = j.value("use_class_loss", s.use_class_loss);
    s.class_loss_scale = j.value("class_loss_scale", s.class_loss_scale);
    s.confidence_floor = j.value("confidence_floor", s.confidence_floor);
    s.per_batch_propagation = j.value("per_batch_propagation", s.per_batch_propagation);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"dataset", c.dataset},
                       {"label_fraction", c.label_fraction},
                       {"unlabeled_fraction", c.unlabeled_fraction},
                       {"propagation", c.propagation},
                       {"schedule", c.schedule},
                       {"hidden_layers", c.hidden_layers},
                       {"embed_dim", c.embed_dim},
                       {"out_dir", c.out_dir},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.dataset = j.value("dataset", c.dataset);
    c.label_fraction = j.value("label_fraction", c.label_fraction);
    c.unlabeled_fraction = j.value("unlabeled_fraction", c.unlabeled_fraction);
    if (j.contains("propagation")) j.at("propagation").get_to(c.propagation);
    if (j.contains("schedule")) j.at("schedule").get_to(c.schedule);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.seed = j.value("seed", c.seed);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad config file " + path.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    j.get_to(cfg);
    return cfg;
}

inline void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    auto out = io::open_output(path);
    nlohmann::json j = cfg;
    out << j.dump(2) << '\n';
}

}  // namespace llp
