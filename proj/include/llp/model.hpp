#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "llp/common.hpp"
#include "llp/io.hpp"
#include "llp/rng.hpp"

namespace llp {

inline constexpr char kNetMagic[9] = "LLPNET01";

struct MlpConfig {
    std::vector<std::uint32_t> layer_sizes;  // input, hidden..., trunk
    std::uint32_t embed_dim = 16;
    std::uint32_t class_count = 2;
};

// Activation record from one forward pass; everything backward() needs.
struct ForwardTape {
    std::vector<std::vector<double>> activations;      // post-ReLU, activations[0] is the input
    std::vector<std::vector<double>> pre_activations;  // per hidden layer, before the ReLU
    std::vector<double> pre_embed;                     // u, before normalization
    std::vector<double> embedding;                     // v = u / |u|
    std::vector<double> logits;
    double pre_norm = 0.0;
    bool degenerate = false;  // |u| vanished; v pinned to e1, zero gradient

    // Distance of the closest hidden unit to its ReLU kink. Finite-difference
    // oracles are only valid when this comfortably exceeds the probe step.
    double kink_margin() const {
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& layer : pre_activations)
            for (double h : layer) margin = std::min(margin, std::abs(h));
        return margin;
    }
};

// Small ReLU MLP trunk with two heads branching from the trunk output: an
// L2-normalized embedding head and a linear classification head. Forward and
// backward are exact and deterministic; there is no autodiff underneath.
class MlpNetwork {
public:
    MlpNetwork(MlpConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
        if (cfg_.layer_sizes.size() < 2) throw ConfigError("network needs at least input and trunk widths");
        for (auto w : cfg_.layer_sizes)
            if (w == 0) throw ConfigError("network layer widths must be positive");
        if (cfg_.embed_dim < 2) throw ConfigError("embedding dimension must be at least 2");
        if (cfg_.class_count < 1) throw ConfigError("network needs at least one class");
        build_offsets();
        params_.assign(param_count_, 0.0);
        Rng rng(seed, "net-init");
        for (std::size_t l = 0; l + 1 < cfg_.layer_sizes.size(); ++l)
            init_affine(trunk_weight_offset(l), cfg_.layer_sizes[l + 1], cfg_.layer_sizes[l], rng);
        init_affine(embed_offset_, cfg_.embed_dim, trunk_width(), rng);
        init_affine(class_offset_, cfg_.class_count, trunk_width(), rng);
    }

    const MlpConfig& config() const { return cfg_; }
    std::uint32_t input_dim() const { return cfg_.layer_sizes.front(); }
    std::uint32_t trunk_width() const { return cfg_.layer_sizes.back(); }
    std::uint32_t embed_dim() const { return cfg_.embed_dim; }
    std::uint32_t class_count() const { return cfg_.class_count; }
    std::size_t param_count() const { return param_count_; }

    std::span<const double> params() const { return params_; }
    std::span<double> mutable_params() { return params_; }

    ForwardTape forward(std::span<const double> x) const {
        if (x.size() != input_dim()) throw ConfigError("input dimension mismatch");
        ForwardTape tape;
        tape.activations.reserve(cfg_.layer_sizes.size());
        tape.activations.emplace_back(x.begin(), x.end());
        for (std::size_t l = 0; l + 1 < cfg_.layer_sizes.size(); ++l) {
            const auto& in = tape.activations.back();
            std::vector<double> out(cfg_.layer_sizes[l + 1]);
            affine(trunk_weight_offset(l), cfg_.layer_sizes[l + 1], cfg_.layer_sizes[l], in, out);
            tape.pre_activations.push_back(out);
            for (auto& v : out) v = v > 0.0 ? v : 0.0;
            tape.activations.push_back(std::move(out));
        }
        const auto& trunk = tape.activations.back();

        tape.pre_embed.resize(cfg_.embed_dim);
        affine(embed_offset_, cfg_.embed_dim, trunk_width(), trunk, tape.pre_embed);
        tape.embedding = tape.pre_embed;
        tape.pre_norm = l2_norm(std::span<const double>(tape.embedding));
        if (tape.pre_norm < 1e-12) {
            log_warning("degenerate embedding norm; falling back to the first basis vector");
            tape.degenerate = true;
            std::fill(tape.embedding.begin(), tape.embedding.end(), 0.0);
            tape.embedding[0] = 1.0;
        } else {
            for (auto& v : tape.embedding) v /= tape.pre_norm;
        }

        tape.logits.resize(cfg_.class_count);
        affine(class_offset_, cfg_.class_count, trunk_width(), trunk, tape.logits);
        return tape;
    }

    // Gradient of d_embedding . v + d_logits . logits w.r.t. the flat
    // parameter vector. The sphere normalization contributes (I - v v^T)/|u|
    // at the embedding head. Either cotangent may be empty (treated as zero).
    std::vector<double> backward(const ForwardTape& tape, std::span<const double> d_embedding,
                                 std::span<const double> d_logits) const {
        if (tape.activations.size() != cfg_.layer_sizes.size()) throw ContractError("tape does not match this network");
        if (!d_embedding.empty() && d_embedding.size() != cfg_.embed_dim) throw ContractError("bad embedding cotangent size");
        if (!d_logits.empty() && d_logits.size() != cfg_.class_count) throw ContractError("bad logits cotangent size");
        std::vector<double> grad(param_count_, 0.0);
        const auto& trunk = tape.activations.back();
        std::vector<double> d_trunk(trunk_width(), 0.0);

        if (!d_embedding.empty() && !tape.degenerate) {
            std::vector<double> du(cfg_.embed_dim);
            const double radial = dot(d_embedding, std::span<const double>(tape.embedding));
            for (std::size_t k = 0; k < du.size(); ++k)
                du[k] = (d_embedding[k] - radial * tape.embedding[k]) / tape.pre_norm;
            affine_backward(embed_offset_, cfg_.embed_dim, trunk_width(), trunk, du, grad, d_trunk);
        }
        if (!d_logits.empty())
            affine_backward(class_offset_, cfg_.class_count, trunk_width(), trunk, d_logits, grad, d_trunk);

        std::vector<double> upstream = std::move(d_trunk);
        for (std::size_t l = cfg_.layer_sizes.size() - 1; l-- > 0;) {
            const auto& out_act = tape.activations[l + 1];
            for (std::size_t r = 0; r < upstream.size(); ++r)
                if (out_act[r] <= 0.0) upstream[r] = 0.0;  // ReLU mask
            std::vector<double> next(cfg_.layer_sizes[l], 0.0);
            affine_backward(trunk_weight_offset(l), cfg_.layer_sizes[l + 1], cfg_.layer_sizes[l], tape.activations[l],
                            upstream, grad, next);
            upstream = std::move(next);
        }
        return grad;
    }

    double params_sq_norm() const {
        double acc = 0.0;
        for (double p : params_) acc += p * p;
        return acc;
    }

    void save(const std::filesystem::path& path) const {
        auto out = io::open_output(path);
        io::write_magic(out, kNetMagic);
        io::write_u64(out, cfg_.layer_sizes.size());
        for (auto w : cfg_.layer_sizes) io::write_u64(out, w);
        io::write_u64(out, cfg_.embed_dim);
        io::write_u64(out, cfg_.class_count);
        io::write_u64(out, params_.size());
        for (double p : params_) io::write_f64(out, p);
        if (!out) throw IoError("write failure on " + path.string());
    }

    static MlpNetwork load(const std::filesystem::path& path) {
        auto in = io::open_input(path);
        io::expect_magic(in, kNetMagic, path.string());
        MlpConfig cfg;
        const auto n_sizes = io::read_u64(in);
        cfg.layer_sizes.resize(n_sizes);
        for (auto& w : cfg.layer_sizes) w = static_cast<std::uint32_t>(io::read_u64(in));
        cfg.embed_dim = static_cast<std::uint32_t>(io::read_u64(in));
        cfg.class_count = static_cast<std::uint32_t>(io::read_u64(in));
        MlpNetwork net(cfg, 0);
        if (io::read_u64(in) != net.param_count()) throw IoError("parameter count mismatch in " + path.string());
        for (auto& p : net.params_) p = io::read_f64(in);
        return net;
    }

private:
    void build_offsets() {
        std::size_t off = 0;
        trunk_offsets_.clear();
        for (std::size_t l = 0; l + 1 < cfg_.layer_sizes.size(); ++l) {
            trunk_offsets_.push_back(off);
            off += std::size_t{cfg_.layer_sizes[l + 1]} * cfg_.layer_sizes[l] + cfg_.layer_sizes[l + 1];
        }
        embed_offset_ = off;
        off += std::size_t{cfg_.embed_dim} * trunk_width() + cfg_.embed_dim;
        class_offset_ = off;
        off += std::size_t{cfg_.class_count} * trunk_width() + cfg_.class_count;
        param_count_ = off;
    }

    std::size_t trunk_weight_offset(std::size_t l) const { return trunk_offsets_[l]; }

    void init_affine(std::size_t offset, std::size_t rows, std::size_t cols, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        for (std::size_t i = 0; i < rows * cols; ++i) params_[offset + i] = rng.uniform(-bound, bound);
        // biases stay zero
    }

    // y = W x + b with W row-major (rows x cols) at `offset`, b just after.
    void affine(std::size_t offset, std::size_t rows, std::size_t cols, std::span<const double> x,
                std::span<double> y) const {
        const double* w = params_.data() + offset;
        const double* b = w + rows * cols;
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = b[r];
            const double* wr = w + r * cols;
            for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
            y[r] = acc;
        }
    }

    // Accumulates dW = dy x^T and db = dy into `grad`, and W^T dy into `dx`.
    void affine_backward(std::size_t offset, std::size_t rows, std::size_t cols, std::span<const double> x,
                         std::span<const double> dy, std::span<double> grad, std::span<double> dx) const {
        const double* w = params_.data() + offset;
        double* gw = grad.data() + offset;
        double* gb = gw + rows * cols;
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = dy[r];
            const double* wr = w + r * cols;
            double* gwr = gw + r * cols;
            for (std::size_t c = 0; c < cols; ++c) {
                gwr[c] += g * x[c];
                dx[c] += g * wr[c];
            }
            gb[r] += g;
        }
    }

    MlpConfig cfg_;
    std::vector<std::size_t> trunk_offsets_;
    std::size_t embed_offset_ = 0;
    std::size_t class_offset_ = 0;
    std::size_t param_count_ = 0;
    std::vector<double> params_;
};

}  // namespace llp
