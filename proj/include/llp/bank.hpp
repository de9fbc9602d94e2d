#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "llp/common.hpp"
#include "llp/io.hpp"
#include "llp/rng.hpp"

namespace llp {

inline constexpr char kBankMagic[9] = "LLPBANK1";

// Read-only view of the bank at one point in time. Snapshots share storage
// until the bank is written to again, so repeated snapshot() calls between
// updates are cheap and compare equal.
template <class Scalar>
class BasicSnapshot {
public:
    BasicSnapshot() = default;
    BasicSnapshot(std::shared_ptr<const std::vector<Scalar>> data, std::size_t count, std::size_t dim)
        : data_(std::move(data)), count_(count), dim_(dim) {}

    std::size_t count() const { return count_; }
    std::size_t dim() const { return dim_; }
    bool empty() const { return count_ == 0; }

    std::span<const Scalar> row(std::size_t i) const { return {data_->data() + i * dim_, dim_}; }

    // Identity of the underlying buffer; used for stale-context detection.
    const void* buffer_id() const { return data_ ? static_cast<const void*>(data_->data()) : nullptr; }

    bool same_data(const BasicSnapshot& other) const { return buffer_id() == other.buffer_id(); }

    friend bool operator==(const BasicSnapshot& a, const BasicSnapshot& b) {
        if (a.count_ != b.count_ || a.dim_ != b.dim_) return false;
        if (a.buffer_id() == b.buffer_id()) return true;
        return a.data_ && b.data_ && *a.data_ == *b.data_;
    }

private:
    std::shared_ptr<const std::vector<Scalar>> data_;
    std::size_t count_ = 0;
    std::size_t dim_ = 0;
};

// Memory bank of running-average embeddings on the unit sphere. Single
// writer; concurrent readers go through snapshot(), which is taken on the
// writer thread. update() calls within one batch may come from parallel
// workers as long as each row is touched by at most one of them.
template <class Scalar>
class BasicBank {
public:
    BasicBank(std::size_t n, std::size_t d, std::uint64_t seed, double momentum = 0.5)
        : count_(n), dim_(d), momentum_(momentum), rows_(n * d) {
        if (n == 0) throw ConfigError("bank needs at least one row");
        if (d < 2) throw ConfigError("bank dimension must be at least 2");
        if (momentum < 0.0 || momentum > 1.0) throw ConfigError("bank momentum must lie in [0, 1]");
        Rng rng(seed, "bank-init");
        for (std::size_t i = 0; i < n; ++i) {
            auto r = mutable_row(i);
            double norm = 0.0;
            while (norm < 1e-12) {  // isotropic draw, re-drawn on the measure-zero degenerate case
                for (auto& x : r) x = static_cast<Scalar>(rng.gaussian());
                norm = normalize_in_place(r);
            }
        }
    }

    std::size_t count() const { return count_; }
    std::size_t dim() const { return dim_; }
    double momentum() const { return momentum_; }

    // row <- normalize(momentum * row + (1 - momentum) * fresh).
    // momentum 1 is an exact no-op; a vanishing blend falls back to `fresh`.
    void update(std::size_t index, std::span<const double> fresh) {
        if (index >= count_) throw IndexError("bank update index " + std::to_string(index) + " out of range");
        if (fresh.size() != dim_) throw ContractError("bank update dimension mismatch");
        if (momentum_ == 1.0) return;
        cache_.reset();
        auto r = mutable_row(index);
        for (std::size_t k = 0; k < dim_; ++k)
            r[k] = static_cast<Scalar>(momentum_ * static_cast<double>(r[k]) + (1.0 - momentum_) * fresh[k]);
        if (normalize_in_place(r) < 1e-12) {
            log_warning("degenerate bank update at row " + std::to_string(index) + "; keeping the fresh vector");
            for (std::size_t k = 0; k < dim_; ++k) r[k] = static_cast<Scalar>(fresh[k]);
            normalize_in_place(r);
        }
    }

    void set_row(std::size_t index, std::span<const double> value) {
        if (index >= count_) throw IndexError("bank row index out of range");
        cache_.reset();
        auto r = mutable_row(index);
        for (std::size_t k = 0; k < dim_; ++k) r[k] = static_cast<Scalar>(value[k]);
        normalize_in_place(r);
    }

    BasicSnapshot<Scalar> snapshot() const {
        if (!cache_) cache_ = std::make_shared<const std::vector<Scalar>>(rows_);
        return BasicSnapshot<Scalar>(cache_, count_, dim_);
    }

    void save(const std::filesystem::path& path) const {
        auto out = io::open_output(path);
        io::write_magic(out, kBankMagic);
        io::write_u64(out, count_);
        io::write_u64(out, dim_);
        for (Scalar v : rows_) io::write_f64(out, static_cast<double>(v));
        if (!out) throw IoError("write failure on " + path.string());
    }

    static BasicBank load(const std::filesystem::path& path, double momentum = 0.5) {
        auto m = io::load_matrix(path, kBankMagic);
        if (m.n == 0 || m.d < 2) throw IoError("bank file " + path.string() + " has invalid shape");
        BasicBank bank(Uninit{}, m.n, m.d, momentum);
        for (std::size_t i = 0; i < m.data.size(); ++i) bank.rows_[i] = static_cast<Scalar>(m.data[i]);
        return bank;
    }

private:
    struct Uninit {};
    BasicBank(Uninit, std::size_t n, std::size_t d, double momentum)
        : count_(n), dim_(d), momentum_(momentum), rows_(n * d) {}

    std::span<Scalar> mutable_row(std::size_t i) { return {rows_.data() + i * dim_, dim_}; }

    std::size_t count_;
    std::size_t dim_;
    double momentum_;
    std::vector<Scalar> rows_;
    mutable std::shared_ptr<const std::vector<Scalar>> cache_;
};

using EmbeddingBank = BasicBank<double>;
using BankSnapshot = BasicSnapshot<double>;

}  // namespace llp
