#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>

namespace llp {

// Error taxonomy. ConfigError maps to CLI exit code 2, everything else to 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct PropagationError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

inline void log_warning(const std::string& msg) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[llp] warning: " << msg << "\n";
}

template <class S, class T>
double dot(std::span<const S> a, std::span<const T> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <class S>
double l2_norm(std::span<const S> a) {
    double acc = 0.0;
    for (auto x : a) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

// Returns the norm before scaling; leaves the vector untouched when the norm
// is below `floor`.
template <class S>
double normalize_in_place(std::span<S> a, double floor = 1e-12) {
    const double n = l2_norm(std::span<const S>(a.data(), a.size()));
    if (n < floor) return n;
    for (auto& x : a) x = static_cast<S>(static_cast<double>(x) / n);
    return n;
}

}  // namespace llp
