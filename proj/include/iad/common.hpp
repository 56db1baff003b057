#pragma once

#include <atomic>
#include <cstdint>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace iad {

inline constexpr const char* kVersion = "0.3.0";

/// Bad input or violated precondition. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing paths, unreadable config files. Also exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss during training. Carries the ids of the offending batch.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::vector<std::string> batch_ids)
        : std::runtime_error(what), batch_ids_(std::move(batch_ids)) {}

    const std::vector<std::string>& batch_ids() const noexcept { return batch_ids_; }

private:
    std::vector<std::string> batch_ids_;
};

namespace detail {
inline std::atomic<bool>& quiet_flag() {
    static std::atomic<bool> quiet{false};
    return quiet;
}
inline std::atomic<std::size_t>& warning_counter() {
    static std::atomic<std::size_t> count{0};
    return count;
}
}  // namespace detail

inline void set_quiet(bool quiet) { detail::quiet_flag() = quiet; }

inline std::size_t warning_count() { return detail::warning_counter().load(); }

inline void warn(std::string_view message) {
    ++detail::warning_counter();
    if (detail::quiet_flag()) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "[iad warn] " << message << '\n';
}

/// FNV-1a, 64 bit. Stable across platforms, unlike std::hash.
class Fnv1a {
public:
    Fnv1a& update(std::string_view bytes) {
        for (unsigned char c : bytes) {
            state_ ^= c;
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    std::uint64_t digest() const noexcept { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t value) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

/// Derives an independent stream seed from a base seed and a salt (splitmix64).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Dense row-major 2D array.
template <typename T>
struct Grid {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const noexcept { return data.size(); }
};

}  // namespace iad
