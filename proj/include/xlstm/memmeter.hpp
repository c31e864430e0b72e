// Process-wide heap meter fed by the replacement operator new/delete in
// alloc_hooks.hpp. Binaries that want measured peak-allocation numbers
// include that header in exactly one translation unit; everything else
// reads zeros.
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>

namespace xlstm::memmeter {

inline std::atomic<std::uint64_t> live_bytes{0};
inline std::atomic<std::uint64_t> peak_bytes{0};
inline std::atomic<std::uint64_t> alloc_count{0};
inline std::atomic<bool> installed{false};

inline void note_alloc(std::size_t n) {
    const std::uint64_t now =
        live_bytes.fetch_add(n, std::memory_order_relaxed) + n;
    std::uint64_t prev = peak_bytes.load(std::memory_order_relaxed);
    while (now > prev &&
           !peak_bytes.compare_exchange_weak(prev, now,
                                             std::memory_order_relaxed)) {
    }
    alloc_count.fetch_add(1, std::memory_order_relaxed);
}

inline void note_free(std::size_t n) {
    live_bytes.fetch_sub(n, std::memory_order_relaxed);
}

inline void reset_peak() {
    peak_bytes.store(live_bytes.load(std::memory_order_relaxed),
                     std::memory_order_relaxed);
}

inline std::uint64_t peak() {
    return peak_bytes.load(std::memory_order_relaxed);
}
inline std::uint64_t live() {
    return live_bytes.load(std::memory_order_relaxed);
}
inline std::uint64_t allocations() {
    return alloc_count.load(std::memory_order_relaxed);
}

}  // namespace xlstm::memmeter
