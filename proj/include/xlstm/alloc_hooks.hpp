// Replacement global operator new/delete feeding memmeter. Include this
// header in exactly one translation unit of a binary; the definitions have
// external linkage and take effect program-wide. Each block carries a
// hidden size prefix so frees are accounted exactly.
#pragma once

#include <cstdlib>
#include <new>

#include "xlstm/memmeter.hpp"

namespace xlstm::memmeter::detail {

inline constexpr std::size_t prefix = 2 * sizeof(std::max_align_t);

inline void* metered_alloc(std::size_t n) {
    unsigned char* raw =
        static_cast<unsigned char*>(std::malloc(n + prefix));
    if (!raw) return nullptr;
    *reinterpret_cast<std::size_t*>(raw) = n;
    note_alloc(n);
    return raw + prefix;
}

inline void metered_free(void* p) noexcept {
    if (!p) return;
    unsigned char* raw = static_cast<unsigned char*>(p) - prefix;
    note_free(*reinterpret_cast<std::size_t*>(raw));
    std::free(raw);
}

struct Installer {
    Installer() { installed.store(true); }
};
inline Installer installer;

}  // namespace xlstm::memmeter::detail

void* operator new(std::size_t n) {
    void* p = xlstm::memmeter::detail::metered_alloc(n);
    if (!p) throw std::bad_alloc();
    return p;
}
void* operator new[](std::size_t n) { return ::operator new(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
    return xlstm::memmeter::detail::metered_alloc(n);
}
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept {
    return xlstm::memmeter::detail::metered_alloc(n);
}

void operator delete(void* p) noexcept {
    xlstm::memmeter::detail::metered_free(p);
}
void operator delete[](void* p) noexcept {
    xlstm::memmeter::detail::metered_free(p);
}
void operator delete(void* p, std::size_t) noexcept {
    xlstm::memmeter::detail::metered_free(p);
}
void operator delete[](void* p, std::size_t) noexcept {
    xlstm::memmeter::detail::metered_free(p);
}
void operator delete(void* p, const std::nothrow_t&) noexcept {
    xlstm::memmeter::detail::metered_free(p);
}
void operator delete[](void* p, const std::nothrow_t&) noexcept {
    xlstm::memmeter::detail::metered_free(p);
}
