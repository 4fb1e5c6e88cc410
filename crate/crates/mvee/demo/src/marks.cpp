#include <cstddef>

#define MVEE_DEFINE_MARKS(id)                                                          \
    extern "C" __attribute__((noinline)) void mvee_begin_##id(const void* p) {          \
        asm volatile("" : : "r"(p) : "memory");                                        \
    }                                                                                  \
    extern "C" __attribute__((noinline)) void mvee_end_##id(std::size_t r) {            \
        asm volatile("" : : "r"(r) : "memory");                                        \
    }

MVEE_DEFINE_MARKS(M)
MVEE_DEFINE_MARKS(B0)
MVEE_DEFINE_MARKS(B1)
