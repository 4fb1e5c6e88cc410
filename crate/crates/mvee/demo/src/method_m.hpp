#pragma once
#include "inputs.hpp"

// Proposed method: predicated filter-sum, no branch on the data.
inline __attribute__((always_inline)) std::size_t run_M(const Inputs& in) {
    std::size_t sum = 0;
    for (std::size_t i = 0; i < in.n; ++i) {
        std::uint32_t v = in.values[i];
        sum += (v < in.threshold) ? v : 0;
    }
    return sum;
}
