#pragma once
#include "inputs.hpp"

// Baseline: materialize qualifying positions, then aggregate them.
inline __attribute__((always_inline)) std::size_t run_B1(const Inputs& in) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < in.n; ++i) {
        in.scratch[k] = static_cast<std::uint32_t>(i);
        k += in.values[i] < in.threshold;
    }
    std::size_t sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
        sum += in.values[in.scratch[j]];
    }
    return sum;
}
