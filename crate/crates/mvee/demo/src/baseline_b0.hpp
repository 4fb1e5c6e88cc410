#pragma once
#include "inputs.hpp"

// Baseline: branch per row.
inline __attribute__((always_inline)) std::size_t run_B0(const Inputs& in) {
    std::size_t sum = 0;
    for (std::size_t i = 0; i < in.n; ++i) {
        if (in.values[i] < in.threshold) {
            sum += in.values[i];
        }
    }
    return sum;
}
