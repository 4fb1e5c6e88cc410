#pragma once
#include <cstddef>
#include <cstdint>
#include <vector>

struct Inputs {
    const std::uint32_t* values;
    std::size_t n;
    std::uint32_t threshold;
    std::uint32_t* scratch;
};
