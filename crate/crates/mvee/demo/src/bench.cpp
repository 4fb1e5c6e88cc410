#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "baseline_b0.hpp"
#include "baseline_b1.hpp"
#include "method_m.hpp"
#include "mvee_marks.hpp"

MVEE_MARKS(M, const void*, std::size_t)
MVEE_MARKS(B0, const void*, std::size_t)
MVEE_MARKS(B1, const void*, std::size_t)

__attribute__((noinline)) std::size_t measure_M(const Inputs& in) {
    gen_begin_mark(M, const void*, &in);
    std::size_t res = run_M(in);
    gen_end_mark(M, std::size_t, res);
    return res;
}

__attribute__((noinline)) std::size_t measure_B0(const Inputs& in) {
    gen_begin_mark(B0, const void*, &in);
    std::size_t res = run_B0(in);
    gen_end_mark(B0, std::size_t, res);
    return res;
}

__attribute__((noinline)) std::size_t measure_B1(const Inputs& in) {
    gen_begin_mark(B1, const void*, &in);
    std::size_t res = run_B1(in);
    gen_end_mark(B1, std::size_t, res);
    return res;
}

template <typename F>
static double best_ms(F f, const Inputs& in, int reps, std::size_t& check) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        check += f(in);
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

int main(int argc, char** argv) {
    const char* out_path = argc > 1 ? argv[1] : "mvee-results.json";
    const std::size_t n = 1 << 18;
    std::vector<std::uint32_t> values(n), scratch(n);
    std::mt19937 rng(42);
    std::uniform_int_distribution<std::uint32_t> dist(0, 999);
    for (auto& v : values) v = dist(rng);

    const double selectivities[] = {0.01, 0.1, 0.25, 0.5, 0.75, 1.0};
    struct Entry { const char* section; double sel; double ms; };
    std::vector<Entry> entries;
    std::size_t check = 0;
    for (double sel : selectivities) {
        Inputs in{values.data(), n, static_cast<std::uint32_t>(sel * 1000), scratch.data()};
        entries.push_back({"M", sel, best_ms(measure_M, in, 5, check)});
        entries.push_back({"B0", sel, best_ms(measure_B0, in, 5, check)});
        entries.push_back({"B1", sel, best_ms(measure_B1, in, 5, check)});
    }

    std::FILE* f = std::fopen(out_path, "w");
    if (!f) {
        std::perror(out_path);
        return 1;
    }
    std::fprintf(f, "[\n");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Entry& e = entries[i];
        std::fprintf(f,
                     "  {\"section\": \"%s\", \"params\": {\"selectivity\": %g}, \"metric\": \"runtime\", "
                     "\"value\": %.6f, \"unit\": \"ms\"}%s\n",
                     e.section, e.sel, e.ms, i + 1 < entries.size() ? "," : "");
    }
    std::fprintf(f, "]\n");
    std::fclose(f);
    std::printf("checksum %zu\n", check);
    return 0;
}
