#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsa {

// f64 everywhere by default; correctness tests require it. Define VSA_SCALAR_F32
// to build a float32 variant for speed experiments.
#ifdef VSA_SCALAR_F32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<long>;

inline long numel(const Shape& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape);

// Error taxonomy. Everything derives from std::runtime_error so the CLI can
// catch one type and emit a single machine-parsable line.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};
struct LoadError : std::runtime_error {
    explicit LoadError(const std::string& msg) : std::runtime_error("load error: " + msg) {}
};

// Worker-thread cap, read once from VSA_THREADS (default: hardware concurrency,
// capped at 8). Thread count never changes results: work is split into fixed
// index ranges and each output element is produced by exactly one worker with
// the same inner loop order.
int max_threads();

// Runs fn(begin, end) over [0, n) split into contiguous chunks. Serial when the
// job is small or only one thread is configured.
void parallel_for(long n, long grain, const std::function<void(long, long)>& fn);

}  // namespace vsa
