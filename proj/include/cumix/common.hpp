#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cumix {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<int64_t>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Artifact-integrity failures (bad magic, hash mismatch, truncation); the CLI
// maps these to their own exit code.
struct CheckpointError : IoError {
    using IoError::IoError;
};

[[noreturn]] inline void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
    throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

// FNV-1a, used for dataset digests and checkpoint spec hashes.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

// Worker-thread cap shared by all kernels. 0 means "decide from hardware",
// clamped by the CUM_THREADS environment variable when set.
void set_num_threads(int n);
int num_threads();

}  // namespace cumix
