#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "retvi/tensor.hpp"

namespace retvi {

// Single-file weight container: magic + format version, a structured-text
// header (key=value), then named tensors. Save -> load -> save is bytewise
// stable.
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::map<std::string, std::string> header;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Throws IncompatibleCheckpointError on a version mismatch, ParseError on a
// truncated or corrupt file, NotFoundError if the file cannot be opened.
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull);
// Order-sensitive digest over tensor names, shapes and payload bytes.
std::uint64_t tensors_checksum(const std::vector<std::pair<std::string, Tensor>>& tensors);

} // namespace retvi
