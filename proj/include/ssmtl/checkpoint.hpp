#pragma once

// Versioned binary container: magic, version, a JSON metadata block, then
// raw little-endian float64 arrays described by the metadata's array table.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmtl/autodiff.hpp"

namespace ssmtl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NamedArray {
    std::string name;
    ad::Shape shape;
    std::vector<double> data;
};

struct CheckpointFile {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& array(const std::string& name) const;
    bool has_array(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

}  // namespace ssmtl
