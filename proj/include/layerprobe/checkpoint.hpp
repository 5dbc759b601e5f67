#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "layerprobe/model.hpp"

namespace layerprobe {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The file was written by a different format version.
class CheckpointVersionError : public CheckpointError {
public:
    CheckpointVersionError(std::uint32_t found, std::uint32_t supported);
    std::uint32_t found;
    std::uint32_t supported;
};

/// The trailing checksum does not match the file contents.
class CheckpointCorruptError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers little-endian):
///   "LPRB" | u32 version | u32 descriptor length | descriptor JSON
///   u32 tensor count, then per tensor:
///     u32 name length | name | u8 dtype (1 = f64) | u32 rank | u64 extents[rank] | payload
///   u64 FNV-1a checksum of every preceding byte
std::vector<std::uint8_t> checkpoint_bytes(const ModelGraph& model);
ModelGraph model_from_bytes(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_checkpoint(const std::filesystem::path& path);

/// Architecture and provenance as stored in the header.
std::string architecture_descriptor(const ModelGraph& model);

}  // namespace layerprobe
