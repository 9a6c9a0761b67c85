#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "hupe/params.hpp"

namespace hupe {

inline constexpr std::string_view kCheckpointVersion = "hupe-ckpt-v1";

/// On-disk layout (all integers little-endian):
///
///   "hupe-ckpt-v1"            12 bytes, no terminator
///   u32 meta_len, meta bytes   UTF-8 JSON object (component kind, config)
///   u32 count
///   count x { u32 name_len, name bytes,
///             u32 ndim, ndim x i64 dims,
///             prod(dims) x f32 payload }
///
/// Entry order is preserved. Tensors of any floating dtype are written as
/// float32 and read back as float32.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    ParamTable entries;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hupe
