#pragma once

#include <cstdint>
#include <filesystem>

#include "transukan/model.hpp"

namespace tukan {

inline constexpr char kCheckpointMagic[4] = {'T', 'U', 'K', 'N'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   "TUKN" | u8 version
///   u32 in_channels, n_classes, image_height, image_width, d_model, depth,
///       n_heads, grid_size, order | f64 range_lo, range_hi | u8 block_order
///   u32 tensor count, then per tensor: u32 rank, u64 dims[rank], f64 data
void save_checkpoint(const TransUKanModel& model, const std::filesystem::path& path);

/// Throws FormatError on a bad magic or version, CorruptionError on a
/// truncated or inconsistent file, IoError when unreadable.
TransUKanModel load_checkpoint(const std::filesystem::path& path);

/// As above, but additionally throws ConfigError when the stored config is
/// not `expected`.
TransUKanModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace tukan
