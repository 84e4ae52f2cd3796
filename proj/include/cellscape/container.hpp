#pragma once

#include "cellscape/cell_table.hpp"

#include <cstdint>
#include <filesystem>
#include <span>

namespace cellscape {

inline constexpr int kContainerVersion = 1;

// Cell container v1: a directory holding manifest.json plus one
// little-endian binary file per array, each guarded by a CRC32C.
void save_container(const CellTable& table, const std::filesystem::path& dir);
CellTable load_container(const std::filesystem::path& dir);

std::uint32_t crc32c(std::span<const std::byte> bytes);

}  // namespace cellscape
