#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace chunkscope {

// Raw little-endian IEEE-754 binary32 arrays.
void write_f32(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count);

}  // namespace chunkscope
