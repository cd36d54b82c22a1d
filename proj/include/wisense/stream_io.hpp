#pragma once

#include "wisense/channel.hpp"

#include <filesystem>

namespace wisense::io {

/// Binary CSI stream layout (little-endian):
///   "CSIS" | u32 version=1 | u32 T | u32 n_links | u32 n_subcarriers |
///   f64 packet_rate | u64 seed | T*n_links*n_subcarriers (f32 re, f32 im)
/// Samples are row-major [t][link][subcarrier].
inline constexpr std::uint32_t kCsisVersion = 1;

void write_csi_stream(const std::filesystem::path& path, const synth::CsiStream& stream);
synth::CsiStream read_csi_stream(const std::filesystem::path& path);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace wisense::io
