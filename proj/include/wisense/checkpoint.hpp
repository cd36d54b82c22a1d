#pragma once

#include "wisense/layers.hpp"

#include <filesystem>
#include <map>
#include <string>

/// Named-tensor store. On disk every tensor is f32:
///   "WSLM" | u32 version | u32 count | per tensor:
///   u16 name_len | name | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] | payload
namespace wisense::ckpt {

inline constexpr std::uint32_t kVersion = 1;

using TensorMap = std::map<std::string, Matrix>;

std::string encode(const TensorMap& tensors);
TensorMap decode(const std::string& bytes);

void save(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load(const std::filesystem::path& path);

/// Snapshot of parameter values keyed by name.
TensorMap gather(const nn::ParamList& params);
/// Copy tensors into same-named parameters. Every parameter must be present
/// with a matching shape; extra tensors in `tensors` are ignored.
void scatter(const TensorMap& tensors, const nn::ParamList& params);

/// Round every value through f32, as a save/load cycle would.
void round_to_f32(const nn::ParamList& params);

}  // namespace wisense::ckpt
