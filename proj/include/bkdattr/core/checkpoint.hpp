#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bkdattr/core/tensor.hpp"

namespace bkd {

// Flat container of named tensors.
//
// Layout (all integers little-endian):
//   magic "BKDT" | u32 version | u32 count |
//   count x { u32 name_len | name bytes | u8 dtype (0 = f32) | u32 ndim |
//             ndim x u64 dim | numel x f32 payload }
inline constexpr char kCheckpointMagic[4] = {'B', 'K', 'D', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace bkd
