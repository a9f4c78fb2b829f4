#pragma once

// Named-tensor checkpoints: "MMN1", u32 tensor count, then per tensor
// u32 name length, UTF-8 name, u8 rank, u32 dims, f64 data. Little-endian.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmon/tensor.hpp"

namespace mmon::ag {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::string encode_checkpoint(const NamedTensors& tensors);
/// Throws FormatError on bad magic, truncation or trailing bytes.
NamedTensors decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& file, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& file);

std::string read_file_bytes(const std::filesystem::path& file);

}  // namespace mmon::ag
