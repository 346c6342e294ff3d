#pragma once

// Raw tensor blobs for model components.
//
// A component `<name>` is stored as two files in a checkpoint directory:
//   <name>.bin   concatenated little-endian float32 values
//   <name>.json  {"dtype","byte_order","tensors":[{name,shape,offset,count}]}
// Parameters and buffers are both included; optimizer state is not.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <torch/torch.h>

#include "json.hpp"

namespace shmt::checkpoint {

inline constexpr int kSchemaVersion = 1;

void save_module(const torch::nn::Module& module, const std::filesystem::path& dir,
                 const std::string& name);

// Every tensor of `module` must be present with a matching shape.
void load_module(torch::nn::Module& module, const std::filesystem::path& dir,
                 const std::string& name);

// FNV-1a over tensor names, shapes and float32 bytes.
std::uint64_t weights_hash(const torch::nn::Module& module);
std::string hex(std::uint64_t value);
std::uint64_t fnv1a(std::string_view bytes);

std::uint64_t parameter_count(const torch::nn::Module& module);

// Writes to a temporary sibling and renames over the target.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& value);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace shmt::checkpoint
