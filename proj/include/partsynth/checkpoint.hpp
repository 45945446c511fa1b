#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace partsynth {

/// Container layout: 8-byte magic, little-endian uint32 header length, JSON
/// header, then the float32 little-endian payload of every tensor back to
/// back. The header lists {name, shape, offset} per tensor next to
/// format_version, kind and the model's own metadata (R, d, stage, config).
inline constexpr std::string_view kCheckpointMagic{"PSCKPT\0\1", 8};
inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  std::string kind() const { return header.value("kind", ""); }
};

/// Serializes all parameters and buffers of `module` under `kind`. Keys of
/// `meta` are copied into the header.
std::string encode_checkpoint(std::string_view kind, const nlohmann::json& meta, const torch::nn::Module& module);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, std::string_view kind, const nlohmann::json& meta,
                     const torch::nn::Module& module);
/// Throws Format on a bad container or a different format_version, and
/// WrongModel when `expected_kind` is non-empty and does not match.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_kind = {});

/// Copies tensors into the module's parameters and buffers by name; every
/// module entry must be present with the same shape.
void restore_module(torch::nn::Module& module, const Checkpoint& ckpt);

}  // namespace partsynth
