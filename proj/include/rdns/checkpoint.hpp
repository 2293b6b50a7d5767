#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rdns/layers.hpp"
#include "rdns/tensor.hpp"

namespace rdns {

/// File layout: the magic "RDNS1", a u64 byte length, that many bytes of key-sorted JSON,
/// then two tensor lists (trunk state in layer order, head state in layer order).
struct Checkpoint {
  nlohmann::json config;
  std::vector<Tensor> trunk;
  std::vector<Tensor> heads;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::string_view kCheckpointMagic = "RDNS1";

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws ParseError (with byte offset) on a malformed or truncated buffer.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every state block (parameters and buffers) into tensors.
std::vector<Tensor> export_state(std::span<const StateRef> state);
/// Writes tensors back into the state; counts and shapes must match exactly.
void import_state(std::span<const StateRef> state, std::span<const Tensor> values);

}  // namespace rdns
