#include "rdns/checkpoint.hpp"

#include <algorithm>

#include "rdns/binary_io.hpp"
#include "rdns/errors.hpp"

namespace rdns {

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kCheckpointMagic);
  // nlohmann::json objects are std::map backed, so dump() is already key-sorted.
  const std::string text = ckpt.config.dump();
  w.u64(text.size());
  w.bytes(text);
  w.tensor_list(ckpt.trunk);
  w.tensor_list(ckpt.heads);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw ParseError("bad checkpoint magic", 0);
  }
  const std::size_t json_at = r.offset();
  const std::uint64_t len = r.u64();
  if (len > bytes.size()) throw ParseError("checkpoint config length exceeds file", json_at);
  const std::string_view text = r.bytes(static_cast<std::size_t>(len));
  Checkpoint c;
  try {
    c.config = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what(), json_at + 8 + e.byte);
  }
  c.trunk = r.tensor_list();
  c.heads = r.tensor_list();
  if (!r.at_end()) throw ParseError("trailing bytes after checkpoint", r.offset());
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::vector<Tensor> export_state(std::span<const StateRef> state) {
  std::vector<Tensor> out;
  out.reserve(state.size());
  for (const StateRef& s : state) {
    out.emplace_back(s.shape, std::vector<double>(s.value.begin(), s.value.end()));
  }
  return out;
}

void import_state(std::span<const StateRef> state, std::span<const Tensor> values) {
  if (state.size() != values.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(values.size()) +
                     " state tensors, model expects " + std::to_string(state.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (values[i].shape() != state[i].shape) {
      throw ShapeError("state '" + state[i].name + "' expects " + state[i].shape.str() +
                       ", checkpoint has " + values[i].shape().str());
    }
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    std::copy(values[i].values().begin(), values[i].values().end(), state[i].value.begin());
  }
}

}  // namespace rdns
