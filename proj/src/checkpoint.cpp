#include "partsynth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"

namespace partsynth {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is written in native little-endian order");

namespace {

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : module.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

}  // namespace

std::string encode_checkpoint(std::string_view kind, const nlohmann::json& meta, const torch::nn::Module& module) {
  nlohmann::json header = meta.is_object() ? meta : nlohmann::json::object();
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = std::string(kind);
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, tensor] : named_state(module)) {
    auto t = tensor.detach().to(torch::kFloat32).contiguous();
    entries.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  header["tensors"] = entries;
  const std::string text = header.dump();
  std::string out(kCheckpointMagic);
  const auto len = static_cast<std::uint32_t>(text.size());
  char len_bytes[4];
  std::memcpy(len_bytes, &len, 4);
  out.append(len_bytes, 4);
  out += text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() + 4 || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    fail(ErrorCode::Format, "not a partsynth checkpoint");
  std::uint32_t len = 0;
  std::memcpy(&len, bytes.data() + kCheckpointMagic.size(), 4);
  const std::size_t start = kCheckpointMagic.size() + 4;
  if (bytes.size() < start + len) fail(ErrorCode::Format, "checkpoint header truncated");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(bytes.substr(start, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (ck.header.value("format_version", -1) != kCheckpointFormatVersion)
    fail(ErrorCode::Format, "unsupported checkpoint format_version " + ck.header.value("format_version", nlohmann::json()).dump());
  const std::string_view payload = bytes.substr(start + len);
  try {
    for (const auto& e : ck.header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      std::int64_t count = 1;
      for (auto s : shape) count *= s;
      const auto nbytes = static_cast<std::size_t>(count) * sizeof(float);
      if (offset + nbytes > payload.size()) fail(ErrorCode::Format, "checkpoint payload truncated");
      auto t = torch::empty(shape, torch::kFloat32);
      std::memcpy(t.data_ptr<float>(), payload.data() + offset, nbytes);
      ck.tensors.emplace_back(e.at("name").get<std::string>(), t);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("bad checkpoint tensor table: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, std::string_view kind, const nlohmann::json& meta,
                     const torch::nn::Module& module) {
  io::write_file(path, encode_checkpoint(kind, meta, module));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_kind) {
  auto ck = decode_checkpoint(io::read_file(path));
  if (!expected_kind.empty() && ck.kind() != expected_kind)
    fail(ErrorCode::WrongModel, "checkpoint " + path.string() + " holds a '" + ck.kind() + "' model, expected '" +
                                    std::string(expected_kind) + "'");
  return ck;
}

void restore_module(torch::nn::Module& module, const Checkpoint& ckpt) {
  std::map<std::string, const torch::Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  torch::NoGradGuard no_grad;
  for (auto& [name, target] : named_state(module)) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorCode::Format, "checkpoint lacks tensor '" + name + "'");
    if (it->second->sizes() != target.sizes()) fail(ErrorCode::Format, "checkpoint tensor '" + name + "' has the wrong shape");
    target.copy_(it->second->to(target.dtype()));
  }
}

}  // namespace partsynth
