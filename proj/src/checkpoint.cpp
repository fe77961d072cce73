#include "a2mc/checkpoint.hpp"

#include <fstream>

#include "a2mc/binary_io.hpp"

namespace a2mc {

namespace {
constexpr std::string_view kCheckpointMagic = "A2MCCKPT";
}

void Checkpoint::put(std::string name, Tensor<float> t) {
  for (auto& [n, v] : tensors) {
    if (n == name) {
      v = std::move(t);
      return;
    }
  }
  tensors.emplace_back(std::move(name), std::move(t));
}

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return v;
  throw FormatError("checkpoint has no tensor named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return true;
  return false;
}

void Checkpoint::put_encoder(const std::string& prefix, const EncoderParams<float>& p) {
  p.for_each([&](std::string_view name, const Tensor<float>& t) { put(prefix + std::string(name), t); });
}

EncoderParams<float> Checkpoint::get_encoder(const std::string& prefix, const EncoderDims& dims) const {
  EncoderParams<float> ref = init_encoder<float>(dims, 0);
  EncoderParams<float> out = ref;
  out.for_each([&](std::string_view name, Tensor<float>& t) {
    const std::string full = prefix + std::string(name);
    const Tensor<float>& stored = get(full);
    if (stored.shape() != t.shape()) {
      throw FormatError("checkpoint tensor " + full + " has shape " + shape_string(stored.shape()) + ", expected " +
                        shape_string(t.shape()));
    }
    t = stored;
  });
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  BinaryWriter w(f);
  w.put_bytes(kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.put_string(name);
    write_tensor(w, t);
  }
  w.put_string(ckpt.meta.dump());
  f.flush();
  if (!f) throw Error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  BinaryReader r(f);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.get<std::uint32_t>("checkpoint version");
  if (version != kCheckpointFormatVersion) {
    throw UnsupportedVersionError("unsupported checkpoint format version " + std::to_string(version) +
                                  " (supported: " + std::to_string(kCheckpointFormatVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string("tensor name", 4096);
    ckpt.tensors.emplace_back(std::move(name), read_tensor<float>(r));
  }
  const std::string meta = r.get_string("metadata");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  return ckpt;
}

}  // namespace a2mc
