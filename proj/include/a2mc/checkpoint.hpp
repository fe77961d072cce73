#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "a2mc/encoder.hpp"

namespace a2mc {

// "A2MCCKPT", u32 version, u32 count, count x (u32 name length, name,
// tensor record), u32 length + JSON metadata (config echo and loop state).
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  nlohmann::json meta = nlohmann::json::object();

  void put(std::string name, Tensor<float> t);
  const Tensor<float>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  void put_encoder(const std::string& prefix, const EncoderParams<float>& p);
  // Shapes are checked against `dims`.
  EncoderParams<float> get_encoder(const std::string& prefix, const EncoderDims& dims) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace a2mc
