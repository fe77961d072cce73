#include <fstream>

#include "a2mc/binary_io.hpp"
#include "a2mc/tensor.hpp"

namespace a2mc {

namespace {
constexpr std::string_view kTensorMagic = "A2MCTNSR";
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

template <typename T>
void write_tensor(BinaryWriter& out, const Tensor<T>& t) {
  out.put_bytes(kTensorMagic);
  out.put<std::uint32_t>(kTensorFormatVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) out.put<std::uint64_t>(d);
  out.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
  for (T v : t.data()) out.put<T>(v);
}

template <typename T>
Tensor<T> read_tensor(BinaryReader& in) {
  in.expect_magic(kTensorMagic);
  const auto version = in.get<std::uint32_t>("tensor version");
  if (version != kTensorFormatVersion) {
    throw UnsupportedVersionError("unsupported tensor format version " + std::to_string(version) +
                                  " (supported: " + std::to_string(kTensorFormatVersion) + ")");
  }
  const auto rank = in.get<std::uint32_t>("tensor rank");
  if (rank > kMaxRank) in.fail("tensor rank " + std::to_string(rank) + " exceeds limit");
  Shape shape(rank);
  for (auto& d : shape) {
    const auto v = in.get<std::uint64_t>("tensor dim");
    if (v > (std::uint64_t{1} << 32)) in.fail("implausible tensor dimension " + std::to_string(v));
    d = static_cast<std::size_t>(v);
  }
  const auto tag = in.get<std::uint8_t>("tensor dtype");
  const std::size_t n = shape_numel(shape);
  std::vector<T> data(n);
  if (tag == static_cast<std::uint8_t>(DType::kF32)) {
    for (auto& v : data) v = static_cast<T>(in.get<float>("tensor data"));
  } else if (tag == static_cast<std::uint8_t>(DType::kF64)) {
    for (auto& v : data) v = static_cast<T>(in.get<double>("tensor data"));
  } else {
    in.fail("unknown tensor dtype tag " + std::to_string(tag));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  BinaryWriter w(f);
  write_tensor(w, t);
  if (!w.good()) throw Error("write failed: " + path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  BinaryReader r(f);
  return read_tensor<T>(r);
}

template void write_tensor<float>(BinaryWriter&, const Tensor<float>&);
template void write_tensor<double>(BinaryWriter&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(BinaryReader&);
template Tensor<double> read_tensor<double>(BinaryReader&);
template void save_tensor<float>(const std::string&, const Tensor<float>&);
template void save_tensor<double>(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::string&);
template Tensor<double> load_tensor<double>(const std::string&);

}  // namespace a2mc
