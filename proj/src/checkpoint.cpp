#include "prunekit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace prunekit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'P', 'R', 'N'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is.good()) throw std::runtime_error("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_pod(os, static_cast<uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
  }
  if (!os.good()) throw std::runtime_error("write failed for checkpoint: " + path);
}

TensorMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is.good() || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  const auto count = read_pod<uint32_t>(is, path);
  TensorMap out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is.good()) throw std::runtime_error("truncated checkpoint: " + path);
    const auto rank = read_pod<uint8_t>(is, path);
    Shape shape(rank);
    for (uint8_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(read_pod<uint64_t>(is, path));
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is.good()) throw std::runtime_error("truncated checkpoint: " + path);
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

const Tensor& find_tensor(const TensorMap& map, const std::string& name) {
  for (const auto& [n, t] : map)
    if (n == name) return t;
  throw std::runtime_error("checkpoint has no tensor named '" + name + "'");
}

}  // namespace prunekit
