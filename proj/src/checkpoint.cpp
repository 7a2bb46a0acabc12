#include "pm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace pm {

namespace {

constexpr char kMagic[8] = {'P', 'M', 'C', 'K', 'P', 'T', '1', '\n'};

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path + ": " + what);
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

void Checkpoint::put(const std::string& name, Tensor<float> t) {
  if (find(name)) throw std::invalid_argument("checkpoint: duplicate array " + name);
  arrays.emplace_back(name, std::move(t));
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["format"] = "pmckpt";
  manifest["version"] = 1;
  manifest["dtype"] = "float32";
  manifest["meta"] = ck.meta;
  auto& list = manifest["arrays"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ck.arrays) {
    list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.size()) * sizeof(float);
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ck.arrays)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  out.flush();
  if (!out) fail(path, "write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) fail(path, "not a checkpoint file");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) fail(path, "truncated manifest length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) fail(path, "truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(path, std::string("manifest parse error: ") + e.what());
  }
  if (manifest.value("format", "") != "pmckpt") fail(path, "unknown format tag");
  if (manifest.value("version", 0) != 1) fail(path, "unsupported version");
  if (manifest.value("dtype", "") != "float32") fail(path, "unsupported dtype");

  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) fail(path, "truncated payload for " + name);
    ck.arrays.emplace_back(name, std::move(t));
  }
  return ck;
}

template <typename T>
void pack_params(Checkpoint& ck, const ParamSet<T>& ps, const std::string& prefix) {
  for (const auto& [name, v] : ps.items()) {
    const Tensor<T>& src = v.value();
    Tensor<float> t(src.shape());
    for (long i = 0; i < src.size(); ++i) t[i] = static_cast<float>(src[i]);
    ck.put(prefix + name, std::move(t));
  }
}

template <typename T>
void unpack_params(const Checkpoint& ck, ParamSet<T>& ps, const std::string& prefix) {
  for (auto& [name, v] : ps.items()) {
    const Tensor<float>* t = ck.find(prefix + name);
    if (!t) throw std::runtime_error("checkpoint: missing array " + prefix + name);
    if (t->shape() != v.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + prefix + name);
    Tensor<T>& dst = v.value();
    for (long i = 0; i < t->size(); ++i) dst[i] = static_cast<T>((*t)[i]);
  }
}

template void pack_params<float>(Checkpoint&, const ParamSet<float>&, const std::string&);
template void pack_params<double>(Checkpoint&, const ParamSet<double>&, const std::string&);
template void unpack_params<float>(const Checkpoint&, ParamSet<float>&, const std::string&);
template void unpack_params<double>(const Checkpoint&, ParamSet<double>&, const std::string&);

}  // namespace pm
