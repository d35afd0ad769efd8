#include "rodo/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "rodo/errors.hpp"

namespace rodo {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'R', 'O', 'D', 'O', 'C', 'K', 'P', 'T'};
}

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (has(name)) throw Error("duplicate parameter: " + name);
  Tensor t(std::move(shape));
  t.set_requires_grad(true);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw Error("unknown parameter: " + name);
}

const Tensor& ParamStore::at(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw Error("unknown parameter: " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

int64_t ParamStore::total_size() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void save_checkpoint(const std::filesystem::path& file,
                     const ParamStore& params, const std::string& metadata_json) {
  json manifest;
  manifest["format_version"] = 1;
  manifest["metadata"] = json::parse(metadata_json);
  json tensors = json::array();
  for (const auto& [name, t] : params.items()) {
    json rec;
    rec["name"] = name;
    rec["shape"] = t.shape();
    tensors.push_back(rec);
  }
  manifest["tensors"] = tensors;
  const std::string text = manifest.dump();

  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + file.string());
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.items())
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw IoFailure("write failed: " + file.string());
}

ParamStore load_checkpoint(const std::filesystem::path& file,
                           std::string* metadata_json) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + file.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoFailure("not a checkpoint file: " + file.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoFailure("truncated checkpoint: " + file.string());

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw IoFailure("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (metadata_json) *metadata_json = manifest["metadata"].dump();

  ParamStore params;
  for (const auto& rec : manifest["tensors"]) {
    const std::string name = rec["name"].get<std::string>();
    const std::vector<int> shape = rec["shape"].get<std::vector<int>>();
    Tensor& t = params.create(name, shape);
    in.read(reinterpret_cast<char*>(t.mutable_values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoFailure("truncated checkpoint data: " + file.string());
  }
  return params;
}

}  // namespace rodo
