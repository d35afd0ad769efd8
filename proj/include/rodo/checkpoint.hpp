#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rodo/tensor.hpp"

namespace rodo {

// Ordered collection of named trainable tensors.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  int64_t total_size() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Checkpoint file: magic, uint64 manifest length, JSON manifest (tensor
// names/shapes plus caller metadata), then raw little-endian float64 data in
// manifest order. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& file, const ParamStore& params,
                     const std::string& metadata_json = "{}");
ParamStore load_checkpoint(const std::filesystem::path& file,
                           std::string* metadata_json = nullptr);

}  // namespace rodo
