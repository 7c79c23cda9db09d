#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tamba/tensor.hpp"

namespace tamba {

// Named parameter registry. Insertion order is the deterministic init order;
// serialization sorts by name so checkpoint bytes are canonical.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::string> names() const;
  size_t size() const { return items_.size(); }
  int64_t total_params() const;
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  int64_t byte_offset = 0;  // into the payload section
};

// Flat archive: "TAMBA-CKPT v1" header, a manifest of name/shape/offset lines
// sorted by name, then a raw little-endian float64 payload. Round-trips are
// bit-exact.
void save_checkpoint(const ParamStore& params, const std::string& path);

// Loads values into an existing store; names and shapes must match exactly.
void load_checkpoint(ParamStore& params, const std::string& path);

// Manifest inspection without touching the payload.
std::vector<CheckpointEntry> read_checkpoint_manifest(const std::string& path);

}  // namespace tamba
