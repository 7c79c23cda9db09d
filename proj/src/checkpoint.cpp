#include "tamba/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tamba {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (find(name))
    throw DimensionError("ParamStore: duplicate parameter name '" + name + "'");
  if (!t.defined()) throw DimensionError("ParamStore: undefined tensor for '" + name + "'");
  items_.emplace_back(name, t);
  return t;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw DimensionError("ParamStore: unknown parameter '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw DimensionError("ParamStore: unknown parameter '" + name + "'");
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(n);
  return out;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_) t.zero_grad();
}

namespace {

constexpr const char* kMagic = "TAMBA-CKPT v1";

uint64_t to_le(double d) {
  uint64_t u;
  std::memcpy(&u, &d, sizeof(u));
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  return u;
}

double from_le(uint64_t u) {
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
  double d;
  std::memcpy(&d, &u, sizeof(d));
  return d;
}

std::vector<std::pair<std::string, Tensor>> sorted_items(const ParamStore& params) {
  auto items = params.items();
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return items;
}

struct ParsedHeader {
  std::vector<CheckpointEntry> entries;
  int64_t payload_bytes = 0;
  std::streampos payload_start;
};

ParsedHeader parse_header(std::istream& in, const std::string& path) {
  ParsedHeader h;
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    throw CheckpointError(path + ": missing '" + kMagic + "' header");
  if (!std::getline(in, line))
    throw CheckpointError(path + ": truncated manifest");
  std::istringstream cnt(line);
  std::string word;
  int64_t n = -1;
  cnt >> word >> n;
  if (word != "tensors" || n < 0 || !cnt)
    throw CheckpointError(path + ": bad tensor count line '" + line + "'");
  for (int64_t i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw CheckpointError(path + ": truncated manifest");
    std::istringstream ls(line);
    CheckpointEntry e;
    int ndim = -1;
    ls >> e.name >> ndim;
    if (!ls || ndim < 0)
      throw CheckpointError(path + ": bad manifest line '" + line + "'");
    e.shape.resize(static_cast<size_t>(ndim));
    for (int k = 0; k < ndim; ++k) ls >> e.shape[static_cast<size_t>(k)];
    ls >> e.byte_offset;
    if (!ls)
      throw CheckpointError(path + ": bad manifest line '" + line + "'");
    h.entries.push_back(std::move(e));
  }
  if (!std::getline(in, line))
    throw CheckpointError(path + ": missing payload line");
  std::istringstream ps(line);
  ps >> word >> h.payload_bytes;
  if (word != "payload" || !ps || h.payload_bytes < 0)
    throw CheckpointError(path + ": bad payload line '" + line + "'");
  h.payload_start = in.tellg();
  return h;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  auto items = sorted_items(params);
  std::ostringstream head;
  head << kMagic << "\n";
  head << "tensors " << items.size() << "\n";
  int64_t offset = 0;
  for (const auto& [name, t] : items) {
    head << name << " " << t.ndim();
    for (int64_t d : t.shape()) head << " " << d;
    head << " " << offset << "\n";
    offset += t.size() * static_cast<int64_t>(sizeof(double));
  }
  head << "payload " << offset << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(path + ": cannot open for writing");
  const std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : items) {
    for (double v : t.data()) {
      uint64_t u = to_le(v);
      out.write(reinterpret_cast<const char*>(&u), sizeof(u));
    }
  }
  if (!out) throw CheckpointError(path + ": write failed");
}

void load_checkpoint(ParamStore& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  ParsedHeader h = parse_header(in, path);
  if (h.entries.size() != params.size())
    throw CheckpointError(path + ": has " + std::to_string(h.entries.size()) +
                          " tensors, store expects " + std::to_string(params.size()));
  for (const auto& e : h.entries) {
    const Tensor* t = params.find(e.name);
    if (!t) throw CheckpointError(path + ": unexpected parameter '" + e.name + "'");
    if (t->shape() != e.shape)
      throw CheckpointError(path + ": shape mismatch for '" + e.name + "': file " +
                            shape_str(e.shape) + " vs store " + shape_str(t->shape()));
    in.seekg(h.payload_start + static_cast<std::streamoff>(e.byte_offset));
    Tensor& dst = params.get(e.name);
    auto raw = dst.raw();
    for (double& v : raw) {
      uint64_t u;
      in.read(reinterpret_cast<char*>(&u), sizeof(u));
      if (!in) throw CheckpointError(path + ": truncated payload at '" + e.name + "'");
      v = from_le(u);
    }
  }
}

std::vector<CheckpointEntry> read_checkpoint_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(path + ": cannot open");
  return parse_header(in, path).entries;
}

}  // namespace tamba
