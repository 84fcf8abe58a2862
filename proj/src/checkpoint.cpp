// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "atck/common.hpp"

namespace atck {
namespace {

constexpr char kMagic[4] = {'A', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

// Fields are little endian; this build targets little-endian hosts.
template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, size_t& pos, const char* what) {
  check(pos + sizeof(T) <= in.size(),
        std::string("checkpoint: truncated at ") + what);
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& Checkpoint::require(const std::string& name) const {
  const Tensor* t = find(name);
  check(t != nullptr, "checkpoint: missing tensor '" + name + "'");
  return *t;
}

void Checkpoint::add(const std::string& name, Tensor t) {
  check(find(name) == nullptr, "checkpoint: duplicate tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 4);
  put(out, kVersion);
  out.append(reinterpret_cast<const char*>(ckpt.config_digest.data()), 32);
  put(out, uint64_t(ckpt.step));
  put(out, uint64_t(ckpt.config_text.size()));
  out.append(ckpt.config_text);

  put(out, uint32_t(ckpt.tensors.size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    check(!name.empty() && name.size() < (1u << 16), "checkpoint: bad name");
    put(out, uint32_t(name.size()));
    out.append(name);
    out.push_back(char(kDtypeF32));
    put(out, uint32_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
      check(t.dim(i) >= 0, "checkpoint: negative dim");
      put(out, uint32_t(t.dim(i)));
    }
    put(out, offset);
    offset += uint64_t(t.numel()) * sizeof(float);
  }
  put(out, offset);  // payload byte size
  for (const auto& [name, t] : ckpt.tensors) {
    (void)name;
    out.append(reinterpret_cast<const char*>(t.data.data()),
               size_t(t.numel()) * sizeof(float));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  f.flush();
  check(f.good(), "checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  check(f.good(), "checkpoint: cannot open " + path);
  auto size = int64_t(f.tellg());
  std::string in(size_t(size), '\0');
  f.seekg(0);
  f.read(in.data(), size);
  check(f.good(), "checkpoint: read failure on " + path);

  size_t pos = 0;
  check(in.size() >= 4 && std::memcmp(in.data(), kMagic, 4) == 0,
        "checkpoint: wrong magic (not an ATCK file)");
  pos = 4;
  uint32_t version = take<uint32_t>(in, pos, "version");
  check(version == kVersion,
        "checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  check(pos + 32 <= in.size(), "checkpoint: truncated at digest");
  std::memcpy(ckpt.config_digest.data(), in.data() + pos, 32);
  pos += 32;
  ckpt.step = take<uint64_t>(in, pos, "step");
  auto text_len = take<uint64_t>(in, pos, "config length");
  check(pos + text_len <= in.size(), "checkpoint: truncated at config text");
  ckpt.config_text.assign(in, pos, size_t(text_len));
  pos += size_t(text_len);
  check(sha256(ckpt.config_text) == ckpt.config_digest,
        "checkpoint: config text does not match its digest");

  uint32_t count = take<uint32_t>(in, pos, "tensor count");
  struct Row {
    std::string name;
    std::vector<int> dims;
    uint64_t offset;
  };
  std::vector<Row> rows;
  uint64_t expected_offset = 0;
  for (uint32_t i = 0; i < count; ++i) {
    Row r;
    uint32_t name_len = take<uint32_t>(in, pos, "name length");
    check(pos + name_len <= in.size(), "checkpoint: truncated at name");
    r.name.assign(in, pos, name_len);
    pos += name_len;
    uint8_t dtype = take<uint8_t>(in, pos, "dtype");
    check(dtype == kDtypeF32,
          "checkpoint: unknown dtype tag " + std::to_string(int(dtype)));
    uint32_t rank = take<uint32_t>(in, pos, "rank");
    check(rank <= 8, "checkpoint: implausible rank");
    for (uint32_t d = 0; d < rank; ++d)
      r.dims.push_back(int(take<uint32_t>(in, pos, "dim")));
    r.offset = take<uint64_t>(in, pos, "offset");
    check(r.offset == expected_offset, "checkpoint: tensor offsets out of order");
    expected_offset += uint64_t(Tensor::numel_of(r.dims)) * sizeof(float);
    rows.push_back(std::move(r));
  }
  uint64_t payload = take<uint64_t>(in, pos, "payload size");
  check(payload == expected_offset, "checkpoint: payload size mismatch");
  check(pos + payload == in.size(), "checkpoint: trailing or missing payload");

  for (const Row& r : rows) {
    Tensor t = Tensor::zeros(r.dims);
    std::memcpy(t.data.data(), in.data() + pos + size_t(r.offset),
                size_t(t.numel()) * sizeof(float));
    ckpt.add(r.name, std::move(t));
  }
  return ckpt;
}

Digest checkpoint_digest(const Checkpoint& ckpt) {
  std::string blob;
  put(blob, uint64_t(ckpt.step));
  for (const auto& [name, t] : ckpt.tensors) {
    blob.append(name);
    blob.push_back('\0');
    for (int i = 0; i < t.rank(); ++i) put(blob, uint32_t(t.dim(i)));
    blob.append(reinterpret_cast<const char*>(t.data.data()),
                size_t(t.numel()) * sizeof(float));
  }
  return sha256(blob.data(), blob.size());
}

}  // namespace atck
