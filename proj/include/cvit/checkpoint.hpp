#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cvit/layers.hpp"

namespace cvit {

// Binary weight snapshot.
//
//   "CVIT" | u32 version | u32 entry count
//   per entry:
//     u32 name length | name bytes
//     u32 rank | u64 extents[rank]
//     u32 payload tag:
//       0 = raw float32 data, numel * 4 bytes
//       1 = alias: u32 length + name of an earlier entry sharing storage
//
// All integers little-endian. Tensors aliased by weight sharing are written
// once and referenced thereafter, so a round trip preserves the sharing.
namespace ckpt {

constexpr char kMagic[4] = {'C', 'V', 'I', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kTagRaw = 0;
constexpr std::uint32_t kTagAlias = 1;

template <typename I>
void write_int(std::ostream& out, I v) {
  unsigned char b[sizeof(I)];
  for (std::size_t i = 0; i < sizeof(I); ++i)
    b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), sizeof(I));
}

template <typename I>
I read_int(std::istream& in, const std::string& what) {
  unsigned char b[sizeof(I)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(I)))
    throw TruncatedFileError("checkpoint ends inside " + what);
  I v = 0;
  for (std::size_t i = 0; i < sizeof(I); ++i)
    v |= static_cast<I>(b[i]) << (8 * i);
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_int<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& what) {
  const auto len = read_int<std::uint32_t>(in, what + " length");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len))
    throw TruncatedFileError("checkpoint ends inside " + what);
  return s;
}

}  // namespace ckpt

inline void save_checkpoint(const std::string& path,
                            const ParamList<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(ckpt::kMagic, 4);
  ckpt::write_int<std::uint32_t>(out, ckpt::kVersion);
  ckpt::write_int<std::uint32_t>(out,
                                 static_cast<std::uint32_t>(params.size()));
  std::map<const void*, std::string> first_name;
  for (const auto& p : params) {
    ckpt::write_string(out, p.name);
    const Shape& shape = p.tensor.shape();
    ckpt::write_int<std::uint32_t>(out,
                                   static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape)
      ckpt::write_int<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    auto it = first_name.find(p.tensor.storage_id());
    if (it != first_name.end()) {
      ckpt::write_int<std::uint32_t>(out, ckpt::kTagAlias);
      ckpt::write_string(out, it->second);
    } else {
      ckpt::write_int<std::uint32_t>(out, ckpt::kTagRaw);
      for (float v : p.tensor.data()) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        ckpt::write_int<std::uint32_t>(out, bits);
      }
      first_name.emplace(p.tensor.storage_id(), p.name);
    }
  }
  if (!out) throw Error("write to " + path + " failed");
}

// Loads into an existing parameter list (built from a config). The file must
// contain exactly the expected tensor names with matching shapes; aliases
// must point at tensors that actually share storage in the target.
inline void load_checkpoint(const std::string& path, ParamList<float>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4))
    throw TruncatedFileError("checkpoint shorter than its magic");
  if (std::memcmp(magic, ckpt::kMagic, 4) != 0)
    throw FormatError("not a checkpoint: bad magic");
  const auto version = ckpt::read_int<std::uint32_t>(in, "version");
  if (version != ckpt::kVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  const auto count = ckpt::read_int<std::uint32_t>(in, "entry count");
  if (count != params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) +
                      " tensors, model expects " +
                      std::to_string(params.size()));

  std::map<std::string, ParamEntry<float>*> by_name;
  for (auto& p : params) by_name[p.name] = &p;

  std::map<std::string, const void*> loaded;  // name -> storage filled
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = ckpt::read_string(in, "tensor name");
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint tensor \"" + name +
                        "\" not present in the model");
    ParamEntry<float>& p = *it->second;
    const auto rank = ckpt::read_int<std::uint32_t>(in, "rank of " + name);
    Shape shape(rank);
    for (auto& d : shape)
      d = static_cast<std::size_t>(
          ckpt::read_int<std::uint64_t>(in, "extents of " + name));
    if (shape != p.tensor.shape())
      throw TensorShapeError("tensor \"" + name + "\" has shape " +
                             shape_str(shape) + " in file but " +
                             shape_str(p.tensor.shape()) + " in model");
    const auto tag = ckpt::read_int<std::uint32_t>(in, "payload tag of " + name);
    if (tag == ckpt::kTagRaw) {
      for (float& v : p.tensor.data()) {
        const auto bits =
            ckpt::read_int<std::uint32_t>(in, "data of " + name);
        std::memcpy(&v, &bits, 4);
      }
      loaded[name] = p.tensor.storage_id();
    } else if (tag == ckpt::kTagAlias) {
      const std::string target = ckpt::read_string(in, "alias of " + name);
      auto li = loaded.find(target);
      if (li == loaded.end())
        throw FormatError("tensor \"" + name +
                          "\" aliases unknown tensor \"" + target + "\"");
      if (li->second != p.tensor.storage_id())
        throw FormatError("tensor \"" + name + "\" aliases \"" + target +
                          "\" in the file but the model does not share them");
    } else {
      throw FormatError("tensor \"" + name + "\" has unknown payload tag " +
                        std::to_string(tag));
    }
  }
  // A trailing garbage byte means the writer and reader disagree.
  char extra;
  if (in.read(&extra, 1))
    throw FormatError("checkpoint has trailing bytes after the last tensor");
}

// One line of a checkpoint listing; alias_of is empty for raw payloads.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::string alias_of;
};

// Lists a checkpoint's contents without needing a model to load into.
inline std::vector<CheckpointEntry> inspect_checkpoint(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open " + path);
  const std::streamoff file_size = in.tellg();
  in.seekg(0);
  char magic[4];
  if (!in.read(magic, 4))
    throw TruncatedFileError("checkpoint shorter than its magic");
  if (std::memcmp(magic, ckpt::kMagic, 4) != 0)
    throw FormatError("not a checkpoint: bad magic");
  const auto version = ckpt::read_int<std::uint32_t>(in, "version");
  if (version != ckpt::kVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  const auto count = ckpt::read_int<std::uint32_t>(in, "entry count");
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = ckpt::read_string(in, "tensor name");
    const auto rank = ckpt::read_int<std::uint32_t>(in, "rank of " + e.name);
    e.shape.resize(rank);
    std::size_t numel = 1;
    for (auto& d : e.shape) {
      d = static_cast<std::size_t>(
          ckpt::read_int<std::uint64_t>(in, "extents of " + e.name));
      numel *= d;
    }
    const auto tag =
        ckpt::read_int<std::uint32_t>(in, "payload tag of " + e.name);
    if (tag == ckpt::kTagRaw) {
      const std::streamoff here = in.tellg();
      if (here + std::streamoff(4 * numel) > file_size)
        throw TruncatedFileError("checkpoint ends inside data of " + e.name);
      in.seekg(std::streamoff(4 * numel), std::ios::cur);
    } else if (tag == ckpt::kTagAlias) {
      e.alias_of = ckpt::read_string(in, "alias of " + e.name);
    } else {
      throw FormatError("tensor \"" + e.name + "\" has unknown payload tag " +
                        std::to_string(tag));
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace cvit
