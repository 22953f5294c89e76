#include "selab/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include "binary_io.hpp"
#include "selab/error.hpp"

namespace selab {

namespace binary {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace binary

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::string out = "GCK1";
  binary::put_u32(out, kCheckpointVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  std::set<std::string> names;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second)
      throw FormatError("GCK1: duplicate tensor name " + t.name);
    if (numel(t.shape) != static_cast<std::int64_t>(t.data.size()))
      throw ShapeError("GCK1: tensor " + t.name + " shape " + to_string(t.shape) +
                       " does not match its data size");
    binary::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    binary::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) binary::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) binary::put_f32(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  binary::Reader r(bytes, "GCK1");
  if (r.bytes(4, "magic") != "GCK1") throw FormatError("GCK1: bad magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("GCK1: unsupported version " + std::to_string(version));
  const auto count = r.u32("tensor count");
  std::vector<NamedTensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const auto name_len = r.u32("name length");
    t.name = std::string(r.bytes(name_len, "name"));
    const auto rank = r.u32("rank");
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(r.u32("dims"));
    t.data.resize(numel(t.shape));
    r.f32_array(t.data.data(), t.data.size(), "tensor data");
    tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0)
    throw FormatError("GCK1: " + std::to_string(r.remaining()) +
                      " trailing bytes after last tensor");
  return tensors;
}

void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensor>& tensors) {
  binary::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(binary::read_file(path));
}

}  // namespace selab
