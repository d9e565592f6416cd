#include "textrec/serialize.hpp"

#include <cstring>
#include <fstream>

#include "textrec/common.hpp"

namespace textrec {

namespace {
constexpr char kTensorMagic[4] = {'E', 'Z', 'R', 'C'};
constexpr std::uint32_t kTensorVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

[[noreturn]] void fail(const std::string& what) { throw DataError(what); }
}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void write_u16(std::ostream& out, std::uint16_t v) {
  char buf[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(buf, 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 4);
}

void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

std::uint8_t read_u8(std::istream& in) {
  int c = in.get();
  if (c == EOF) fail("unexpected end of file");
  return static_cast<std::uint8_t>(c);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char buf[2];
  read_bytes(in, buf, 2);
  return static_cast<std::uint16_t>(buf[0] | (buf[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  read_bytes(in, buf, 4);
  return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void read_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) fail("unexpected end of file");
}

std::size_t NamedTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const NamedTensor& TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  fail("tensor '" + name + "' not present in container");
}

void write_tensor_file(const std::string& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write tensor file: " + path);
  out.write(kTensorMagic, 4);
  write_u32(out, kTensorVersion);
  write_u32(out, static_cast<std::uint32_t>(file.config_json.size()));
  write_bytes(out, file.config_json.data(), file.config_json.size());
  write_u32(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& tensor : file.tensors) {
    if (tensor.name.size() > UINT16_MAX) fail("tensor name too long: " + tensor.name);
    write_u16(out, static_cast<std::uint16_t>(tensor.name.size()));
    write_bytes(out, tensor.name.data(), tensor.name.size());
    write_u8(out, static_cast<std::uint8_t>(tensor.dims.size()));
    for (auto d : tensor.dims) write_u32(out, d);
    write_u8(out, kDtypeF32);
    if (tensor.data.size() != tensor.element_count()) {
      fail("tensor '" + tensor.name + "' dims do not match payload size");
    }
    for (float v : tensor.data) write_f32(out, v);
  }
  if (!out) fail("write failure on tensor file: " + path);
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read tensor file: " + path);
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::memcmp(magic, kTensorMagic, 4) != 0) fail(path + ": bad magic, not an EZRC file");
  std::uint32_t version = read_u32(in);
  if (version != kTensorVersion) {
    fail(path + ": unsupported version " + std::to_string(version));
  }
  TensorFile file;
  std::uint32_t config_len = read_u32(in);
  file.config_json.resize(config_len);
  if (config_len > 0) read_bytes(in, file.config_json.data(), config_len);
  std::uint32_t count = read_u32(in);
  file.tensors.resize(count);
  for (auto& tensor : file.tensors) {
    std::uint16_t name_len = read_u16(in);
    tensor.name.resize(name_len);
    if (name_len > 0) read_bytes(in, tensor.name.data(), name_len);
    std::uint8_t rank = read_u8(in);
    tensor.dims.resize(rank);
    for (auto& d : tensor.dims) d = read_u32(in);
    std::uint8_t dtype = read_u8(in);
    if (dtype != kDtypeF32) {
      fail(path + ": tensor '" + tensor.name + "' has unsupported dtype " + std::to_string(dtype));
    }
    tensor.data.resize(tensor.element_count());
    for (auto& v : tensor.data) v = read_f32(in);
  }
  return file;
}

}  // namespace textrec
