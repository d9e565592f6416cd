#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace textrec {

// Little-endian primitive IO shared by the ".ezrc" and ".ezem" containers.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32(std::ostream& out, float v);
void write_bytes(std::ostream& out, const void* data, std::size_t n);

std::uint8_t read_u8(std::istream& in);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);
float read_f32(std::istream& in);
void read_bytes(std::istream& in, void* data, std::size_t n);

/// f32 row-major tensor payload of an ".ezrc" container entry.
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const;
};

/// "EZRC" container: magic, u32 version=1, config JSON, then named tensors.
struct TensorFile {
  std::string config_json;
  std::vector<NamedTensor> tensors;

  const NamedTensor& find(const std::string& name) const;
};

void write_tensor_file(const std::string& path, const TensorFile& file);
TensorFile read_tensor_file(const std::string& path);

}  // namespace textrec
