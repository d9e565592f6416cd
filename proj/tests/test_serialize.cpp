#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "textrec/common.hpp"
#include "textrec/serialize.hpp"

using namespace textrec;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_SUITE_BEGIN("serialize");

TEST_CASE("tensor container round trip is bit exact") {
  TensorFile file;
  file.config_json = R"({"kind":"test","n":3})";
  NamedTensor a;
  a.name = "alpha";
  a.dims = {2, 3};
  a.data = {1.5f, -2.25f, 0.0f, 3.0f, -0.0f, 7.5f};
  NamedTensor b;
  b.name = "beta";
  b.dims = {4};
  b.data = {0.1f, 0.2f, 0.3f, 0.4f};
  file.tensors = {a, b};

  const std::string p1 = "serialize_roundtrip_1.bin";
  const std::string p2 = "serialize_roundtrip_2.bin";
  write_tensor_file(p1, file);
  TensorFile loaded = read_tensor_file(p1);
  CHECK(loaded.config_json == file.config_json);
  REQUIRE(loaded.tensors.size() == 2);
  CHECK(loaded.find("alpha").dims == a.dims);
  CHECK(loaded.find("beta").data == b.data);
  write_tensor_file(p2, loaded);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("wrong magic is rejected") {
  const std::string path = "serialize_badmagic.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE furthermore this is not a tensor container";
  }
  CHECK_THROWS_WITH_AS(read_tensor_file(path), doctest::Contains("bad magic"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("truncated container is rejected") {
  TensorFile file;
  file.config_json = "{}";
  NamedTensor t;
  t.name = "x";
  t.dims = {8};
  t.data.assign(8, 1.0f);
  file.tensors = {t};
  const std::string path = "serialize_truncated.bin";
  write_tensor_file(path, file);
  auto bytes = slurp(path);
  {
    std::ofstream out(path, std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  CHECK_THROWS_AS(read_tensor_file(path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("mismatched dims and payload are rejected at write time") {
  TensorFile file;
  file.config_json = "{}";
  NamedTensor t;
  t.name = "x";
  t.dims = {2, 2};
  t.data = {1.0f};  // too short
  file.tensors = {t};
  CHECK_THROWS_AS(write_tensor_file("serialize_mismatch.bin", file), DataError);
  std::remove("serialize_mismatch.bin");
}

TEST_SUITE_END();
