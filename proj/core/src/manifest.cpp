#include "textrec/manifest.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "textrec/common.hpp"

namespace textrec {

namespace {

std::string digest_to_hex(const unsigned char* digest, unsigned int len) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw NumericError("sha256 init failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw NumericError("sha256 update failed");
  }
  std::string finish() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) throw NumericError("sha256 final failed");
    return digest_to_hex(digest, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 hasher;
  hasher.update(bytes.data(), bytes.size());
  return hasher.finish();
}

std::string sha256_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  Sha256 hasher;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) hasher.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return hasher.finish();
}

void write_manifest(const std::string& run_dir, const std::string& config_json,
                    std::vector<std::string> files) {
  std::sort(files.begin(), files.end());
  nlohmann::json manifest;
  manifest["config_sha256"] = sha256_hex(config_json);
  manifest["files"] = nlohmann::json::array();
  for (const auto& file : files) {
    manifest["files"].push_back(
        {{"path", file}, {"sha256", sha256_file_hex(run_dir + "/" + file)}});
  }
  std::ofstream out(run_dir + "/manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write manifest in " + run_dir);
  out << manifest.dump(2) << '\n';
}

}  // namespace textrec
