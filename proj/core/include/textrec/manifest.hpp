#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace textrec {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file_hex(const std::string& path);

/// Writes <run_dir>/manifest.json: {"config_sha256": ..., "files": [{"path",
/// "sha256"}, ...]} with files sorted by path. `files` are run_dir-relative.
void write_manifest(const std::string& run_dir, const std::string& config_json,
                    std::vector<std::string> files);

}  // namespace textrec
