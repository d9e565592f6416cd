#pragma once

#include <string>

#include "textrec/encoder.hpp"
#include "textrec/training.hpp"

namespace textrec {

/// JSON run configuration for the train pipeline. Unknown keys are rejected;
/// "preset" expands to the size table (tiny 2/16/2, small 6/768/12, base
/// 12/768/12, large 24/1024/16) before explicit encoder fields apply.
struct RunConfig {
  std::string preset;  // empty when fully explicit
  EncoderConfig encoder;
  TrainConfig train;
  std::string data_dir;
  std::string vocab_path;
  std::string out_dir;
  std::string precision = "f32";  // or "f64"
  int workers = 1;

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);

  /// Canonical JSON of every effective field; hashed into the run manifest.
  std::string to_json() const;

  void validate() const;
};

}  // namespace textrec
