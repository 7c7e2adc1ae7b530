// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/linalg.hpp"

namespace forge {

struct NamedTensor {
  std::string name;
  Mat value;
};

// Flat binary tensor container:
//   8 bytes   magic "FRGTNSR1"
//   8 bytes   little-endian u64 header length N
//   N bytes   UTF-8 JSON header {"meta": {...}, "tensors": [{"name","rows","cols"}...]}
//   payload   each tensor's entries as little-endian f64, row-major, in header order
void write_tensor_file(const std::filesystem::path& path, const nlohmann::json& meta,
                       const std::vector<NamedTensor>& tensors);

struct TensorFile {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Mat& at(const std::string& name) const;
};

TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace forge
