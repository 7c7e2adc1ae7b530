// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "forge/corpus.hpp"
#include "forge/imaging.hpp"

namespace forge::io {

// 8-bit RGB/RGBA/gray PNGs are accepted; alpha is dropped, gray is replicated.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// Dispatches on extension: .png, otherwise raw RGB with explicit dims.
Image read_image(const std::filesystem::path& path, ImageDims raw_dims = {});

// <root>/<id>.png, falling back to <root>/<id>.rgb.
class DirectoryImageStore final : public RawDirectoryImageStore {
 public:
  using RawDirectoryImageStore::RawDirectoryImageStore;
  Image load(const std::string& image_id, ImageDims expected) const override;
};

}  // namespace forge::io
