// SPDX-License-Identifier: Apache-2.0
#include "forge_io/imageio.hpp"

#include <png.h>

#include <cstring>

#include "forge/error.hpp"

namespace forge::io {

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw ParseError("cannot read PNG " + path.string() + ": " + png.message, 0);
  png.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw ParseError("malformed PNG " + path.string() + ": " + msg, 0);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (!image.dims().valid()) throw DomainError("cannot write an empty image");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.rgb.data(), 0, nullptr))
    throw DomainError("failed writing PNG " + path.string() + ": " + png.message);
}

Image read_image(const std::filesystem::path& path, ImageDims raw_dims) {
  if (path.extension() == ".png") return read_png(path);
  return read_raw_rgb(path, raw_dims);
}

Image DirectoryImageStore::load(const std::string& image_id, ImageDims expected) const {
  const auto png = root_ / (image_id + ".png");
  if (!std::filesystem::exists(png)) return RawDirectoryImageStore::load(image_id, expected);
  Image img = read_png(png);
  if (expected.valid() && img.dims() != expected)
    throw DomainError("image '" + image_id + "' is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", document says " + std::to_string(expected.width) + "x" + std::to_string(expected.height));
  return img;
}

}  // namespace forge::io
