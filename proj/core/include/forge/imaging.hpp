// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

namespace forge {

struct ImageDims {
  int width = 0;
  int height = 0;

  bool valid() const { return width >= 1 && height >= 1; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

// 8-bit RGB, row-major, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::array<std::uint8_t, 3> fill = {0, 0, 0});

  ImageDims dims() const { return {width, height}; }
  std::uint8_t& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

// RGB in [0, 1], same layout as Image.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  static FloatImage from_u8(const Image& img);
  Image to_u8() const;
  double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct GridSpec {
  int cols = 1;
  int rows = 1;

  int count() const { return cols * rows; }
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  friend bool operator==(const Box&, const Box&) = default;
};

// Any-resolution tiling decision for one image. The source is resized
// (aspect-preserving) into `content`, centred on a canvas of
// grid.cols*base x grid.rows*base; the canvas is cut into base x base patches.
struct PatchPlan {
  ImageDims source;
  GridSpec grid;
  int base_resolution = 384;
  ImageDims canvas;
  Box content;
  std::vector<Box> patch_boxes;  // grid-row-major
  bool include_global = false;

  // Encoded buffers: patches plus the global thumbnail when present.
  int buffer_count() const { return static_cast<int>(patch_boxes.size()) + (include_global ? 1 : 0); }
  friend bool operator==(const PatchPlan&, const PatchPlan&) = default;
};

struct GridScore {
  long long padding = 0;    // canvas pixels not covered by the resized image
  long long lost = 0;       // source pixels discarded by downscaling
  long long waste() const { return padding + lost; }
};

// Size of an aspect-preserving fit of `src` into `box` (floor, at least 1px).
ImageDims fit_dims(ImageDims src, ImageDims box);

GridScore score_grid(ImageDims src, GridSpec grid, int base);

// Picks the admissible grid (cols*rows <= max_patches) with least waste; ties
// go to fewer patches, then smaller |cols - rows|, then fewer columns.
PatchPlan plan_patches(ImageDims dims, int base = 384, int max_patches = 9);

struct ResizeOptions {
  std::array<std::uint8_t, 3> pad = {128, 128, 128};
};

// Bilinear resample with half-pixel centres and edge clamping.
Image resize_bilinear(const Image& src, int width, int height);

// Aspect-preserving resize centred on a width x height canvas filled with pad.
Image resize_padded(const Image& src, int width, int height, const ResizeOptions& opts = {});

struct PatchSet {
  std::vector<Image> patches;   // grid-row-major, base x base each
  std::optional<Image> global;  // full image into base x base; absent for a 1x1 grid

  // Patches followed by the global thumbnail, the order they are encoded in.
  std::vector<Image> buffers() const;
};

PatchSet extract_patches(const Image& pixels, const PatchPlan& plan, const ResizeOptions& opts = {});

nlohmann::json to_json(const PatchPlan& plan);
PatchPlan patch_plan_from_json(const nlohmann::json& j);

}  // namespace forge
