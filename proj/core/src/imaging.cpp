// SPDX-License-Identifier: Apache-2.0
#include "forge/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <tuple>

#include "forge/error.hpp"

namespace forge {

Image::Image(int w, int h, std::array<std::uint8_t, 3> fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw DomainError("negative image size");
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill[0];
    rgb[i + 1] = fill[1];
    rgb[i + 2] = fill[2];
  }
}

FloatImage FloatImage::from_u8(const Image& img) {
  FloatImage out{img.width, img.height, std::vector<double>(img.rgb.size())};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) out.rgb[i] = img.rgb[i] / 255.0;
  return out;
}

Image FloatImage::to_u8() const {
  Image out;
  out.width = width;
  out.height = height;
  out.rgb.resize(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i)
    out.rgb[i] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0));
  return out;
}

ImageDims fit_dims(ImageDims src, ImageDims box) {
  const long long w = src.width, h = src.height;
  // Width-limited when box.w / w <= box.h / h.
  if (static_cast<long long>(box.width) * h <= static_cast<long long>(box.height) * w) {
    const long long rh = std::max<long long>(1, h * box.width / w);
    return {box.width, static_cast<int>(std::min<long long>(rh, box.height))};
  }
  const long long rw = std::max<long long>(1, w * box.height / h);
  return {static_cast<int>(std::min<long long>(rw, box.width)), box.height};
}

GridScore score_grid(ImageDims src, GridSpec grid, int base) {
  const ImageDims canvas{grid.cols * base, grid.rows * base};
  const ImageDims fit = fit_dims(src, canvas);
  const long long resized = static_cast<long long>(fit.width) * fit.height;
  const long long original = static_cast<long long>(src.width) * src.height;
  GridScore s;
  s.padding = static_cast<long long>(canvas.width) * canvas.height - resized;
  s.lost = std::max(0LL, original - resized);
  return s;
}

PatchPlan plan_patches(ImageDims dims, int base, int max_patches) {
  if (!dims.valid())
    throw DomainError("invalid image dims " + std::to_string(dims.width) + "x" + std::to_string(dims.height));
  if (base < 16) throw DomainError("base resolution must be >= 16");
  if (max_patches < 1) throw DomainError("max_patches must be >= 1");

  GridSpec best{1, 1};
  auto key = [&](GridSpec g) {
    return std::make_tuple(score_grid(dims, g, base).waste(), g.count(), std::abs(g.cols - g.rows), g.cols);
  };
  auto best_key = key(best);
  for (int cols = 1; cols <= max_patches; ++cols) {
    for (int rows = 1; cols * rows <= max_patches; ++rows) {
      const GridSpec g{cols, rows};
      const auto k = key(g);
      if (k < best_key) {
        best = g;
        best_key = k;
      }
    }
  }

  PatchPlan plan;
  plan.source = dims;
  plan.grid = best;
  plan.base_resolution = base;
  plan.canvas = {best.cols * base, best.rows * base};
  const ImageDims fit = fit_dims(dims, plan.canvas);
  plan.content.x0 = (plan.canvas.width - fit.width) / 2;
  plan.content.y0 = (plan.canvas.height - fit.height) / 2;
  plan.content.x1 = plan.content.x0 + fit.width;
  plan.content.y1 = plan.content.y0 + fit.height;
  for (int r = 0; r < best.rows; ++r)
    for (int c = 0; c < best.cols; ++c)
      plan.patch_boxes.push_back({c * base, r * base, (c + 1) * base, (r + 1) * base});
  plan.include_global = best.count() != 1;
  return plan;
}

Image resize_bilinear(const Image& src, int width, int height) {
  if (src.width < 1 || src.height < 1 || width < 1 || height < 1) throw DomainError("resize of empty image");
  Image out(width, height);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(x0, y0, c) * (1.0 - wx) + src.at(x1, y0, c) * wx;
        const double bottom = src.at(x0, y1, c) * (1.0 - wx) + src.at(x1, y1, c) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

namespace {

void blit(const Image& src, Image& dst, int ox, int oy) {
  for (int y = 0; y < src.height; ++y)
    std::copy_n(&src.rgb[static_cast<std::size_t>(y) * src.width * 3], static_cast<std::size_t>(src.width) * 3,
                &dst.rgb[(static_cast<std::size_t>(y + oy) * dst.width + ox) * 3]);
}

Image crop(const Image& src, const Box& b) {
  Image out(b.width(), b.height());
  for (int y = 0; y < b.height(); ++y)
    std::copy_n(&src.rgb[(static_cast<std::size_t>(y + b.y0) * src.width + b.x0) * 3],
                static_cast<std::size_t>(b.width()) * 3, &out.rgb[static_cast<std::size_t>(y) * b.width() * 3]);
  return out;
}

}  // namespace

Image resize_padded(const Image& src, int width, int height, const ResizeOptions& opts) {
  const ImageDims fit = fit_dims(src.dims(), {width, height});
  Image canvas(width, height, opts.pad);
  const Image resized = fit == src.dims() ? src : resize_bilinear(src, fit.width, fit.height);
  blit(resized, canvas, (width - fit.width) / 2, (height - fit.height) / 2);
  return canvas;
}

std::vector<Image> PatchSet::buffers() const {
  std::vector<Image> all = patches;
  if (global) all.push_back(*global);
  return all;
}

PatchSet extract_patches(const Image& pixels, const PatchPlan& plan, const ResizeOptions& opts) {
  if (pixels.dims() != plan.source)
    throw DomainError("image is " + std::to_string(pixels.width) + "x" + std::to_string(pixels.height) +
                      " but plan expects " + std::to_string(plan.source.width) + "x" +
                      std::to_string(plan.source.height));
  if (pixels.rgb.size() != static_cast<std::size_t>(pixels.width) * pixels.height * 3)
    throw DomainError("image buffer size does not match its dims");

  PatchSet out;
  const int base = plan.base_resolution;
  if (plan.grid.count() == 1) {
    out.patches.push_back(resize_padded(pixels, base, base, opts));
    return out;
  }
  const Image canvas = resize_padded(pixels, plan.canvas.width, plan.canvas.height, opts);
  for (const Box& b : plan.patch_boxes) out.patches.push_back(crop(canvas, b));
  if (plan.include_global) out.global = resize_padded(pixels, base, base, opts);
  return out;
}

namespace {

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from(const nlohmann::json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

}  // namespace

nlohmann::json to_json(const PatchPlan& plan) {
  nlohmann::json j;
  j["source"] = {{"width", plan.source.width}, {"height", plan.source.height}};
  j["grid"] = {{"cols", plan.grid.cols}, {"rows", plan.grid.rows}};
  j["base_resolution"] = plan.base_resolution;
  j["canvas"] = {{"width", plan.canvas.width}, {"height", plan.canvas.height}};
  j["content"] = box_json(plan.content);
  j["patch_boxes"] = nlohmann::json::array();
  for (const auto& b : plan.patch_boxes) j["patch_boxes"].push_back(box_json(b));
  j["include_global"] = plan.include_global;
  return j;
}

PatchPlan patch_plan_from_json(const nlohmann::json& j) {
  PatchPlan p;
  p.source = {j.at("source").at("width").get<int>(), j.at("source").at("height").get<int>()};
  p.grid = {j.at("grid").at("cols").get<int>(), j.at("grid").at("rows").get<int>()};
  p.base_resolution = j.at("base_resolution").get<int>();
  p.canvas = {j.at("canvas").at("width").get<int>(), j.at("canvas").at("height").get<int>()};
  p.content = box_from(j.at("content"));
  for (const auto& b : j.at("patch_boxes")) p.patch_boxes.push_back(box_from(b));
  p.include_global = j.at("include_global").get<bool>();
  return p;
}

}  // namespace forge
