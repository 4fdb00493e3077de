/* Copyright 2026 The DDB Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ddb/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "ddb/errors.hpp"

namespace ddb {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IngestError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IngestError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestError("libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IngestError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  img.channels = channels;
  img.height = height;
  img.width = width;
  img.pixels.resize(static_cast<std::size_t>(channels) * height * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.pixels[(static_cast<std::size_t>(c) * height + y) * width + x] =
            static_cast<float>(buffer[y * rowbytes + x * channels + c]) / 255.0F;
      }
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw UsageError("write_png supports 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ArtifactError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw ArtifactError("libpng initialisation failed");
  }
  const std::size_t rowbytes = static_cast<std::size_t>(image.width) * image.channels;
  std::vector<unsigned char> buffer(rowbytes * image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const float v = image.pixels[(static_cast<std::size_t>(c) * image.height + y) * image.width + x];
        buffer[y * rowbytes + x * image.channels + c] =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F));
      }
    }
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ArtifactError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image convert_image(const Image& src, int channels, int height, int width) {
  Image out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.pixels.assign(static_cast<std::size_t>(channels) * height * width, 0.0F);

  auto sample = [&](int c, double fy, double fx) {
    const double sy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const double sx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const int x1 = std::min(x0 + 1, src.width - 1);
    const double ty = sy - y0, tx = sx - x0;
    auto at = [&](int y, int x) {
      return static_cast<double>(src.pixels[(static_cast<std::size_t>(c) * src.height + y) * src.width + x]);
    };
    return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
  };

  for (int y = 0; y < height; ++y) {
    // Pixel-centre alignment.
    const double fy = (y + 0.5) * src.height / height - 0.5;
    for (int x = 0; x < width; ++x) {
      const double fx = (x + 0.5) * src.width / width - 0.5;
      for (int c = 0; c < channels; ++c) {
        double v = 0.0;
        if (src.channels == channels) {
          v = sample(c, fy, fx);
        } else if (src.channels == 1) {
          v = sample(0, fy, fx);
        } else if (channels == 1) {
          v = 0.299 * sample(0, fy, fx) + 0.587 * sample(1, fy, fx) + 0.114 * sample(2, fy, fx);
        } else {
          throw UsageError("unsupported channel conversion");
        }
        out.pixels[(static_cast<std::size_t>(c) * height + y) * width + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

}  // namespace ddb
