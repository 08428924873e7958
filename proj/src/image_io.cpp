#include "luxforge/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "luxforge/common.hpp"

namespace luxforge {

uint8_t float_to_byte(float v) {
  float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

namespace {

void write_png(const std::string& path, int h, int w, int channels,
               const std::vector<uint8_t>& rows_hwc) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rows_hwc.data(),
                               static_cast<png_int_32>(w * channels), nullptr))
    throw io_error(cat("failed to write PNG ", path, ": ", image.message));
}

std::vector<uint8_t> read_png(const std::string& path, int expect_channels,
                              int* h, int* w) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw io_error(cat("failed to open PNG ", path, ": ", image.message));
  image.format = expect_channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(),
                             static_cast<png_int_32>(image.width * expect_channels),
                             nullptr)) {
    png_image_free(&image);
    throw io_error(cat("failed to decode PNG ", path, ": ", image.message));
  }
  *h = static_cast<int>(image.height);
  *w = static_cast<int>(image.width);
  return buf;
}

}  // namespace

void save_png_rgb(const std::string& path, const ImageF& img) {
  if (img.h < 1 || img.w < 1 ||
      img.chw.size() != static_cast<size_t>(3) * img.h * img.w)
    throw value_error(cat("save_png_rgb: malformed image buffer for ", path));
  std::vector<uint8_t> hwc(static_cast<size_t>(img.h) * img.w * 3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        hwc[(static_cast<size_t>(y) * img.w + x) * 3 + c] =
            float_to_byte(img.at(c, y, x));
  write_png(path, img.h, img.w, 3, hwc);
}

ImageF load_png_rgb(const std::string& path) {
  int h = 0, w = 0;
  std::vector<uint8_t> hwc = read_png(path, 3, &h, &w);
  ImageF img;
  img.h = h;
  img.w = w;
  img.chw.resize(static_cast<size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<float>(hwc[(static_cast<size_t>(y) * w + x) * 3 + c]) /
            255.0f;
  return img;
}

void save_png_labels(const std::string& path, int h, int w, const int32_t* v) {
  std::vector<uint8_t> gray(static_cast<size_t>(h) * w);
  for (size_t i = 0; i < gray.size(); ++i) {
    int32_t val = v[i];
    if (val < 0 || val > 255)
      throw value_error(cat("save_png_labels: label ", val,
                            " not representable in 8 bits (", path, ")"));
    gray[i] = static_cast<uint8_t>(val);
  }
  write_png(path, h, w, 1, gray);
}

std::vector<int32_t> load_png_labels(const std::string& path, int k_classes,
                                     int* h, int* w) {
  std::vector<uint8_t> gray = read_png(path, 1, h, w);
  std::vector<int32_t> out(gray.size());
  for (size_t i = 0; i < gray.size(); ++i) {
    out[i] = gray[i];
    if (out[i] >= k_classes)
      throw io_error(cat("load_png_labels: label ", out[i], " >= K=", k_classes,
                         " at pixel ", i, " in ", path));
  }
  return out;
}

}  // namespace luxforge
