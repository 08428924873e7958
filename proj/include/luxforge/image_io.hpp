#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace luxforge {

// Float RGB image, CHW layout, values nominally in [0,1].
struct ImageF {
  int h = 0, w = 0;
  std::vector<float> chw;  // 3*h*w

  float& at(int c, int y, int x) {
    return chw[(static_cast<size_t>(c) * h + y) * w + x];
  }
  float at(int c, int y, int x) const {
    return chw[(static_cast<size_t>(c) * h + y) * w + x];
  }
};

// 8-bit RGB PNG. float -> byte via round(clamp01(v) * 255).
void save_png_rgb(const std::string& path, const ImageF& img);
ImageF load_png_rgb(const std::string& path);

// 8-bit single-channel PNG of class indices.
void save_png_labels(const std::string& path, int h, int w, const int32_t* v);
// Validates every value < k_classes (pass <= 255 to skip the check).
std::vector<int32_t> load_png_labels(const std::string& path, int k_classes,
                                     int* h, int* w);

uint8_t float_to_byte(float v);

}  // namespace luxforge
