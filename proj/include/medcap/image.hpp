#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace medcap {

// Grayscale-or-RGB raster with pixel values normalized to [0, 1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 or 3
  std::vector<float> pix;  // row-major, channel-interleaved

  float at(int r, int c, int ch = 0) const {
    return pix[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
  float& at(int r, int c, int ch = 0) {
    return pix[(static_cast<size_t>(r) * width + c) * channels + ch];
  }
};

ImageTensor make_image(int height, int width, int channels = 1, float fill = 0.0f);

// Binary PGM (P5, maxval 255). Values are clamped to [0,1] on write.
ImageTensor read_pgm(const std::string& path);
void write_pgm(const ImageTensor& img, const std::string& path);

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);
ImageTensor hflip(const ImageTensor& img);
ImageTensor crop(const ImageTensor& img, int top, int left, int h, int w);

// Training-time augmentation: random resized crop (area scale uniform in
// [0.8, 1.0], square) followed by horizontal flip with probability 0.5.
ImageTensor augment(const ImageTensor& img, int out_size, std::mt19937_64& rng);

// Inference path: plain deterministic resize to out_size x out_size.
ImageTensor resize_for_inference(const ImageTensor& img, int out_size);

}  // namespace medcap
