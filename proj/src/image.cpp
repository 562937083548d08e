#include "medcap/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "medcap/errors.hpp"

namespace medcap {

ImageTensor make_image(int height, int width, int channels, float fill) {
  ImageTensor img;
  img.height = height;
  img.width = width;
  img.channels = channels;
  img.pix.assign(static_cast<size_t>(height) * width * channels, fill);
  return img;
}

namespace {

// Skips whitespace and '#' comment lines, then reads one ASCII integer.
int next_pnm_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw DataError("malformed PGM header: " + path);
  int value = 0;
  while (ch != EOF && std::isdigit(ch)) {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  return value;
}

}  // namespace

ImageTensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw DataError("not a binary PGM (P5): " + path);
  const int w = next_pnm_int(in, path);
  const int h = next_pnm_int(in, path);
  const int maxval = next_pnm_int(in, path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw DataError("unsupported PGM dimensions/maxval: " + path);
  // The header parser consumed exactly one whitespace byte after maxval.
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw DataError("truncated PGM payload: " + path);
  ImageTensor img = make_image(h, w, 1);
  const float inv = 1.0f / static_cast<float>(maxval);
  for (size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] * inv;
  return img;
}

void write_pgm(const ImageTensor& img, const std::string& path) {
  if (img.channels != 1) throw DataError("PGM writer expects a single channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) {
    const float v = std::clamp(img.pix[i], 0.0f, 1.0f);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("failed writing image payload: " + path);
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw DataError("resize target must be positive");
  if (out_h == img.height && out_w == img.width) return img;
  ImageTensor out = make_image(out_h, out_w, img.channels);
  const float sy = static_cast<float>(img.height) / out_h;
  const float sx = static_cast<float>(img.width) / out_w;
  for (int r = 0; r < out_h; ++r) {
    // Half-pixel-center convention; clamped at the borders.
    float fy = (r + 0.5f) * sy - 0.5f;
    fy = std::clamp(fy, 0.0f, static_cast<float>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const float wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      float fx = (c + 0.5f) * sx - 0.5f;
      fx = std::clamp(fx, 0.0f, static_cast<float>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const float wx = fx - x0;
      for (int ch = 0; ch < img.channels; ++ch) {
        const float top = img.at(y0, x0, ch) * (1 - wx) + img.at(y0, x1, ch) * wx;
        const float bot = img.at(y1, x0, ch) * (1 - wx) + img.at(y1, x1, ch) * wx;
        out.at(r, c, ch) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

ImageTensor hflip(const ImageTensor& img) {
  ImageTensor out = make_image(img.height, img.width, img.channels);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(r, c, ch) = img.at(r, img.width - 1 - c, ch);
  return out;
}

ImageTensor crop(const ImageTensor& img, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || h <= 0 || w <= 0 || top + h > img.height || left + w > img.width)
    throw DataError("crop window out of bounds");
  ImageTensor out = make_image(h, w, img.channels);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < img.channels; ++ch)
        out.at(r, c, ch) = img.at(top + r, left + c, ch);
  return out;
}

ImageTensor augment(const ImageTensor& img, int out_size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> area_dist(0.8, 1.0);
  const double area = area_dist(rng);
  const int base = std::min(img.height, img.width);
  int side = static_cast<int>(std::lround(std::sqrt(area) * base));
  side = std::clamp(side, 1, base);
  std::uniform_int_distribution<int> top_dist(0, img.height - side);
  std::uniform_int_distribution<int> left_dist(0, img.width - side);
  const int top = top_dist(rng);
  const int left = left_dist(rng);
  ImageTensor out = resize_bilinear(crop(img, top, left, side, side), out_size, out_size);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < 0.5) out = hflip(out);
  return out;
}

ImageTensor resize_for_inference(const ImageTensor& img, int out_size) {
  return resize_bilinear(img, out_size, out_size);
}

}  // namespace medcap
