#pragma once

// Image ingestion: PNG / binary PGM decoding, grayscale conversion,
// aspect-preserving scale-and-crop, normalization into a model tensor.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "xray/error.hpp"
#include "xray/tensor.hpp"

namespace xray {

/// Interleaved row-major pixels with intensities in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 1, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width) * height; }
  bool empty() const noexcept { return data.empty(); }

  double& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct PreprocessSpec {
  int target_size = 64;
  double mean = 0.0;
  double std = 1.0;
  bool grayscale = true;

  void validate() const {
    if (target_size < 8) fail(ErrorCode::InvalidConfig, "target_size must be >= 8");
    if (!(std > 0.0)) fail(ErrorCode::InvalidConfig, "std must be > 0");
  }

  friend bool operator==(const PreprocessSpec&, const PreprocessSpec&) = default;
};

enum class Resampler { bilinear, nearest };

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline bool is_pnm_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Reads one whitespace-delimited header token, skipping '#' comments.
inline long pnm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && is_pnm_space(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9')
    fail(ErrorCode::MalformedImage, "bad PGM header");
  long v = 0;
  while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
    v = v * 10 + (bytes[pos] - '0');
    if (v > (1L << 24)) fail(ErrorCode::MalformedImage, "PGM header value out of range");
    ++pos;
  }
  return v;
}

inline Image decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  const long w = pnm_token(bytes, pos);
  const long h = pnm_token(bytes, pos);
  const long maxval = pnm_token(bytes, pos);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) fail(ErrorCode::MalformedImage, "bad PGM dimensions");
  if (pos >= bytes.size() || !is_pnm_space(bytes[pos])) fail(ErrorCode::MalformedImage, "bad PGM header");
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * bps;
  if (bytes.size() - pos < need) fail(ErrorCode::MalformedImage, "truncated PGM raster");
  Image img(static_cast<int>(w), static_cast<int>(h), 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned v = bps == 1 ? bytes[pos + i] : (bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1];
    img.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

inline Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    fail(ErrorCode::MalformedImage, std::string("PNG header: ") + png.message);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::MalformedImage, "PNG body: " + msg);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1);
  for (std::size_t i = 0; i < raster.size(); ++i) img.data[i] = raster[i] / 255.0;
  return img;
}

}  // namespace detail

inline Image decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return detail::decode_png(bytes);
  if (bytes.size() >= 4 && std::equal(png_sig, png_sig + 4, bytes.begin()))
    fail(ErrorCode::MalformedImage, "truncated PNG signature");
  if (bytes.size() >= 2 && bytes[0] == 'P') {
    if (bytes[1] == '5') return detail::decode_pgm(bytes);
    fail(ErrorCode::UnsupportedFormat, "only binary PGM (P5) is supported among PNM variants");
  }
  if (bytes.empty()) fail(ErrorCode::MalformedImage, "empty payload");
  fail(ErrorCode::UnsupportedFormat, "unrecognized image signature");
}

inline Image decode_image(const std::string& bytes) {
  return decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

/// 8-bit PNG; 1 channel -> gray, 3 -> RGB, 4 -> RGBA.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  switch (img.channels) {
    case 1: png.format = PNG_FORMAT_GRAY; break;
    case 3: png.format = PNG_FORMAT_RGB; break;
    case 4: png.format = PNG_FORMAT_RGBA; break;
    default: fail(ErrorCode::UnsupportedFormat, "PNG export needs 1, 3 or 4 channels");
  }
  std::vector<std::uint8_t> raster(img.data.size());
  std::transform(img.data.begin(), img.data.end(), raster.begin(), detail::to_byte);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, raster.data(), 0, nullptr))
    fail(ErrorCode::UnsupportedFormat, std::string("PNG encode: ") + png.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, raster.data(), 0, nullptr))
    fail(ErrorCode::UnsupportedFormat, std::string("PNG encode: ") + png.message);
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> encode_pgm(const Image& img) {
  if (img.channels != 1) fail(ErrorCode::UnsupportedFormat, "PGM export needs a grayscale image");
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : img.data) out.push_back(detail::to_byte(v));
  return out;
}

/// ITU-R BT.601 luminance.
inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) fail(ErrorCode::UnsupportedFormat, "grayscale conversion needs 1 or 3 channels");
  Image out(img.width, img.height, 1);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double* p = &img.data[3 * i];
    out.data[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return out;
}

/// Resamples to (w, h) using half-pixel centers (no corner alignment).
inline Image resize(const Image& img, int w, int h, Resampler mode = Resampler::bilinear) {
  if (img.empty()) fail(ErrorCode::ShapeMismatch, "cannot resize an empty image");
  Image out(w, h, img.channels);
  const double sx = static_cast<double>(img.width) / w;
  const double sy = static_cast<double>(img.height) / h;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mode == Resampler::nearest) {
        const int ix = std::min(img.width - 1, static_cast<int>(std::floor((x + 0.5) * sx)));
        const int iy = std::min(img.height - 1, static_cast<int>(std::floor((y + 0.5) * sy)));
        for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(ix, iy, c);
        continue;
      }
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double ax = fx - x0, ay = fy - y0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = (1.0 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
        const double bottom = (1.0 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
        out.at(x, y, c) = (1.0 - ay) * top + ay * bottom;
      }
    }
  }
  return out;
}

/// Geometry of the scale-then-center-crop step, exposed for testing.
struct CropGeometry {
  int scaled_width;
  int scaled_height;
  int offset_x;
  int offset_y;
};

inline CropGeometry crop_geometry(int width, int height, int target) {
  CropGeometry g{};
  if (width <= height) {
    g.scaled_width = target;
    g.scaled_height = std::max(target, static_cast<int>(std::lround(static_cast<double>(height) * target / width)));
  } else {
    g.scaled_height = target;
    g.scaled_width = std::max(target, static_cast<int>(std::lround(static_cast<double>(width) * target / height)));
  }
  g.offset_x = (g.scaled_width - target) / 2;
  g.offset_y = (g.scaled_height - target) / 2;
  return g;
}

/// Scales the shorter side to target_size then center-crops the longer one.
inline Image scale_and_crop(const Image& img, const PreprocessSpec& spec, Resampler mode = Resampler::bilinear) {
  if (img.empty()) fail(ErrorCode::ShapeMismatch, "scale_and_crop on an empty image");
  const int t = spec.target_size;
  if (img.width == t && img.height == t) return img;
  const CropGeometry g = crop_geometry(img.width, img.height, t);
  const Image scaled = resize(img, g.scaled_width, g.scaled_height, mode);
  Image out(t, t, img.channels);
  for (int y = 0; y < t; ++y)
    for (int x = 0; x < t; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = scaled.at(x + g.offset_x, y + g.offset_y, c);
  return out;
}

/// Grayscale target-size image -> [1, T, T] tensor of (v - mean) / std.
inline Tensor normalize(const Image& img, const PreprocessSpec& spec) {
  if (img.channels != 1 || img.width != spec.target_size || img.height != spec.target_size)
    fail(ErrorCode::ShapeMismatch, "normalize expects a grayscale image at the target size");
  Tensor t({1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (std::size_t i = 0; i < img.data.size(); ++i) t.data[i] = (img.data[i] - spec.mean) / spec.std;
  return t;
}

inline Image denormalize(const Tensor& t, const PreprocessSpec& spec) {
  if (t.rank() != 3 || t.shape[0] != 1) fail(ErrorCode::ShapeMismatch, "denormalize expects a [1,H,W] tensor");
  Image img(static_cast<int>(t.shape[2]), static_cast<int>(t.shape[1]), 1);
  for (std::size_t i = 0; i < t.data.size(); ++i) img.data[i] = t.data[i] * spec.std + spec.mean;
  return img;
}

/// decode -> grayscale -> scale_and_crop -> normalize.
inline Tensor preprocess(const Image& img, const PreprocessSpec& spec, Resampler mode = Resampler::bilinear) {
  const Image gray = spec.grayscale ? to_grayscale(img) : img;
  return normalize(scale_and_crop(gray, spec, mode), spec);
}

/// Image -> [1,H,W] tensor without normalization (grayscale input).
inline Tensor image_tensor(const Image& img) {
  if (img.channels != 1) fail(ErrorCode::ShapeMismatch, "image_tensor expects a grayscale image");
  return Tensor({1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)}, img.data);
}

inline Image tensor_image(const Tensor& t) {
  if (t.rank() != 3 || t.shape[0] != 1) fail(ErrorCode::ShapeMismatch, "tensor_image expects a [1,H,W] tensor");
  Image img(static_cast<int>(t.shape[2]), static_cast<int>(t.shape[1]), 1);
  img.data = t.data;
  return img;
}

}  // namespace xray
