#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

#include "dermapipe/error.hpp"

namespace dermapipe {

/// Interleaved RGB image: one row per pixel (row-major scan order), one column
/// per channel. Values are in [0,1] after decode and unbounded after
/// normalization.
template <typename Scalar>
struct Image {
  using Pixels = Eigen::Matrix<Scalar, Eigen::Dynamic, 3, Eigen::RowMajor>;

  int height = 0;
  int width = 0;
  Pixels pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(Pixels::Zero(Eigen::Index(h) * w, 3)) {}

  Scalar& at(int y, int x, int c) { return pixels(Eigen::Index(y) * width + x, c); }
  Scalar at(int y, int x, int c) const { return pixels(Eigen::Index(y) * width + x, c); }
};

using ImageTensor = Image<float>;

/// Strictly binary mask, 1 = foreground.
using BinaryMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::array<double, 3> kImagenetMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImagenetStd{0.229, 0.224, 0.225};

inline constexpr int kSegmenterSize = 448;
inline constexpr int kEmbeddingSize = 224;

/// Masks covering less than this share of pixels fall back to the whole image.
inline constexpr double kMinMaskCoverage = 0.01;

// ---------------------------------------------------------------------------
// File I/O (PNG and JPEG).

struct ImageSize {
  int height = 0;
  int width = 0;
};

/// Decodes PNG or JPEG into RGB scaled by 1/255. Grayscale and alpha inputs
/// are converted to RGB. Throws UnsupportedFormat or CorruptFile.
ImageTensor decode_image(const std::filesystem::path& path);

/// Reads only the header of a PNG or JPEG.
ImageSize probe_image_size(const std::filesystem::path& path);

/// Loads a single-channel mask PNG (color inputs are reduced to luma) and
/// binarizes it: values >= 128 become 1.
BinaryMask load_mask(const std::filesystem::path& path);

/// Writes the mask as 8-bit grayscale, 0 or 255.
void write_mask(const BinaryMask& mask, const std::filesystem::path& path);

/// Writes an RGB image with values clamped to [0,1] and quantized to 8 bits.
void write_png(const ImageTensor& img, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Pixel operations.

/// Bilinear resize with half-pixel centers:
/// src = (dst + 0.5) * in / out - 0.5, clamped to the source grid.
template <typename Scalar>
Image<Scalar> resize_bilinear(const Image<Scalar>& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) fail(Errc::ZeroDimension, "resize target must be at least 1x1");
  if (img.height < 1 || img.width < 1) fail(Errc::ZeroDimension, "cannot resize an empty image");
  if (out_h == img.height && out_w == img.width) return img;

  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
      double src = (d + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const int lo = static_cast<int>(std::floor(src));
      const int hi = std::min(lo + 1, in - 1);
      t[static_cast<std::size_t>(d)] = {lo, hi, src - lo};
    }
    return t;
  };
  const auto ty = taps(img.height, out_h);
  const auto tx = taps(img.width, out_w);

  Image<Scalar> out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const Tap& vy = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      const Tap& vx = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - vx.frac) * img.at(vy.lo, vx.lo, c) + vx.frac * img.at(vy.lo, vx.hi, c);
        const double bot = (1.0 - vx.frac) * img.at(vy.hi, vx.lo, c) + vx.frac * img.at(vy.hi, vx.hi, c);
        out.at(y, x, c) = static_cast<Scalar>((1.0 - vy.frac) * top + vy.frac * bot);
      }
    }
  }
  return out;
}

/// Nearest-neighbor resize, used for masks so they stay binary.
BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w);

/// Per-channel z-score with the ImageNet constants.
template <typename Scalar>
Image<Scalar> normalize_imagenet(const Image<Scalar>& img) {
  using Row = Eigen::Matrix<Scalar, 1, 3>;
  const Row mean = Eigen::Map<const Eigen::Matrix<double, 1, 3>>(kImagenetMean.data()).cast<Scalar>();
  const Row inv_std = Eigen::Map<const Eigen::Matrix<double, 1, 3>>(kImagenetStd.data()).cwiseInverse().cast<Scalar>();
  Image<Scalar> out = img;
  out.pixels = ((img.pixels.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
  return out;
}

/// Inverse of normalize_imagenet.
template <typename Scalar>
Image<Scalar> denormalize_imagenet(const Image<Scalar>& img) {
  using Row = Eigen::Matrix<Scalar, 1, 3>;
  const Row mean = Eigen::Map<const Eigen::Matrix<double, 1, 3>>(kImagenetMean.data()).cast<Scalar>();
  const Row std = Eigen::Map<const Eigen::Matrix<double, 1, 3>>(kImagenetStd.data()).cast<Scalar>();
  Image<Scalar> out = img;
  out.pixels = (img.pixels.array().rowwise() * std.array()).matrix().rowwise() + mean;
  return out;
}

template <typename Scalar>
struct MaskedImage {
  Image<Scalar> image;
  /// True when the mask was empty (or under kMinMaskCoverage) and the whole
  /// image was returned instead.
  bool fell_back = false;
};

/// Zeroes pixels where the mask is 0. The mask is resized nearest-neighbor
/// to the image when the shapes differ. Apply before normalization.
template <typename Scalar>
MaskedImage<Scalar> apply_mask(const Image<Scalar>& img, const BinaryMask& mask);

/// Crops to the bounding box of the mask's foreground. Returns the input
/// unchanged when the mask is empty.
template <typename Scalar>
Image<Scalar> crop_to_mask_bbox(const Image<Scalar>& img, const BinaryMask& mask);

BinaryMask full_mask(int height, int width);

/// decode -> resize to 224x224 -> optional mask -> normalize.
struct EmbeddingInput {
  ImageTensor image;
  bool mask_fell_back = false;
};
EmbeddingInput preprocess_for_embedding(const std::filesystem::path& image_path, const BinaryMask* mask,
                                        bool crop_to_bbox = false);

}  // namespace dermapipe

#include "dermapipe/imageops_impl.hpp"
