#pragma once

// Template definitions for imageops.hpp.

#include "dermapipe/log.hpp"

namespace dermapipe {

template <typename Scalar>
MaskedImage<Scalar> apply_mask(const Image<Scalar>& img, const BinaryMask& mask) {
  BinaryMask resized;
  const BinaryMask* m = &mask;
  if (mask.size() == 0) {
    logger().warn("empty mask; using the whole image");
    return {img, true};
  }
  if (mask.rows() != img.height || mask.cols() != img.width) {
    resized = resize_nearest(mask, img.height, img.width);
    m = &resized;
  }

  const auto total = static_cast<double>(m->size());
  const auto on = static_cast<double>((m->array() != 0).count());
  if (total == 0.0 || on / total < kMinMaskCoverage) {
    logger().warn("mask covers {:.2f}% of the image; using the whole image", total == 0.0 ? 0.0 : 100.0 * on / total);
    return {img, true};
  }

  MaskedImage<Scalar> out{img, false};
  const Eigen::Index n = Eigen::Index(img.height) * img.width;
  const auto flat = Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>>(m->data(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (flat(i) == 0) out.image.pixels.row(i).setZero();
  }
  return out;
}

template <typename Scalar>
Image<Scalar> crop_to_mask_bbox(const Image<Scalar>& img, const BinaryMask& mask) {
  const BinaryMask m = (mask.rows() == img.height && mask.cols() == img.width)
                           ? mask
                           : resize_nearest(mask, img.height, img.width);
  int y0 = img.height, y1 = -1, x0 = img.width, x1 = -1;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (m(y, x) != 0) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
    }
  }
  if (y1 < 0) return img;
  Image<Scalar> out(y1 - y0 + 1, x1 - x0 + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      out.pixels.row(Eigen::Index(y - y0) * out.width + (x - x0)) = img.pixels.row(Eigen::Index(y) * img.width + x);
    }
  }
  return out;
}

}  // namespace dermapipe
