#include "dermapipe/imageops.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>

namespace dermapipe {
namespace {

enum class Format { Png, Jpeg };

Format sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, path.string());
  unsigned char head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof head);
  const auto got = in.gcount();
  static constexpr unsigned char kPng[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (got >= 8 && std::memcmp(head, kPng, 8) == 0) return Format::Png;
  if (got >= 3 && head[0] == 0xff && head[1] == 0xd8 && head[2] == 0xff) return Format::Jpeg;
  if (got == 0) fail(Errc::CorruptFile, path.string() + ": empty file");
  fail(Errc::UnsupportedFormat, path.string() + ": not a PNG or JPEG");
}

struct PngImage {
  png_image meta{};
  std::vector<std::uint8_t> buffer;
};

// Decodes into the requested libpng simplified format.
PngImage read_png(const std::filesystem::path& path, png_uint_32 format) {
  PngImage out;
  out.meta.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&out.meta, path.c_str()) == 0) {
    const std::string msg = out.meta.message;
    png_image_free(&out.meta);
    fail(Errc::CorruptFile, path.string() + ": " + msg);
  }
  out.meta.format = format;
  out.buffer.resize(PNG_IMAGE_SIZE(out.meta));
  if (png_image_finish_read(&out.meta, nullptr, out.buffer.data(), 0, nullptr) == 0) {
    const std::string msg = out.meta.message;
    png_image_free(&out.meta);
    fail(Errc::CorruptFile, path.string() + ": " + msg);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

[[noreturn]] void on_jpeg_error(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegError*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

// libjpeg reports truncated input only as a warning; treat it as corruption.
void on_jpeg_warning(j_common_ptr info, int level) {
  if (level < 0) on_jpeg_error(info);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

struct JpegPixels {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;
};

JpegPixels read_jpeg(const std::filesystem::path& path, bool header_only) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(Errc::MissingFile, path.string());

  jpeg_decompress_struct info{};
  JpegError err{};
  info.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = on_jpeg_error;
  err.mgr.emit_message = on_jpeg_warning;
  // Every local with a destructor must exist before setjmp.
  JpegPixels out;
  if (setjmp(err.jump) != 0) {
    jpeg_destroy_decompress(&info);
    fail(Errc::CorruptFile, path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_stdio_src(&info, file.get());
  jpeg_read_header(&info, TRUE);
  out.height = static_cast<int>(info.image_height);
  out.width = static_cast<int>(info.image_width);
  if (!header_only) {
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    out.rgb.resize(static_cast<std::size_t>(out.height) * out.width * 3);
    while (info.output_scanline < info.output_height) {
      JSAMPROW row = out.rgb.data() + static_cast<std::size_t>(info.output_scanline) * out.width * 3;
      jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
  }
  jpeg_destroy_decompress(&info);
  return out;
}

ImageTensor from_rgb8(int height, int width, const std::uint8_t* rgb) {
  ImageTensor img(height, width);
  const Eigen::Index n = Eigen::Index(height) * width;
  img.pixels = Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 3, Eigen::RowMajor>>(rgb, n, 3)
                   .cast<float>() /
               255.0f;
  return img;
}

}  // namespace

ImageTensor decode_image(const std::filesystem::path& path) {
  if (sniff(path) == Format::Png) {
    auto png = read_png(path, PNG_FORMAT_RGB);
    return from_rgb8(static_cast<int>(png.meta.height), static_cast<int>(png.meta.width), png.buffer.data());
  }
  auto jpg = read_jpeg(path, false);
  return from_rgb8(jpg.height, jpg.width, jpg.rgb.data());
}

ImageSize probe_image_size(const std::filesystem::path& path) {
  if (sniff(path) == Format::Png) {
    png_image meta{};
    meta.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&meta, path.c_str()) == 0) {
      fail(Errc::CorruptFile, path.string() + ": " + meta.message);
    }
    ImageSize size{static_cast<int>(meta.height), static_cast<int>(meta.width)};
    png_image_free(&meta);
    return size;
  }
  auto jpg = read_jpeg(path, true);
  return {jpg.height, jpg.width};
}

BinaryMask load_mask(const std::filesystem::path& path) {
  if (sniff(path) != Format::Png) fail(Errc::UnsupportedFormat, path.string() + ": masks must be PNG");
  auto png = read_png(path, PNG_FORMAT_GRAY);
  const auto h = static_cast<Eigen::Index>(png.meta.height);
  const auto w = static_cast<Eigen::Index>(png.meta.width);
  const auto gray = Eigen::Map<const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      png.buffer.data(), h, w);
  return (gray.array() >= 128).cast<std::uint8_t>().matrix();
}

namespace {

void write_png_buffer(const std::filesystem::path& path, int height, int width, png_uint_32 format,
                      const std::uint8_t* data) {
  png_image meta{};
  meta.version = PNG_IMAGE_VERSION;
  meta.width = static_cast<png_uint_32>(width);
  meta.height = static_cast<png_uint_32>(height);
  meta.format = format;
  if (png_image_write_to_file(&meta, path.c_str(), 0, data, 0, nullptr) == 0) {
    const std::string msg = meta.message;
    png_image_free(&meta);
    fail(Errc::IoError, path.string() + ": " + msg);
  }
}

}  // namespace

void write_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  if (mask.size() == 0) fail(Errc::ZeroDimension, "cannot write an empty mask");
  const BinaryMask gray = (mask.array() != 0).select(BinaryMask::Constant(mask.rows(), mask.cols(), 255),
                                                    BinaryMask::Zero(mask.rows(), mask.cols()));
  write_png_buffer(path, static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), PNG_FORMAT_GRAY, gray.data());
}

void write_png(const ImageTensor& img, const std::filesystem::path& path) {
  if (img.pixels.size() == 0) fail(Errc::ZeroDimension, "cannot write an empty image");
  const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 3, Eigen::RowMajor> rgb =
      (img.pixels.array().min(1.0f).max(0.0f) * 255.0f).round().cast<std::uint8_t>().matrix();
  write_png_buffer(path, img.height, img.width, PNG_FORMAT_RGB, rgb.data());
}

BinaryMask resize_nearest(const BinaryMask& mask, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) fail(Errc::ZeroDimension, "resize target must be at least 1x1");
  if (mask.size() == 0) fail(Errc::ZeroDimension, "cannot resize an empty mask");
  const auto in_h = mask.rows();
  const auto in_w = mask.cols();
  if (in_h == out_h && in_w == out_w) return mask;
  BinaryMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto sy = std::min<Eigen::Index>(in_h - 1, static_cast<Eigen::Index>((y + 0.5) * in_h / out_h));
    for (int x = 0; x < out_w; ++x) {
      const auto sx = std::min<Eigen::Index>(in_w - 1, static_cast<Eigen::Index>((x + 0.5) * in_w / out_w));
      out(y, x) = mask(sy, sx);
    }
  }
  return out;
}

BinaryMask full_mask(int height, int width) { return BinaryMask::Ones(height, width); }

EmbeddingInput preprocess_for_embedding(const std::filesystem::path& image_path, const BinaryMask* mask,
                                        bool crop_to_bbox) {
  ImageTensor img = decode_image(image_path);
  bool fell_back = false;
  if (mask != nullptr && crop_to_bbox) img = crop_to_mask_bbox(img, *mask);
  img = resize_bilinear(img, kEmbeddingSize, kEmbeddingSize);
  if (mask != nullptr && !crop_to_bbox) {
    auto masked = apply_mask(img, *mask);
    img = std::move(masked.image);
    fell_back = masked.fell_back;
  }
  return {normalize_imagenet(img), fell_back};
}

}  // namespace dermapipe
