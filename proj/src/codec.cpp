// PNG and JPEG decoding/encoding on top of libpng's simplified API and libjpeg.

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <array>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "cast/errors.hpp"
#include "cast/image.hpp"

namespace cast {
namespace {

enum class Codec { png, jpeg, unknown };

Codec sniff(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DecodeError("cannot open image file '" + path.string() + "'");
  }
  std::array<unsigned char, 8> magic{};
  in.read(reinterpret_cast<char*>(magic.data()), magic.size());
  const auto got = in.gcount();
  static constexpr std::array<unsigned char, 8> kPng{0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (got == 8 && magic == kPng) {
    return Codec::png;
  }
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) {
    return Codec::jpeg;
  }
  return Codec::unknown;
}

torch::Tensor decode_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DecodeError("cannot decode PNG '" + path.string() + "': " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  auto out = torch::empty({static_cast<int64_t>(image.height), static_cast<int64_t>(image.width), 3}, torch::kUInt8);
  const png_color background{0, 0, 0};
  if (!png_image_finish_read(&image, &background, out.data_ptr<uint8_t>(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Corrupt-data warnings (e.g. premature end of file) are fatal for us.
void jpeg_emit_message(j_common_ptr cinfo, int level) {
  if (level < 0) {
    jpeg_error_exit(cinfo);
  }
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

torch::Tensor decode_jpeg(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) {
    throw DecodeError("cannot open image file '" + path.string() + "'");
  }
  jpeg_decompress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  jerr.pub.emit_message = jpeg_emit_message;
  std::vector<uint8_t> pixels;
  // No objects with non-trivial destructors may be created between setjmp and
  // the last libjpeg call.
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError("cannot decode JPEG '" + path.string() + "': " + jerr.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const size_t stride = static_cast<size_t>(cinfo.output_width) * 3;
  pixels.resize(stride * cinfo.output_height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<size_t>(cinfo.output_scanline) * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  const int64_t height = cinfo.output_height;
  const int64_t width = cinfo.output_width;
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return torch::from_blob(pixels.data(), {height, width, 3}, torch::kUInt8).clone();
}

torch::Tensor as_contiguous_hwc(const torch::Tensor& rgb8) {
  if (rgb8.dim() != 3 || rgb8.scalar_type() != torch::kUInt8 || (rgb8.size(2) != 3 && rgb8.size(2) != 1)) {
    throw ArgumentError("expected a uint8 [height, width, 1|3] tensor");
  }
  return rgb8.contiguous();
}

}  // namespace

torch::Tensor decode_image_file(const std::filesystem::path& path) {
  switch (sniff(path)) {
    case Codec::png:
      return decode_png(path);
    case Codec::jpeg:
      return decode_jpeg(path);
    case Codec::unknown:
      break;
  }
  throw DecodeError("unsupported or corrupt image file '" + path.string() + "' (expected PNG or JPEG)");
}

void write_png(const torch::Tensor& rgb8, const std::filesystem::path& path) {
  const auto pixels = as_contiguous_hwc(rgb8);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(pixels.size(1));
  image.height = static_cast<png_uint_32>(pixels.size(0));
  image.format = pixels.size(2) == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, pixels.data_ptr<uint8_t>(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

void write_jpeg(const torch::Tensor& rgb8, const std::filesystem::path& path, int quality) {
  const auto pixels = as_contiguous_hwc(rgb8);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  jpeg_compress_struct cinfo;
  JpegErrorManager jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_compress(&cinfo);
    throw IoError("cannot write JPEG '" + path.string() + "': " + jerr.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, file.get());
  cinfo.image_width = static_cast<JDIMENSION>(pixels.size(1));
  cinfo.image_height = static_cast<JDIMENSION>(pixels.size(0));
  cinfo.input_components = static_cast<int>(pixels.size(2));
  cinfo.in_color_space = pixels.size(2) == 3 ? JCS_RGB : JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const size_t stride = static_cast<size_t>(cinfo.image_width) * cinfo.input_components;
  auto* base = pixels.data_ptr<uint8_t>();
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = base + static_cast<size_t>(cinfo.next_scanline) * stride;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
}

}  // namespace cast
