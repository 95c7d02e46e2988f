#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>

#include "adanec/image.hpp"

namespace adanec {

void save_png(const Image& img, const std::filesystem::path& path) {
  if (img.empty()) throw IoError("save_png: empty image");
  const int h = img.height();
  const int w = img.width();
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(c, y, x);
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
          throw std::domain_error("save_png: value outside [0,1]");
        }
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
  }
  png_image out;
  std::memset(&out, 0, sizeof(out));
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(w);
  out.height = static_cast<png_uint_32>(h);
  out.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&out, path.c_str(), 0, buf.data(), 0, nullptr)) {
    std::string msg = "save_png: cannot write " + path.string() + ": " + out.message;
    png_image_free(&out);
    throw IoError(msg);
  }
}

Image load_png(const std::filesystem::path& path) {
  png_image in;
  std::memset(&in, 0, sizeof(in));
  in.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&in, path.c_str())) {
    std::string msg = "load_png: cannot read " + path.string() + ": " + in.message;
    png_image_free(&in);
    throw IoError(msg);
  }
  const bool colour = (in.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (in.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool wide = (in.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  if (!colour || alpha || wide) {
    png_image_free(&in);
    throw IoError("load_png: " + path.string() + " is not an 8-bit RGB PNG");
  }
  const int h = static_cast<int>(in.height);
  const int w = static_cast<int>(in.width);
  in.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(in));
  if (!png_image_finish_read(&in, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = "load_png: malformed " + path.string() + ": " + in.message;
    png_image_free(&in);
    throw IoError(msg);
  }
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

}  // namespace adanec
