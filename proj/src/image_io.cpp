#include "mama/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "mama/errors.hpp"

namespace mama {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix parse_pgm(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto next_token = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > 1'000'000) break;
    }
    if (!any) throw IoError("malformed PGM header in '" + path.string() + "'");
    return v;
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw IoError("unsupported PGM header in '" + path.string() + "'");
  ++pos;  // single whitespace byte before the raster
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * bpp;
  if (bytes.size() < pos + need) throw IoError("truncated PGM raster in '" + path.string() + "'");
  Matrix img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const unsigned v = bpp == 2 ? (unsigned(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
    img[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

Matrix read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  const std::string s = path.string();
  if (!png_image_begin_read_from_file(&image, s.c_str()))
    throw IoError("cannot read PNG '" + s + "': " + image.message);
  // libpng's simplified API converts any colour type to linear 16-bit gray.
  image.format = PNG_FORMAT_LINEAR_Y;
  std::vector<png_uint_16> buf(PNG_IMAGE_SIZE(image) / sizeof(png_uint_16));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG '" + s + "': " + image.message);
  }
  Matrix img(image.height, image.width);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = buf[i] / 65535.0;
  return img;
}

}  // namespace

Matrix read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return parse_pgm(bytes, path);
  static const unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, reinterpret_cast<const unsigned char*>(bytes.data())))
    return read_png(path);
  throw IoError("'" + path.string() + "' is neither a P5 PGM nor a PNG");
}

void write_pgm(const std::filesystem::path& path, const Matrix& image, int bits) {
  if (bits != 8 && bits != 16) throw ConfigError("PGM bit depth must be 8 or 16");
  if (image.empty()) throw ShapeError("cannot write an empty image");
  const unsigned maxval = bits == 8 ? 255u : 65535u;
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n" +
                    std::to_string(maxval) + "\n";
  for (double v : image.values()) {
    if (!std::isfinite(v)) v = 0.0;
    const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
    if (bits == 16) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Matrix resize_bilinear(const Matrix& image, std::size_t rows, std::size_t cols) {
  if (image.empty() || rows == 0 || cols == 0) throw ShapeError("resize_bilinear: empty shape");
  if (image.rows() == rows && image.cols() == cols) return image;
  Matrix out(rows, cols);
  const double sy = static_cast<double>(image.rows()) / rows;
  const double sx = static_cast<double>(image.cols()) / cols;
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.rows() - 1.0);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, image.rows() - 1);
    const double fy = y - y0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.cols() - 1.0);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, image.cols() - 1);
      const double fx = x - x0;
      out(r, c) = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                  fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
    }
  }
  return out;
}

}  // namespace mama
