#include "scenedec/image_io.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

namespace scenedec::img {

using ad::Tensor;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

}  // namespace

void write_png(const std::string& path, const Tensor& image) {
  check(image.rank() == 3, "write_png expects (C,H,W), got " +
                               ad::shape_str(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  check(C == 1 || C == 3, "write_png supports 1 or 3 channels, got " +
                              std::to_string(C));
  check(H > 0 && W > 0, "write_png image is empty");

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot open " + path + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            nullptr);
  check(png != nullptr, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  std::vector<unsigned char> bytes(H * W * C);
  std::vector<png_bytep> rows(H);
  const auto& v = image.values();
  for (std::size_t y = 0; y < H; ++y) {
    rows[y] = bytes.data() + y * W * C;
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c)
        rows[y][x * C + c] = to_byte(v[(c * H + y) * W + x]);
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng failed writing " + path);
  }
  png_init_io(png, fp.get());
  // Pinned settings keep the emitted bytes identical run to run.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open " + path + " for reading");
  unsigned char sig[8];
  check(std::fread(sig, 1, 8, fp.get()) == 8 && !png_sig_cmp(sig, 0, 8),
        path + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           nullptr);
  check(png != nullptr, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng failed reading " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);        // palette/low-bit to 8-bit
  png_set_strip_16(png);      // 16-bit down to 8
  png_set_strip_alpha(png);   // drop alpha
  png_read_update_info(png, info);

  const std::size_t W = png_get_image_width(png, info);
  const std::size_t H = png_get_image_height(png, info);
  const std::size_t C = png_get_channels(png, info);
  if (C != 1 && C != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(path + ": unsupported channel count " + std::to_string(C));
  }
  std::vector<unsigned char> bytes(H * W * C);
  std::vector<png_bytep> rows(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = bytes.data() + y * W * C;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<double> v(C * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c)
        v[(c * H + y) * W + x] = bytes[(y * W + x) * C + c] / 255.0;
  return Tensor::from({C, H, W}, std::move(v));
}

void write_png_scaled(const std::string& path, const Tensor& map) {
  check(map.rank() == 2, "write_png_scaled expects (H,W), got " +
                             ad::shape_str(map.shape()));
  const auto& v = map.values();
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double span = hi - lo;
  std::vector<double> scaled(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    scaled[i] = span > 0.0 ? (v[i] - lo) / span : 0.0;
  write_png(path, ad::reshape(Tensor::from(map.shape(), std::move(scaled)),
                              {1, map.dim(0), map.dim(1)}));
  std::ofstream side(path + ".range.txt");
  check(side.good(), "cannot write " + path + ".range.txt");
  side.precision(17);
  side << "range v1\nmin " << lo << "\nmax " << hi << "\n";
}

}  // namespace scenedec::img
