#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scenedec/image_io.hpp"
#include "scenedec/rng.hpp"

using namespace scenedec;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

double quantized(double v) {
  if (v <= 0.0) return 0.0;
  if (v >= 1.0) return 1.0;
  return std::lround(v * 255.0) / 255.0;
}

}  // namespace

TEST_CASE("rgb png round trip quantizes to 8 bits") {
  Rng rng(301);
  std::vector<double> v(3 * 5 * 7);
  for (auto& x : v) x = rng.uniform(-0.2, 1.2);  // includes out-of-range values
  const Tensor img = Tensor::from({3, 5, 7}, v);
  const std::string path = tmp_path("scenedec_io_rgb.png");
  img::write_png(path, img);
  const Tensor back = img::read_png(path);
  REQUIRE(back.shape() == ad::Shape{3, 5, 7});
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(back.values()[i] == doctest::Approx(quantized(v[i])).epsilon(1e-12));
  std::remove(path.c_str());
}

TEST_CASE("gray png round trip") {
  Rng rng(302);
  std::vector<double> v(1 * 4 * 6);
  for (auto& x : v) x = rng.uniform();
  const Tensor img = Tensor::from({1, 4, 6}, v);
  const std::string path = tmp_path("scenedec_io_gray.png");
  img::write_png(path, img);
  const Tensor back = img::read_png(path);
  REQUIRE(back.shape() == ad::Shape{1, 4, 6});
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(back.values()[i] == doctest::Approx(quantized(v[i])).epsilon(1e-12));
  std::remove(path.c_str());
}

TEST_CASE("png bytes are reproducible") {
  Rng rng(303);
  std::vector<double> v(3 * 16 * 16);
  for (auto& x : v) x = rng.uniform();
  const Tensor img = Tensor::from({3, 16, 16}, v);
  const std::string p1 = tmp_path("scenedec_io_a.png");
  const std::string p2 = tmp_path("scenedec_io_b.png");
  img::write_png(p1, img);
  img::write_png(p2, img);
  const std::string b1 = slurp(p1), b2 = slurp(p2);
  CHECK(b1.size() > 0);
  CHECK(b1 == b2);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("scaled map write stretches to full range with a sidecar") {
  const Tensor map = Tensor::from({2, 3}, {0.5, 1.0, 1.5, 2.0, 2.5, 3.0});
  const std::string path = tmp_path("scenedec_io_depth.png");
  img::write_png_scaled(path, map);
  const Tensor back = img::read_png(path);
  REQUIRE(back.shape() == ad::Shape{1, 2, 3});
  CHECK(back.values()[0] == 0.0);  // min
  CHECK(back.values()[5] == 1.0);  // max
  CHECK(back.values()[2] == doctest::Approx(std::lround(0.4 * 255.0) / 255.0)
                                .epsilon(1e-12));

  std::ifstream side(path + ".range.txt");
  REQUIRE(side.good());
  std::string header, key;
  double lo = 0.0, hi = 0.0;
  std::getline(side, header);
  CHECK(header == "range v1");
  side >> key >> lo;
  CHECK(key == "min");
  side >> key >> hi;
  CHECK(key == "max");
  CHECK(lo == 0.5);
  CHECK(hi == 3.0);
  std::remove(path.c_str());
  std::remove((path + ".range.txt").c_str());
}

TEST_CASE("constant map writes zeros and a degenerate range") {
  const Tensor map = Tensor::from({2, 2}, {0.7, 0.7, 0.7, 0.7});
  const std::string path = tmp_path("scenedec_io_flat.png");
  img::write_png_scaled(path, map);
  const Tensor back = img::read_png(path);
  for (double v : back.values()) CHECK(v == 0.0);
  std::ifstream side(path + ".range.txt");
  std::string header, key;
  double lo = 0.0, hi = 0.0;
  std::getline(side, header);
  side >> key >> lo >> key >> hi;
  CHECK(lo == 0.7);
  CHECK(hi == 0.7);
  std::remove(path.c_str());
  std::remove((path + ".range.txt").c_str());
}

TEST_CASE("image io error handling") {
  CHECK_THROWS_AS(img::read_png(tmp_path("scenedec_io_missing.png")), Error);

  const std::string junk = tmp_path("scenedec_io_junk.png");
  {
    std::ofstream out(junk);
    out << "this is not a png";
  }
  CHECK_THROWS_AS(img::read_png(junk), Error);
  std::remove(junk.c_str());

  const Tensor ok = Tensor::from({1, 2, 2}, {0.0, 0.0, 0.0, 0.0});
  CHECK_THROWS_AS(img::write_png("/nonexistent/dir/out.png", ok), Error);
  CHECK_THROWS_AS(
      img::write_png(tmp_path("scenedec_io_bad.png"),
                     Tensor::from({2, 2, 2}, std::vector<double>(8, 0.0))),
      Error);
  CHECK_THROWS_AS(img::write_png(tmp_path("scenedec_io_bad.png"),
                                 Tensor::from({4}, {0.0, 0.0, 0.0, 0.0})),
                  Error);
}
