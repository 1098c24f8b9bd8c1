#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "rsedit/pyramid.hpp"
#include "support.hpp"

using namespace rsedit;

namespace {

// Repeated division of the finest side by r with round-half-up, coarsest first.
std::vector<int> side_chain(int finest, double r, int min_dim) {
  std::vector<int> sides{finest};
  while (true) {
    const int next = static_cast<int>(static_cast<long long>(sides.back() / r + 0.5));
    if (next < min_dim || next == sides.back()) break;
    sides.push_back(next);
  }
  return {sides.rbegin(), sides.rend()};
}

// 2-D cubic convolution written out per output pixel (no separability).
double keys(double x) {
  x = std::fabs(x);
  if (x <= 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
  if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
  return 0;
}

double reference_bicubic(const Image<double>& img, int c, double sy, double sx) {
  const int by = static_cast<int>(std::floor(sy)), bx = static_cast<int>(std::floor(sx));
  long double acc = 0;
  for (int j = by - 1; j <= by + 2; ++j) {
    for (int i = bx - 1; i <= bx + 2; ++i) {
      const int yy = std::min(std::max(j, 0), img.height() - 1);
      const int xx = std::min(std::max(i, 0), img.width() - 1);
      acc += static_cast<long double>(keys(sy - j)) * keys(sx - i) * img.at(c, yy, xx);
    }
  }
  return static_cast<double>(acc);
}

}  // namespace

TEST_CASE("pyramid dims follow repeated division by r") {
  const auto dims = pyramid_dims({256, 256}, {});
  const auto oracle = side_chain(256, 4.0 / 3.0, 24);
  REQUIRE(dims.size() == oracle.size());
  for (std::size_t s = 0; s < dims.size(); ++s) {
    CHECK(dims[s].height == oracle[s]);
    CHECK(dims[s].width == oracle[s]);
  }
  CHECK(dims.size() == 9);
  CHECK(dims.front() == Dims{26, 26});
  CHECK(dims.back() == Dims{256, 256});

  const auto rect = pyramid_dims({48, 96}, {});
  CHECK(rect.front().min_side() >= 24);
  for (std::size_t s = 1; s < rect.size(); ++s) {
    CHECK(rect[s - 1].height == static_cast<int>(std::floor(rect[s].height * 0.75 + 0.5)));
    CHECK(rect[s - 1].width == static_cast<int>(std::floor(rect[s].width * 0.75 + 0.5)));
  }
}

TEST_CASE("a min_dim-sized image gives a single scale") {
  const auto img = test::pattern_image({24, 24});
  const auto p = build_pyramid(img);
  REQUIRE(p.num_scales() == 1);
  CHECK(p.scales[0] == img);
  CHECK(p.blurry[0] == p.scales[0]);
}

TEST_CASE("blurry pyramid is the upsampled coarser scale") {
  const auto img = test::pattern_image({61, 47});
  const auto p = build_pyramid(img);
  REQUIRE(p.num_scales() >= 3);
  CHECK(p.scales.back() == img);
  CHECK(p.blurry[0] == p.scales[0]);
  for (int s = 1; s < p.num_scales(); ++s) {
    CHECK(p.blurry[s].dims() == p.scales[s].dims());
    CHECK(p.blurry[s] == resample(p.scales[s - 1], p.dims(s)));
  }
}

TEST_CASE("pyramid rejects small, non-finite or misconfigured input") {
  CHECK_THROWS_AS(build_pyramid(test::pattern_image({23, 40})), InvalidInput);
  auto bad = test::pattern_image({30, 30});
  bad.at(1, 3, 4) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(build_pyramid(bad), InvalidInput);
  CHECK_THROWS_AS(pyramid_dims({64, 64}, {1.0, 24}), InvalidConfig);
}

TEST_CASE("resample of a constant stays constant") {
  const auto img = test::constant_image({9, 13}, 0.25f, -0.5f, 0.75f);
  for (Dims d : {Dims{4, 4}, Dims{17, 29}, Dims{9, 40}}) {
    const auto out = resample(img, d);
    for (int c = 0; c < 3; ++c) {
      for (float v : out.plane(c)) CHECK(std::abs(v - img.at(c, 0, 0)) < 1e-6f);
    }
  }
}

TEST_CASE("resample to the same dims is an exact copy") {
  const auto img = test::random_image({11, 7}, 3, 4);
  CHECK(resample(img, img.dims()) == img);
  CHECK_THROWS_AS(resample(img, Dims{0, 5}), InvalidInput);
}

TEST_CASE("2x2 ramp upsampled to 4x4 matches a direct bicubic reference") {
  Image<double> ramp({2, 2}, 1);
  ramp.at(0, 0, 0) = 0.0;
  ramp.at(0, 0, 1) = 1.0;
  ramp.at(0, 1, 0) = 1.0;
  ramp.at(0, 1, 1) = 2.0;
  const auto up = resample(ramp, {4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double sy = (y + 0.5) * 0.5 - 0.5, sx = (x + 0.5) * 0.5 - 0.5;
      CHECK(std::abs(up.at(0, y, x) - reference_bicubic(ramp, 0, sy, sx)) < 1e-6);
    }
  }
  // Downsampling a random image against the same reference.
  const auto img = test::random_image<double>({10, 9}, 2, 8);
  const auto down = resample(img, {7, 5});
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < 7; ++y) {
      for (int x = 0; x < 5; ++x) {
        const double sy = (y + 0.5) * 10.0 / 7.0 - 0.5, sx = (x + 0.5) * 9.0 / 5.0 - 0.5;
        CHECK(std::abs(down.at(c, y, x) - reference_bicubic(img, c, sy, sx)) < 1e-9);
      }
    }
  }
}
