#include <catch2/catch_amalgamated.hpp>

#include "dropkit/tensor.hpp"
#include "helpers.hpp"

using dropkit::Shape4;
using dropkit::Tensor;

TEST_CASE("tensor_new fills every element") {
  Tensor z(Shape4{1, 1, 2, 2}, 0.0);
  REQUIRE(z.size() == 4);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  Tensor ones(Shape4{2, 3, 4, 4}, 1.0);
  REQUIRE(ones.size() == 96);
  for (std::size_t i = 0; i < ones.size(); ++i) CHECK(ones[i] == 1.0);
}

TEST_CASE("tensor_new with a zero dimension is empty") {
  Tensor t(Shape4{1, 0, 5, 5}, 7.0);
  CHECK(t.size() == 0);
  CHECK(t.empty());
}

TEST_CASE("shape product overflow raises size error") {
  Shape4 s{std::size_t(1) << 33, std::size_t(1) << 33, 2, 2};
  CHECK_THROWS_AS(s.count(), dropkit::SizeError);
}

TEST_CASE("indexing is row-major NCHW") {
  Tensor t(Shape4{2, 3, 4, 5});
  t(1, 2, 3, 4) = 42.0;
  CHECK(t[((1 * 3 + 2) * 4 + 3) * 5 + 4] == 42.0);
}

TEST_CASE("broadcast_mul_channels masks whole feature maps") {
  Tensor x(Shape4{1, 2, 2, 2}, 1.0);
  Tensor m(Shape4{1, 2, 1, 1});
  m(0, 0, 0, 0) = 1.0;
  m(0, 1, 0, 0) = 0.0;
  Tensor out = broadcast_mul_channels(x, m);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t w = 0; w < 2; ++w) {
      CHECK(out(0, 0, h, w) == 1.0);
      CHECK(out(0, 1, h, w) == 0.0);
    }
}

TEST_CASE("broadcast_mul_channels with all-ones mask is identity") {
  dropkit::Rng rng(7);
  Tensor x = testutil::random_tensor(Shape4{2, 3, 4, 4}, rng);
  Tensor m(Shape4{2, 3, 1, 1}, 1.0);
  CHECK(broadcast_mul_channels(x, m).same_bits(x));
}

TEST_CASE("broadcast_mul_channels scalar case") {
  Tensor x(Shape4{1, 1, 1, 1}, 3.0);
  Tensor m(Shape4{1, 1, 1, 1}, 2.0);
  CHECK(broadcast_mul_channels(x, m)(0, 0, 0, 0) == 6.0);
}

TEST_CASE("broadcast_mul_channels rejects shape mismatch") {
  Tensor x(Shape4{1, 2, 2, 2});
  CHECK_THROWS_AS(broadcast_mul_channels(x, Tensor(Shape4{1, 3, 1, 1})), dropkit::ShapeError);
  CHECK_THROWS_AS(broadcast_mul_channels(x, Tensor(Shape4{1, 2, 2, 1})), dropkit::ShapeError);
}

TEST_CASE("broadcast_mul_channels is linear in x") {
  dropkit::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = testutil::random_tensor(Shape4{2, 4, 3, 3}, rng);
    Tensor m = testutil::random_tensor(Shape4{2, 4, 1, 1}, rng);
    const double a = rng.uniform(-2.0, 2.0);
    Tensor ax = x;
    for (std::size_t i = 0; i < ax.size(); ++i) ax[i] *= a;
    Tensor lhs = broadcast_mul_channels(ax, m);
    Tensor rhs = broadcast_mul_channels(x, m);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] *= a;
    CHECK(testutil::max_abs_diff(lhs, rhs) < 1e-15);
  }
}

TEST_CASE("mul_broadcast covers per-sample and scalar masks") {
  dropkit::Rng rng(13);
  Tensor x = testutil::random_tensor(Shape4{2, 3, 2, 2}, rng);

  Tensor per_sample(Shape4{2, 1, 1, 1});
  per_sample(0, 0, 0, 0) = 0.0;
  per_sample(1, 0, 0, 0) = 2.0;
  Tensor out = mul_broadcast(x, per_sample);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) {
        CHECK(out(0, c, h, w) == 0.0);
        CHECK(out(1, c, h, w) == 2.0 * x(1, c, h, w));
      }

  Tensor scalar(Shape4{1, 1, 1, 1}, 1.0);
  CHECK(mul_broadcast(x, scalar).same_bits(x));
}
