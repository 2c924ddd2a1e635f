#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "dropkit/validate.hpp"
#include "helpers.hpp"

using namespace dropkit;
using testutil::random_tensor;

TEST_CASE("mask frequency report for dropfilter at p = 0.9") {
  Rng rng(1001);
  FreqTestReport rep = check_mask_frequency(DropMethod::dropfilter, 0.9, 100000, rng);
  CHECK(rep.observed_rate >= 0.097);
  CHECK(rep.observed_rate <= 0.103);
  CHECK(rep.expected_rate == Catch::Approx(0.1));
  CHECK(rep.pass);
}

TEST_CASE("mask frequency at p = 1 observes zero drops exactly") {
  Rng rng(1002);
  FreqTestReport rep = check_mask_frequency(DropMethod::dropout, 1.0, 100000, rng);
  CHECK(rep.observed_rate == 0.0);
  CHECK(rep.pass);
}

TEST_CASE("mask frequency for droppath at p = 0.5") {
  Rng rng(1003);
  FreqTestReport rep = check_mask_frequency(DropMethod::droppath, 0.5, 10000, rng);
  CHECK(rep.observed_rate >= 0.485);
  CHECK(rep.observed_rate <= 0.515);
  CHECK(rep.pass);
}

TEST_CASE("mask frequency for scalefilter checks the median split") {
  Rng rng(1004);
  FreqTestReport rep = check_mask_frequency(DropMethod::scalefilter, 0.4, 100000, rng);
  CHECK(rep.expected_rate == 0.5);
  CHECK(rep.pass);
}

TEST_CASE("mask frequency rejects small trial counts") {
  Rng rng(1);
  CHECK_THROWS_AS(check_mask_frequency(DropMethod::dropout, 0.5, 9999, rng), ParameterError);
}

TEST_CASE("expectation is exactly preserved at the identity settings") {
  Rng rng(2001);
  Tensor x = random_tensor(Shape4{2, 3, 3, 3}, rng, 1.0, 2.0);
  CHECK(check_expectation_preserved(DropMethod::dropout, 1.0, x, 1000, rng).max_rel_deviation ==
        0.0);
  CHECK(check_expectation_preserved(DropMethod::dropfilter, 1.0, x, 1000, rng).max_rel_deviation ==
        0.0);
  CHECK(
      check_expectation_preserved(DropMethod::scalefilter, 0.0, x, 1000, rng).max_rel_deviation ==
      0.0);
  CHECK(check_expectation_preserved(DropMethod::droppath, 1.0, x, 1000, rng).max_rel_deviation ==
        0.0);
}

TEST_CASE("expectation bound for dropfilter at p = 0.9") {
  Rng rng(2002);
  Tensor x = random_tensor(Shape4{2, 3, 3, 3}, rng, 1.0, 2.0);
  ExpectationReport rep = check_expectation_preserved(DropMethod::dropfilter, 0.9, x, 10000, rng);
  CHECK(rep.bound == Catch::Approx(4.0 * std::sqrt(0.1 / 0.9 / 10000.0)).epsilon(1e-12));
  CHECK(rep.max_rel_deviation <= rep.bound);
  CHECK(rep.pass);
}

TEST_CASE("expectation bound for scalefilter at q = 0.4") {
  Rng rng(2003);
  Tensor x = random_tensor(Shape4{2, 3, 3, 3}, rng, 1.0, 2.0);
  ExpectationReport rep = check_expectation_preserved(DropMethod::scalefilter, 0.4, x, 10000, rng);
  CHECK(rep.bound == Catch::Approx(4.0 * std::sqrt(0.16 / 3.0 / 10000.0)).epsilon(1e-12));
  CHECK(rep.max_rel_deviation <= rep.bound);
  CHECK(rep.pass);
}

TEST_CASE("expectation check rejects small draw counts") {
  Rng rng(1);
  Tensor x(Shape4{1, 1, 2, 2}, 1.0);
  CHECK_THROWS_AS(check_expectation_preserved(DropMethod::dropout, 0.5, x, 999, rng),
                  ParameterError);
}

TEST_CASE("gradient_check guards its step range and non-finite losses") {
  std::vector<double> v = {1.0};
  std::vector<double> g = {1.0};
  auto loss = [&] { return v[0]; };
  CHECK(gradient_check(loss, v, g, 1e-4) < 1e-10);
  CHECK_THROWS_AS(gradient_check(loss, v, g, 1e-2), ParameterError);
  auto bad = [&] { return std::numeric_limits<double>::quiet_NaN(); };
  CHECK_THROWS_AS(gradient_check(bad, v, g, 1e-4), NumericError);
}

TEST_CASE("checks are reproducible under a fixed seed") {
  Rng a(3001), b(3001);
  FreqTestReport ra = check_mask_frequency(DropMethod::dropfilter, 0.8, 20000, a);
  FreqTestReport rb = check_mask_frequency(DropMethod::dropfilter, 0.8, 20000, b);
  CHECK(ra.observed_rate == rb.observed_rate);
  CHECK(ra.pass == rb.pass);
}
