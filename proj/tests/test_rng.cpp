#include <catch_amalgamated.hpp>

#include "matsense/rng.hpp"

using matsense::RngStream;

TEST_CASE("same (seed, stream) reproduces the same sequence") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.uniform() == b.uniform());
    REQUIRE(a.gaussian() == b.gaussian());
  }
}

TEST_CASE("distinct streams differ") {
  RngStream a(42, 7);
  RngStream b(42, 8);
  int equal = 0;
  for (int i = 0; i < 100; ++i)
    if (a.uniform() == b.uniform()) ++equal;
  REQUIRE(equal == 0);
}

TEST_CASE("substreams are deterministic and distinct from the parent") {
  RngStream parent(99, 3);
  RngStream c1 = parent.substream(5);
  RngStream c2 = parent.substream(5);
  RngStream c3 = parent.substream(6);
  REQUIRE(c1.stream_id() == c2.stream_id());
  REQUIRE(c1.stream_id() != c3.stream_id());
  REQUIRE(c1.uniform() == c2.uniform());
}

TEST_CASE("uniform stays in [0,1)") {
  RngStream rng(1, 1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("gaussian moments") {
  RngStream rng(2024, 0);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  REQUIRE(std::abs(mean) < 0.01);
  REQUIRE(var == Catch::Approx(1.0).margin(0.02));
}
