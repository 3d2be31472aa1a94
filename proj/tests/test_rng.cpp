#include <catch2/catch_amalgamated.hpp>

#include "imposters/rng.hpp"

using namespace imposters;

TEST_CASE("equal seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next() == b.next());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 100; ++i)
    if (a.next() == b.next()) ++equal;
  REQUIRE(equal == 0);
}

TEST_CASE("uniform stays in [0,1)") {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("uniform_int covers the whole range") {
  Rng rng(3);
  bool seen[10] = {};
  for (int i = 0; i < 1000; ++i) seen[rng.uniform_int(0, 10)] = true;
  for (bool s : seen) REQUIRE(s);
}

TEST_CASE("mix_seed separates labeled streams") {
  REQUIRE(mix_seed(5, 0) != mix_seed(5, 1));
  REQUIRE(mix_seed(5, 0) != mix_seed(6, 0));
  REQUIRE(mix_seed(5, 3) == mix_seed(5, 3));
}
