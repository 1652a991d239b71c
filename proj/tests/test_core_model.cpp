#include <cmath>
#include <random>

#include <doctest.h>

#include "scalefit/core_model.hpp"
#include "scalefit/errors.hpp"

using namespace scalefit;

namespace {

double rel(double a, double b) { return std::abs(a / b - 1.0); }

}  // namespace

TEST_CASE("preset constants") {
  const auto c4 = presets::c4();
  CHECK(c4.alpha_n == 0.076);
  CHECK(c4.alpha_s == 0.67);
  CHECK(c4.alpha_b == 0.205);
  CHECK(c4.n_c == 1.5e14);
  CHECK(c4.s_c == 2.6e3);
  CHECK(c4.b_star == 1.7e8);
  CHECK(c4.meta.at("dataset_tag") == "c4");
  CHECK(c4.meta.at("context_length") == "1024");

  const auto mixed = presets::mixed_corpus();
  CHECK(mixed.alpha_n == 0.0615);
  CHECK(mixed.alpha_s == 0.672);
  CHECK(mixed.alpha_b == 0.139);
  CHECK(mixed.n_c == 4.85e17);
  CHECK(mixed.s_c == 1.54e3);
  CHECK(mixed.b_star == 2.15e11);
  CHECK(mixed.meta.at("context_length") == "4096");
}

TEST_CASE("constants validation") {
  auto c = presets::c4();
  CHECK_NOTHROW(c.validate());
  c.alpha_b = 0.0;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c = presets::c4();
  c.n_c = std::nan("");
  CHECK_THROWS_AS(c.validate(), DomainError);
  c = presets::c4();
  c.alpha_s = 2.5;
  CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("converged loss") {
  const auto c4 = presets::c4();
  CHECK(rel(loss_at_convergence(c4, {1e9}).value, 2.473904529152120768) < 1e-14);
  CHECK(rel(loss_at_convergence(presets::mixed_corpus(), {1e9}).value, 3.421157883176254433) <
        1e-14);
  // N = n_c gives exactly 1.
  CHECK(loss_at_convergence(c4, {1.5e14}).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(loss_at_convergence(c4, {0.0}), DomainError);
  CHECK_THROWS_AS(loss_at_convergence(c4, {-5.0}), DomainError);
}

TEST_CASE("critical batch") {
  const auto c4 = presets::c4();
  CHECK(rel(critical_batch(c4, {2.0}).value, 5781092.497439029) < 1e-13);
  CHECK(rel(critical_batch(c4, {2.6}).value, 1607639.5704342732) < 1e-13);
  CHECK_THROWS_AS(critical_batch(c4, {0.0}), DomainError);
}

TEST_CASE("minimum steps at L = 2.6 for a 1e9 model") {
  const auto c4 = presets::c4();
  const double excess = 2.6 - loss_at_convergence(c4, {1e9}).value;
  const double s_min = c4.s_c * std::pow(excess, -1.0 / c4.alpha_s);
  CHECK(rel(s_min, 57175.88803123248) < 1e-12);
  CHECK(loss_at_min_steps(c4, {1e9}, {s_min}).value == doctest::Approx(2.6).epsilon(1e-13));
}

TEST_CASE("step conversions") {
  const StepCount s{12345.0};
  const TokenCount b{3e5};
  const TokenCount bc{1.2e6};
  const StepCount s_min = min_steps_from_steps(s, b, bc);
  CHECK(s_min.value == doctest::Approx(12345.0 / 5.0).epsilon(1e-15));
  CHECK(steps_from_min_steps(s_min, b, bc).value == doctest::Approx(12345.0).epsilon(1e-15));
  CHECK(min_tokens(s_min, bc).value == doctest::Approx(s_min.value * 1.2e6).epsilon(1e-15));
  CHECK_THROWS_AS(min_steps_from_steps(s, {0.0}, bc), DomainError);
}

TEST_CASE("trade-off curve") {
  CHECK(tradeoff_token_ratio(2.0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(tradeoff_token_ratio(3.0) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(tradeoff_token_ratio(1.25) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS_AS(tradeoff_token_ratio(1.0), DomainError);
  CHECK_THROWS_AS(tradeoff_token_ratio(0.5), DomainError);
}

TEST_CASE("implicit residual and derivative oracles") {
  const auto c4 = presets::c4();
  CHECK(implicit_residual(c4, {1e9}, {1e5}, {1e6}, {3.0}) ==
        doctest::Approx(-0.39755309770750834).epsilon(1e-12));
  CHECK(implicit_residual_derivative(c4, {1e9}, {1e5}, {1e6}, {3.0}) ==
        doctest::Approx(-1.0622342036464292).epsilon(1e-12));
  const auto mixed = presets::mixed_corpus();
  CHECK(implicit_residual(mixed, {1e9}, {1e5}, {1e6}, {3.0}) ==
        doctest::Approx(1.5756908655148301).epsilon(1e-12));
  CHECK(implicit_residual_derivative(mixed, {1e9}, {1e5}, {1e6}, {3.0}) ==
        doctest::Approx(-2.8374060710825804).epsilon(1e-12));
}

TEST_CASE("solver oracles") {
  struct Case {
    double n, s, b, c4_loss, mixed_loss;
  };
  const Case cases[] = {
      {1e9, 1e5, 1e6, 2.6344314553935878, 3.8020704840401400},
      {2e9, 3e4, 5e5, 2.7807004890205754, 4.1594442483545764},
      {1e7, 1e3, 1e5, 5.7972018282690192, 7.0959360797328087},
  };
  for (const auto& k : cases) {
    CHECK(std::abs(solve_loss(presets::c4(), {k.n}, {k.s}, {k.b}).value - k.c4_loss) < 1e-10);
    CHECK(std::abs(solve_loss(presets::mixed_corpus(), {k.n}, {k.s}, {k.b}).value -
                   k.mixed_loss) < 1e-10);
  }
}

TEST_CASE("solver rejects invalid inputs") {
  const auto c4 = presets::c4();
  CHECK_THROWS_AS(solve_loss(c4, {0.0}, {1e3}, {1e5}), DomainError);
  CHECK_THROWS_AS(solve_loss(c4, {1e9}, {-1.0}, {1e5}), DomainError);
  CHECK_THROWS_AS(solve_loss(c4, {1e9}, {1e3}, {0.0}), DomainError);
  CHECK_THROWS_AS(solve_loss(c4, {1e9}, {1e3}, {1e5}, SolveOptions{0.0, 200, 40}), DomainError);
}

TEST_CASE("solver: extreme magnitudes stay finite") {
  const auto mixed = presets::mixed_corpus();
  const double l = solve_loss(mixed, {1e15}, {1e9}, {1e12}).value;
  CHECK(std::isfinite(l));
  CHECK(l > loss_at_convergence(mixed, {1e15}).value);
  const double early = solve_loss(mixed, {1e3}, {1.0}, {1.0}).value;
  CHECK(std::isfinite(early));
  CHECK(std::abs(implicit_residual(mixed, {1e3}, {1.0}, {1.0}, {early})) <= 1e-10);
}

TEST_CASE("power ratio avoids overflow") {
  CHECK(power_ratio(1e300, 1e-300, 0.01) == doctest::Approx(std::exp(0.01 * 600 * std::log(10.0))));
  CHECK(power_ratio(2.0, 8.0, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("property: loss decreases in N, S and B") {
  const auto c4 = presets::c4();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double n = std::pow(10.0, 6.0 + 6.0 * u(rng));
    const double s = std::pow(10.0, 2.0 + 5.0 * u(rng));
    const double b = std::pow(10.0, 4.0 + 6.0 * u(rng));
    const double base = solve_loss(c4, {n}, {s}, {b}).value;
    CHECK(solve_loss(c4, {n * 1.5}, {s}, {b}).value < base);
    CHECK(solve_loss(c4, {n}, {s * 1.5}, {b}).value < base);
    CHECK(solve_loss(c4, {n}, {s}, {b * 1.5}).value < base);
    CHECK(base > loss_at_convergence(c4, {n}).value);
  }
}
