#include <cmath>
#include <set>
#include <vector>

#include <doctest.h>

#include "scalefit/errors.hpp"
#include "scalefit/synth.hpp"

using namespace scalefit;

namespace {

// Tail mean of a long noisy run: within 0.1% of the floor.
bool rel_ok(double got, double want) { return std::abs(got / want - 1.0) < 1e-3; }

}  // namespace

TEST_CASE("noiseless trajectory solves the loss equation") {
  const auto c = presets::c4();
  const std::vector<double> steps{10, 100, 1000, 10000};
  const RunRecord run = gen_trajectory(c, {1e8}, {2e5}, steps);
  CHECK_NOTHROW(validate_run(run));
  REQUIRE(run.samples.size() == 8);
  for (const auto& s : run.samples) {
    CHECK(std::abs(implicit_residual(c, {1e8}, {s.step}, {2e5}, {s.loss})) <= 1e-12);
    CHECK(s.tokens == s.step * 2e5);
  }
  CHECK(run.split_samples(Split::train).size() == 4);
  CHECK(run.split_samples(Split::train)[2].loss == run.split_samples(Split::test)[2].loss);
}

TEST_CASE("noise is seeded and reproducible") {
  const auto c = presets::c4();
  const auto steps = log_step_grid(1.0, 1e4, 100);
  const auto a = gen_trajectory(c, {1e7}, {1e5}, steps, NoiseSpec::lognormal(0.01, 42));
  const auto b = gen_trajectory(c, {1e7}, {1e5}, steps, NoiseSpec::lognormal(0.01, 42));
  const auto other = gen_trajectory(c, {1e7}, {1e5}, steps, NoiseSpec::lognormal(0.01, 43));
  CHECK(a == b);
  CHECK_FALSE(a == other);
}

TEST_CASE("log-normal noise has the requested scale") {
  const auto c = presets::c4();
  const auto steps = linear_step_grid(20000.0);
  const auto clean = gen_trajectory(c, {1e7}, {1e5}, steps);
  const auto noisy = gen_trajectory(c, {1e7}, {1e5}, steps, NoiseSpec::lognormal(0.01, 5));
  const auto x = clean.split_samples(Split::test);
  const auto y = noisy.split_samples(Split::test);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = std::log(y[i].loss / x[i].loss);
    sum += z;
    sum2 += z * z;
  }
  const double n = static_cast<double>(x.size());
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  CHECK(std::abs(mean) < 4 * 0.01 / std::sqrt(n));
  CHECK(sd == doctest::Approx(0.01).epsilon(0.03));
}

TEST_CASE("warm-up inflation decays to zero") {
  const auto c = presets::c4();
  const std::vector<double> steps{1, 50, 100, 200};
  const auto clean = gen_trajectory(c, {1e7}, {1e5}, steps);
  const auto warm = gen_trajectory(c, {1e7}, {1e5}, steps, {}, WarmupSpec{100.0, 2.0});
  const auto a = clean.split_samples(Split::train);
  const auto b = warm.split_samples(Split::train);
  CHECK(b[0].loss - a[0].loss == doctest::Approx(2.0 * 0.99));
  CHECK(b[1].loss - a[1].loss == doctest::Approx(1.0));
  CHECK(b[2].loss == a[2].loss);
  CHECK(b[3].loss == a[3].loss);
}

TEST_CASE("step grids") {
  const auto lin = linear_step_grid(10.0, 3.0);
  CHECK(lin == std::vector<double>{3, 6, 9, 10});
  const auto lg = log_step_grid(1.0, 1e6, 7);
  CHECK(lg == std::vector<double>{1, 10, 100, 1000, 10000, 100000, 1000000});
  const auto dense = log_step_grid(1.0, 20.0, 100);
  for (std::size_t i = 1; i < dense.size(); ++i) CHECK(dense[i] > dense[i - 1]);
  CHECK(dense.back() == 20.0);
  CHECK_THROWS_AS(log_step_grid(0.5, 10.0, 5), ValidationError);
}

TEST_CASE("batch scan") {
  const auto c = presets::c4();
  const auto steps = log_step_grid(1.0, 1e4, 50);
  const std::vector<double> batches{1e4, 1e5, 1e6};
  const auto runs = gen_batch_scan(c, {1e7}, batches, steps, NoiseSpec::lognormal(0.01, 1));
  REQUIRE(runs.size() == 3);
  std::set<std::string> ids;
  for (const auto& r : runs) ids.insert(r.run_id);
  CHECK(ids.size() == 3);
  CHECK(runs[1].batch_tokens.value == 1e5);
  // Each run draws its own noise stream.
  const double z0 = runs[0].samples[0].loss / solve_loss(c, {1e7}, {1.0}, {1e4}).value;
  const double z1 = runs[1].samples[0].loss / solve_loss(c, {1e7}, {1.0}, {1e5}).value;
  CHECK(z0 != doctest::Approx(z1).epsilon(1e-12));

  const std::vector<double> dup{1e4, 1e4};
  CHECK_THROWS_AS(gen_batch_scan(c, {1e7}, dup, steps), ValidationError);
  const std::vector<double> single{1e4};
  CHECK_THROWS_AS(gen_batch_scan(c, {1e7}, single, steps), ValidationError);
}

TEST_CASE("converged suite") {
  const auto c = presets::mixed_corpus();
  const std::vector<ModelSize> sizes{{1e6}, {1e7}};
  const auto clean = gen_converged_suite(c, sizes);
  CHECK(clean[1].final_loss.value == loss_at_convergence(c, {1e7}).value);
  const auto noisy = gen_converged_suite(c, sizes, NoiseSpec::lognormal(0.01, 9));
  CHECK(noisy[0].final_loss.value != clean[0].final_loss.value);
  CHECK(std::abs(std::log(noisy[0].final_loss.value / clean[0].final_loss.value)) < 0.06);
}

TEST_CASE("fit suite layout") {
  const auto c = presets::c4();
  const auto suite = gen_fit_suite(c);
  REQUIRE(suite.converged.size() == 7);
  CHECK(suite.converged.front().n.value == doctest::Approx(1e6));
  CHECK(suite.converged.back().n.value == doctest::Approx(6e7));
  CHECK(suite.scan.size() == 6);
  CHECK(suite.big_batch.n.value == 1e7);
  for (const auto& run : suite.scan) CHECK_NOTHROW(validate_run(run));
  // The big batch is far above the critical batch everywhere on its curve.
  const auto first = suite.big_batch.split_samples(Split::test).back();
  CHECK(critical_batch(c, {first.loss}).value / suite.big_batch.batch_tokens.value < 1e-8);

  SuiteSpec logs;
  logs.converged_from_logs = true;
  logs.noise = NoiseSpec::lognormal(0.01, 2);
  logs.sizes = {1e6, 1e7};
  const auto from_logs = gen_fit_suite(c, logs);
  // Tail mean of 100 draws at sigma 0.01: standard error 1e-3, plus a 1e-4
  // residual step term.
  for (const auto& r : from_logs.converged) {
    const double floor = loss_at_convergence(c, r.n).value;
    CHECK(std::abs(r.final_loss.value / floor - 1.0 - 1e-4) < 5e-3);
  }
}
