#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "stack_gradcheck.hpp"
#include "support.hpp"
#include "xmh/errors.hpp"
#include "xmh/losses.hpp"

using namespace xmh;
using namespace xmh::testing;

namespace {

Matrix random_signs_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  std::bernoulli_distribution coin(0.5);
  for (double& v : m.data()) v = coin(rng) ? 1.0 : -1.0;
  return m;
}

Matrix random_binary(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  std::bernoulli_distribution coin(0.4);
  for (double& v : m.data()) v = coin(rng) ? 1.0 : 0.0;
  return m;
}

ModalityOutput random_output(std::mt19937_64& rng, std::size_t m, std::size_t k, std::size_t c) {
  return {random_matrix(rng, m, 8), random_matrix(rng, m, k, -1.0, 1.0), random_matrix(rng, m, c, 0.0, 1.0)};
}

}  // namespace

TEST_CASE("pairwise_nll examples") {
  const Matrix zero(1, 3, 0.0);
  CHECK(pairwise_nll(zero, zero, Matrix(1, 1, 1.0)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(pairwise_nll(zero, zero, Matrix(1, 1, 0.0)) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK_THROWS_AS(pairwise_nll(Matrix(2, 3), Matrix(2, 4), Matrix(2, 2)), ContractError);
  CHECK_THROWS_AS(pairwise_nll(Matrix(2, 3), Matrix(4, 3), Matrix(2, 2)), ContractError);
}

TEST_CASE("pairwise_nll matches the double-loop oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = random_matrix(rng, 4, 6);
    const Matrix b = random_matrix(rng, 4, 6);
    const Matrix s = random_binary(rng, 4, 4);
    const double oracle = oracle_pairwise_nll(a, b, s);
    CHECK(std::abs(pairwise_nll(a, b, s) - oracle) <= 1e-10 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("pairwise_nll is monotone in theta with the sign set by S") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = random_matrix(rng, 1, 3);
    const Matrix b = random_matrix(rng, 1, 3);
    // Scaling a along b raises theta by delta * |b|^2 / 2.
    Matrix a2 = a;
    for (std::size_t k = 0; k < 3; ++k) a2(0, k) += 0.01 * b(0, k);
    CHECK(pairwise_nll(a2, b, Matrix(1, 1, 1.0)) < pairwise_nll(a, b, Matrix(1, 1, 1.0)));
    CHECK(pairwise_nll(a2, b, Matrix(1, 1, 0.0)) > pairwise_nll(a, b, Matrix(1, 1, 0.0)));
  }
}

TEST_CASE("pairwise_nll stays finite for large inner products") {
  const Matrix a(1, 4, 40.0);
  const Matrix b(1, 4, 40.0);
  const double v = pairwise_nll(a, b, Matrix(1, 1, 0.0));
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(3200.0));
  CHECK(pairwise_nll(a, b, Matrix(1, 1, 1.0)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("quantization_loss") {
  const Matrix b = Matrix::from_rows({{1, -1}, {-1, 1}});
  CHECK(quantization_loss(b, b) == 0.0);
  CHECK(quantization_loss(Matrix(1, 16, 0.0), Matrix(1, 16, 1.0)) == 16.0);
  CHECK_THROWS_AS(quantization_loss(b, Matrix(2, 2, 0.5)), ContractError);
  CHECK_THROWS_AS(quantization_loss(Matrix(2, 3), b), ShapeError);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix h = random_matrix(rng, 5, 8, -1.0, 1.0);
    Matrix sign = h;
    for (double& v : sign.data()) v = v >= 0 ? 1.0 : -1.0;
    double oracle = 0.0;
    for (double v : h.data()) oracle += (std::abs(v) - 1.0) * (std::abs(v) - 1.0);
    CHECK(std::abs(quantization_loss(h, sign) - oracle) < 1e-10);
  }
}

TEST_CASE("classification_loss") {
  const Matrix truth = Matrix::from_rows({{0, 1, 0, 0}});
  CHECK(classification_loss(truth, truth) == 0.0);
  CHECK(classification_loss(Matrix(1, 4, 0.5), truth) == 1.0);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix p = random_matrix(rng, 5, 4, 0.0, 1.0);
    const Matrix t = random_binary(rng, 5, 4);
    CHECK(std::abs(classification_loss(p, t) - oracle_squared_diff(p, t)) < 1e-10);
  }
}

TEST_CASE("adversarial objective") {
  const std::vector<double> ones(5, 1.0), zeros(5, 0.0);
  CHECK(adversarial_objective(ones, zeros) == 0.0);
  CHECK(adversarial_objective(zeros, ones) == 10.0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> real(7), fake(4);
    for (double& v : real) v = u(rng);
    for (double& v : fake) v = u(rng);
    double oracle = 0.0;
    for (double v : real) oracle += (v - 1.0) * (v - 1.0);
    for (double v : fake) oracle += v * v;
    CHECK(std::abs(adversarial_objective(real, fake) - oracle) < 1e-12);

    Tape t;
    const NodeId r = t.constant(Matrix(7, 1, real));
    const NodeId f = t.constant(Matrix(4, 1, fake));
    const double taped = t.scalar(t.add(adversarial_real_term(t, r), adversarial_fake_term(t, f)));
    CHECK(std::abs(taped - oracle) < 1e-12);
  }
}

TEST_CASE("generator objective examples") {
  std::mt19937_64 rng(9);
  const ModalityOutput lab = random_output(rng, 3, 4, 3);
  const ModalityOutput img = random_output(rng, 3, 4, 3);
  const Matrix s = random_binary(rng, 3, 3);
  const Matrix b = random_signs_matrix(rng, 3, 4);
  const Matrix truth = random_binary(rng, 3, 3);

  CHECK(generator_objective(img, lab, s, b, truth, HyperParams{0, 0, 0, 0}, GeneratorRole::kImage).total == 0.0);

  ModalityOutput exact = img;
  exact.hash = b;
  CHECK(generator_objective(exact, lab, s, b, truth, HyperParams{0, 0, 1, 0}, GeneratorRole::kImage).total == 0.0);

  const HyperParams hp{};
  for (GeneratorRole role : {GeneratorRole::kLabel, GeneratorRole::kImage, GeneratorRole::kText}) {
    const ModalityOutput& out = role == GeneratorRole::kLabel ? lab : img;
    const LossReport r = generator_objective(out, lab, s, b, truth, hp, role);
    const double j1 = oracle_pairwise_nll(lab.semantic, out.semantic, s);
    const double j2 = oracle_pairwise_nll(lab.hash, out.hash, s);
    const double j3 = oracle_squared_diff(out.hash, b);
    const double j4 = oracle_squared_diff(out.labels, truth);
    CHECK(std::abs(r.j1 - j1) < 1e-12 * std::max(1.0, j1));
    CHECK(std::abs(r.j2 - j2) < 1e-12 * std::max(1.0, j2));
    CHECK(std::abs(r.j3 - j3) < 1e-12);
    CHECK(std::abs(r.j4 - j4) < 1e-12);
    CHECK(std::abs(r.total - (j1 + j2 + 1e-4 * j3 + 1e-4 * j4)) < 1e-12 * std::max(1.0, r.total));
  }
}

TEST_CASE("generator objective is linear in alpha") {
  std::mt19937_64 rng(10);
  const ModalityOutput lab = random_output(rng, 3, 4, 3);
  const ModalityOutput img = random_output(rng, 3, 4, 3);
  const Matrix s = random_binary(rng, 3, 3);
  const Matrix b = random_signs_matrix(rng, 3, 4);
  const Matrix truth = random_binary(rng, 3, 3);
  auto total = [&](double alpha) {
    HyperParams hp;
    hp.alpha = alpha;
    return generator_objective(img, lab, s, b, truth, hp, GeneratorRole::kImage).total;
  };
  const double base = total(0.0);
  const double slope = total(1.0) - base;
  CHECK(total(2.5) == doctest::Approx(base + 2.5 * slope).epsilon(1e-12));
}

TEST_CASE("label role pairs the label network with itself") {
  Tape t;
  const GeneratorNodes a{t.constant(Matrix(2, 3)), t.constant(Matrix(2, 4)), t.constant(Matrix(2, 2))};
  const GeneratorNodes b{t.constant(Matrix(2, 3)), t.constant(Matrix(2, 4)), t.constant(Matrix(2, 2))};
  CHECK_THROWS_AS(generator_objective(t, a, b, Matrix(2, 2), Matrix(2, 4, 1.0), Matrix(2, 2), HyperParams{},
                                      GeneratorRole::kLabel),
                  ContractError);
}

TEST_CASE("compose_totals") {
  const Totals zero = compose_totals(0, 0, 0, 0, 0);
  CHECK(zero.generator == 0.0);
  CHECK(zero.adversarial == 0.0);
  const Totals t = compose_totals(1, 2, 3, 4, 5);
  CHECK(t.generator == 6.0);
  CHECK(t.adversarial == 9.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 20; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng), e = u(rng);
    const Totals r = compose_totals(a, b, c, d, e);
    CHECK(r.generator == doctest::Approx(a + b + c).epsilon(1e-15));
    CHECK(r.adversarial == doctest::Approx(d + e).epsilon(1e-15));
  }
}

TEST_CASE("loss gradients through full stacks match finite differences") {
  std::mt19937_64 rng(77);
  for (std::uint64_t seed : {2}) {
    MicroInstance mi = micro_instance(seed);
    for (GeneratorRole role : {GeneratorRole::kLabel, GeneratorRole::kImage, GeneratorRole::kText}) {
      for (Term term : {Term::kJ1, Term::kJ2, Term::kJ3, Term::kJ4, Term::kAdversarial}) {
        const GradCheckResult r = term_grad_check(mi, term, role, rng);
        INFO(role_name(role), " ", term_name(term), " error ", r.worst_relative_error);
        CHECK(r.worst_relative_error < 1e-4);
        CHECK(r.kink_entries * 50 <= r.checked_entries);
      }
    }
  }
}
