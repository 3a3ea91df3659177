#include <doctest.h>

#include <cmath>
#include <random>

#include "s7/reparam.hpp"

using namespace s7;

namespace {
const ReparamConfig kDisc{1.0, 0.5, ReparamForm::discrete};
const ReparamConfig kCont{1.0, 0.5, ReparamForm::continuous};
double f(double w, const ReparamConfig& c) { return reparam::value(w, c.a, c.b, c.form); }
}  // namespace

TEST_CASE("stability map examples") {
  CHECK(f(0.0, kDisc) == -1.0);
  CHECK(f(1.0, kDisc) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  for (double w : {-50.0, -1.0, 0.0, 0.3, 7.0, 1e8}) CHECK(f(w, kCont) < 0.0);
  const Vec<double> w{0.0, 1.0};
  CHECK(stability_map<double>(w, kDisc) == Vec<double>{f(0.0, kDisc), f(1.0, kDisc)});
}

TEST_CASE("stability map is even") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 10000; ++i) {
    const double w = u(rng);
    CHECK(f(w, kDisc) == f(-w, kDisc));
    CHECK(f(w, kCont) == f(-w, kCont));
  }
}

TEST_CASE("dense sweep: discrete bounded by one, continuous negative") {
  const std::size_t n = 1000000;
  std::size_t bad_disc = 0, bad_cont = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = -100.0 + 200.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    if (!(std::abs(f(w, kDisc)) <= 1.0)) ++bad_disc;
    if (!(f(w, kCont) < 0.0)) ++bad_cont;
  }
  CHECK(bad_disc == 0);
  CHECK(bad_cont == 0);
}

TEST_CASE("derivative examples and sign") {
  CHECK(reparam::derivative(0.0, 1.0, 0.5) == 0.0);
  const double h = 1e-6, w = 0.7;
  const double fd = (f(w + h, kDisc) - f(w - h, kDisc)) / (2 * h);
  CHECK(std::abs(reparam::derivative(w, 1.0, 0.5) - fd) <= 1e-8);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-20, 20);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    CHECK((reparam::derivative(x, 1.0, 0.5) > 0) == (x > 0));
  }
}

TEST_CASE("derivative matches central differences for both forms") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-5, 5);
  const double h = 1e-6;
  for (const auto& cfg : {kDisc, kCont, ReparamConfig{0.3, 2.0, ReparamForm::continuous}}) {
    for (int i = 0; i < 2000; ++i) {
      const double w = u(rng);
      const double an = reparam::derivative(w, cfg.a, cfg.b);
      const double fd = (f(w + h, cfg) - f(w - h, cfg)) / (2 * h);
      if (std::abs(w) < 1e-2) {
        CHECK(std::abs(an - fd) <= 1e-9);
      } else {
        CHECK(std::abs(an - fd) <= 1e-6 * std::abs(an));
      }
    }
  }
  const Vec<double> w{0.5, -0.5};
  const auto d = stability_map_derivative<double>(w, kCont);
  CHECK(d[0] == -d[1]);
}

TEST_CASE("gradient over weight ratio") {
  CHECK(gradient_over_weight_ratio(3.0, kCont) == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(gradient_over_weight_ratio(0.0, kCont) == 0.0);
  CHECK(gradient_over_weight_ratio(4.0, ReparamConfig{0.5, 0.5, ReparamForm::continuous}) ==
        doctest::Approx(4.0).epsilon(1e-14));
  // discrete with b < 1 has a root at w^2 = (1 - b) / a
  const ReparamConfig d{1.0, 0.75, ReparamForm::discrete};
  CHECK_THROWS_AS(gradient_over_weight_ratio(0.5, d), DomainError);
}

TEST_CASE("G_f identity on random weights") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10, 10);
  double worst = 0;
  for (int i = 0; i < 100000; ++i) {
    const double w = u(rng);
    worst = std::max(worst, std::abs(gradient_over_weight_ratio(w, kCont) - 2.0 * std::abs(w)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("inverse stability map") {
  const Vec<double> t{-1.0, 1.0 / 3.0};
  const auto w = inverse_stability_map<double>(t, kDisc);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(inverse_stability_map<double>(Vec<double>{1.0}, kDisc), DomainError);
  CHECK_THROWS_AS(inverse_stability_map<double>(Vec<double>{-1.5}, kDisc), DomainError);
  CHECK_THROWS_AS(inverse_stability_map<double>(Vec<double>{0.1}, kCont), DomainError);
  try {
    inverse_stability_map<double>(Vec<double>{2.0}, kDisc);
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("[-1") != std::string::npos);
  }
}

TEST_CASE("inverse round trip") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> ud(-1.0, 0.999), uc(-2.0, -1e-3);
  Vec<double> td(1000), tc(1000);
  for (auto& x : td) x = ud(rng);
  for (auto& x : tc) x = uc(rng);
  const auto wd = inverse_stability_map<double>(td, kDisc);
  const auto wc = inverse_stability_map<double>(tc, kCont);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    CHECK(wd[i] >= 0.0);
    worst = std::max(worst, std::abs(f(wd[i], kDisc) - td[i]));
    worst = std::max(worst, std::abs(f(wc[i], kCont) - tc[i]));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((ReparamConfig{0.0, 0.5}.validate()), ArgumentError);
  CHECK_THROWS_AS((ReparamConfig{1.0, -1.0}.validate()), ArgumentError);
}
