#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dsgq/metrics.hpp"
#include "test_helpers.hpp"

using namespace dsgq;
using namespace dsgq::metrics;

namespace {

// Inverse normal CDF by bisection on erfc, independent of the library path.
double phi_inv(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Integral over p in (0, 1) of |F_emp^-1(p) - F^-1(p)|, midpoint rule on each
// empirical step.
double transport_oracle(std::vector<double> x, double mu, double sigma) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size(), sub = 400;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < sub; ++k) {
      const double p = (double(i) + (double(k) + 0.5) / double(sub)) / double(n);
      acc += std::abs(x[i] - (mu + sigma * phi_inv(p))) / double(n * sub);
    }
  return acc;
}

}  // namespace

TEST_CASE("normal quantile matches bisection") {
  for (double p : {1e-6, 0.01, 0.2, 0.5, 0.77, 0.999})
    CHECK(normal_quantile(p) == doctest::Approx(phi_inv(p)).epsilon(1e-9));
  CHECK_THROWS_AS(normal_quantile(0.0), Error);
}

TEST_CASE("Wasserstein distance to a Gaussian") {
  const std::size_t n = 1024;
  std::vector<double> q(n);
  for (std::size_t k = 0; k < n; ++k) q[k] = 0.3 + 2.0 * phi_inv((double(k) + 0.5) / double(n));
  SUBCASE("samples at the quantile points") { CHECK(wasserstein_1d(q, 0.3, 2.0, n) < 1e-6); }
  SUBCASE("translation by c") {
    for (double c : {0.5, -1.25}) {
      std::vector<double> s = q;
      for (double& v : s) v += c;
      CHECK(wasserstein_1d(s, 0.3, 2.0, n) == doctest::Approx(std::abs(c)).epsilon(1e-6));
    }
  }
  SUBCASE("random batch against a transport integral") {
    Rng rng(40, Stream::Data);
    for (int t = 0; t < 3; ++t) {
      std::vector<double> s(200);
      for (double& v : s) v = 0.5 * rng.normal() + 0.8 * rng.uniform();
      const double w = wasserstein_1d(s, 0.1, 1.3);
      const double oracle = transport_oracle(s, 0.1, 1.3);
      CHECK(std::abs(w - oracle) <= 0.02 * oracle);
    }
  }
  SUBCASE("shifts change the distance by at most |c| plus discretization") {
    Rng rng(41, Stream::Data);
    std::vector<double> s(300);
    for (double& v : s) v = rng.normal();
    const double base = wasserstein_1d(s, 0.0, 1.0);
    for (double c : {0.1, -0.7, 2.0}) {
      std::vector<double> t = s;
      for (double& v : t) v += c;
      CHECK(std::abs(wasserstein_1d(t, 0.0, 1.0) - base) <= std::abs(c) + 1e-12);
    }
  }
  CHECK_THROWS_AS(wasserstein_1d(std::vector<double>{1.0}, 0.0, 1.0), Error);
  CHECK_THROWS_AS(wasserstein_1d(std::vector<double>{1.0, 2.0}, 0.0, 0.0), Error);
}

TEST_CASE("statistic variance") {
  SUBCASE("identical samples") { CHECK(stat_variance(Tensor({3, 4}, 0.7)) < 1e-30); }
  SUBCASE("two samples differing by d in one of M coordinates") {
    Tensor s({2, 5}, 1.0);
    s.at(1, 2) += 0.6;
    CHECK(stat_variance(s) == doctest::Approx(0.36 / 4.0 / 5.0).epsilon(1e-14));
  }
  SUBCASE("random batch against a pairwise-difference oracle") {
    Rng rng(42, Stream::Data);
    const Tensor s = rng.normal_tensor({9, 6});
    double oracle = 0.0;
    for (std::size_t m = 0; m < 6; ++m) {
      double acc = 0.0;
      for (std::size_t a = 0; a < 9; ++a)
        for (std::size_t b = 0; b < 9; ++b) acc += std::pow(s.at(a, m) - s.at(b, m), 2);
      oracle += acc / (2.0 * 81.0);
    }
    CHECK(std::abs(stat_variance(s) - oracle / 6.0) < 1e-12);
  }
  CHECK_THROWS_AS(stat_variance(Tensor({1, 3})), Error);
}

TEST_CASE("per-sample statistics of dense BN inputs") {
  Rng rng(43, Stream::Init);
  Network net = make_mlp(5, {4}, 3, rng);
  const Tensor x = rng.normal_tensor({6, 5});
  const Tensor s = per_sample_stats(net, x);
  REQUIRE(s.shape() == Shape{6, 2});
  const Tensor in = forward(net, x, Mode::Eval).bn_input(net, 0);
  for (std::size_t b = 0; b < 6; ++b) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 4; ++c) m += in.at(b, c) / 4.0;
    for (std::size_t c = 0; c < 4; ++c) v += std::pow(in.at(b, c) - m, 2) / 4.0;
    CHECK(s.at(b, 0) == doctest::Approx(m).epsilon(1e-13));
    CHECK(s.at(b, 1) == doctest::Approx(std::sqrt(v)).epsilon(1e-13));
  }
}

TEST_CASE("PCA projection") {
  Rng rng(44, Stream::Data);
  SUBCASE("single varying axis") {
    Tensor x({50, 6}, 0.0);
    for (std::size_t b = 0; b < 50; ++b) {
      x.at(b, 3) = 5.0 * rng.normal();
      for (std::size_t d = 0; d < 6; ++d) x.at(b, d) += 1e-3 * rng.normal();
    }
    const Tensor p = pca_project(x);
    // Direction recovered from the projections: corr with axis 3.
    double num = 0.0, den_p = 0.0, den_x = 0.0, mean = 0.0;
    for (std::size_t b = 0; b < 50; ++b) mean += x.at(b, 3) / 50.0;
    for (std::size_t b = 0; b < 50; ++b) {
      num += p.at(b, 0) * (x.at(b, 3) - mean);
      den_p += p.at(b, 0) * p.at(b, 0);
      den_x += std::pow(x.at(b, 3) - mean, 2);
    }
    CHECK(std::abs(num) / std::sqrt(den_p * den_x) >= 0.999);
  }
  SUBCASE("isotropic plane embedded in 8 dims keeps per-axis variance") {
    // Orthonormal pair via Gram-Schmidt.
    Tensor u = rng.normal_tensor({8}), v = rng.normal_tensor({8});
    const double nu = norm(u);
    for (double& a : u.data()) a /= nu;
    double dot = 0.0;
    for (std::size_t i = 0; i < 8; ++i) dot += u[i] * v[i];
    for (std::size_t i = 0; i < 8; ++i) v[i] -= dot * u[i];
    const double nv = norm(v);
    for (double& a : v.data()) a /= nv;
    const std::size_t B = 4000;
    Tensor x = Tensor::matrix(B, 8);
    double var_a = 0.0, var_b = 0.0;
    std::vector<double> ca(B), cb(B);
    for (std::size_t b = 0; b < B; ++b) {
      ca[b] = 2.0 * rng.normal();
      cb[b] = 2.0 * rng.normal();
      for (std::size_t i = 0; i < 8; ++i) x.at(b, i) = ca[b] * u[i] + cb[b] * v[i];
    }
    // Covariance oracle: total in-plane variance is preserved by any
    // orthonormal basis of the plane.
    double ma = 0, mb = 0;
    for (std::size_t b = 0; b < B; ++b) ma += ca[b] / B, mb += cb[b] / B;
    for (std::size_t b = 0; b < B; ++b)
      var_a += std::pow(ca[b] - ma, 2) / B, var_b += std::pow(cb[b] - mb, 2) / B;
    const Tensor p = pca_project(x);
    double v0 = 0.0, v1 = 0.0;
    for (std::size_t b = 0; b < B; ++b) v0 += p.at(b, 0) * p.at(b, 0) / B, v1 += p.at(b, 1) * p.at(b, 1) / B;
    CHECK(v0 + v1 == doctest::Approx(var_a + var_b).epsilon(1e-8));
    CHECK(v0 == doctest::Approx(4.0).epsilon(0.1));
    CHECK(v1 == doctest::Approx(4.0).epsilon(0.1));
  }
  SUBCASE("adding a constant row vector changes nothing") {
    const Tensor x = rng.normal_tensor({20, 5});
    Tensor y = x;
    for (std::size_t b = 0; b < 20; ++b)
      for (std::size_t d = 0; d < 5; ++d) y.at(b, d) += double(d) - 2.5;
    const Tensor a = pca_project(x), b = pca_project(y);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
  }
  CHECK_THROWS_AS(pca_project(Tensor({5, 3}, 1.0)), Error);
  CHECK_THROWS_AS(pca_project(Tensor({2, 3})), Error);
}

TEST_CASE("density index") {
  SUBCASE("identical points") { CHECK(density_index(Tensor({7, 2}, 1.5)) == 7); }
  SUBCASE("sparse grid") {
    Tensor g({16, 2});
    for (std::size_t i = 0; i < 16; ++i) g.at(i, 0) = double(i % 4), g.at(i, 1) = double(i / 4);
    // Spread is 3 sqrt(2) ~ 4.24; a 0.2 fraction gives radius 0.85 < 1.
    CHECK(density_index(g, 0.2) == 1);
  }
  SUBCASE("random cloud against sorted neighbour distances; rotation invariant") {
    Rng rng(45, Stream::Data);
    const Tensor c = rng.normal_tensor({60, 2});
    double spread = 0.0;
    std::vector<std::vector<double>> d(60);
    for (std::size_t a = 0; a < 60; ++a)
      for (std::size_t b = 0; b < 60; ++b) {
        const double dist = std::hypot(c.at(a, 0) - c.at(b, 0), c.at(a, 1) - c.at(b, 1));
        d[a].push_back(dist);
        spread = std::max(spread, dist);
      }
    std::size_t best = 0;
    for (auto& row : d) {
      std::sort(row.begin(), row.end());
      best = std::max(best, std::size_t(std::upper_bound(row.begin(), row.end(), 0.15 * spread) -
                                        row.begin()));
    }
    CHECK(density_index(c, 0.15) == best);
    Tensor r = c;
    const double th = 0.7;
    for (std::size_t a = 0; a < 60; ++a) {
      r.at(a, 0) = std::cos(th) * c.at(a, 0) - std::sin(th) * c.at(a, 1);
      r.at(a, 1) = std::sin(th) * c.at(a, 0) + std::cos(th) * c.at(a, 1);
    }
    CHECK(density_index(r, 0.15) == best);
  }
  CHECK_THROWS_AS(density_index(Tensor({3, 2}), 0.0), Error);
}

TEST_CASE("similarity index s") {
  SUBCASE("identical rows give B^2") {
    CHECK(similarity_index_s(Tensor({5, 3}, 2.0)) == doctest::Approx(25.0).epsilon(1e-14));
  }
  SUBCASE("orthogonal rows give B") {
    Tensor e({4, 4});
    for (std::size_t i = 0; i < 4; ++i) e.at(i, i) = double(i + 1);
    CHECK(similarity_index_s(e) == 4.0);
  }
  SUBCASE("random batch matches a double loop; row rescaling is invisible") {
    Rng rng(46, Stream::Data);
    Tensor x = rng.normal_tensor({7, 5});
    double oracle = 0.0;
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        double dot = 0.0, ni = 0.0, nj = 0.0;
        for (std::size_t d = 0; d < 5; ++d) {
          dot += x.at(i, d) * x.at(j, d);
          ni += x.at(i, d) * x.at(i, d);
          nj += x.at(j, d) * x.at(j, d);
        }
        oracle += dot / std::sqrt(ni * nj);
      }
    CHECK(similarity_index_s(x) == doctest::Approx(oracle).epsilon(1e-12));
    for (std::size_t d = 0; d < 5; ++d) x.at(3, d) *= 17.0;
    CHECK(similarity_index_s(x) == doctest::Approx(oracle).epsilon(1e-12));
  }
  CHECK_THROWS_AS(similarity_index_s(Tensor({2, 3})), Error);
}

TEST_CASE("entropy and the uniform-allocation theorem") {
  CHECK(entropy_allocation(std::vector<double>{0.25, 0.25, 0.25, 0.25}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(entropy_allocation(std::vector<double>{1.0, 0.0, 0.0}) == 0.0);
  CHECK_THROWS_AS(entropy_allocation(std::vector<double>{0.5, 0.6}), Error);
  CHECK_THROWS_AS(entropy_allocation(std::vector<double>{1.2, -0.2}), Error);
  for (std::size_t k : {2u, 3u, 4u}) {
    const auto r = verify_theorem1(k, 0.05);
    CHECK(r.verified);
    CHECK(r.uniform_entropy >= r.max_entropy - 1e-12);
  }
  const auto r3 = verify_theorem1(3, 0.05);
  CHECK(r3.grid_points == 231);  // C(22, 2)
  for (double v : r3.argmax) CHECK(std::abs(v - 1.0 / 3.0) <= 0.05);
  CHECK_THROWS_AS(verify_theorem1(1, 0.05), Error);
  CHECK_THROWS_AS(verify_theorem1(3, 0.3), Error);
}
