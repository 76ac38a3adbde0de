#include <doctest.h>

#include "fixtures.hpp"

#include <cmath>

using namespace nexus;
using nexus::testing::tiny_config;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Product of one-dimensional normal densities, accumulated in log space.
double logpdf_oracle(const Vector& x, const Vector& mean, const Vector& log_var) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double sd = std::sqrt(std::exp(log_var(d)));
    const double z = (x(d) - mean(d)) / sd;
    s += std::log(1.0 / (sd * std::sqrt(2.0 * kPi))) - 0.5 * z * z;
  }
  return s;
}

double kl_oracle(const Vector& mp, const Vector& lp, const Vector& mq, const Vector& lq) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < mp.size(); ++d) {
    const double vp = std::exp(lp(d)), vq = std::exp(lq(d));
    s += 0.5 * (std::log(vq / vp) + (vp + (mp(d) - mq(d)) * (mp(d) - mq(d))) / vq - 1.0);
  }
  return s;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vector random_vec(Rng& rng, int dim, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(dim);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("logpdf hand values") {
  CHECK(gaussian_logpdf(vec({0}), GaussianParams::make(vec({0}), vec({0}))) ==
        doctest::Approx(-0.5 * std::log(2 * kPi)));
  const auto p = GaussianParams::make(vec({1, -2}), vec({0.3, -1.1}));
  CHECK(gaussian_logpdf(vec({1, -2}), p) == doctest::Approx(-0.5 * (2 * std::log(2 * kPi) + 0.3 - 1.1)));
  const double v = gaussian_logpdf(vec({1, 2}), GaussianParams::make(vec({0, 0}), vec({0, std::log(4.0)})));
  CHECK(v == doctest::Approx(-3.5310).epsilon(1e-4));
  CHECK(v == doctest::Approx(-(0.5 * std::log(2 * kPi) + 0.5) - (0.5 * std::log(2 * kPi) + 0.5 * std::log(4.0) + 0.5)));
  CHECK_THROWS_AS(gaussian_logpdf(vec({1}), p), std::invalid_argument);
}

TEST_CASE("logpdf matches the product-of-univariates oracle") {
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const int d = 1 + k % 7;
    const Vector m = random_vec(rng, d, -3, 3), lv = random_vec(rng, d, -5, 5), x = random_vec(rng, d, -4, 4);
    const double got = gaussian_logpdf(x, GaussianParams::make(m, lv));
    const double want = logpdf_oracle(x, m, lv);
    CHECK(std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("kl hand values") {
  const auto std1 = GaussianParams::make(vec({0}), vec({0}));
  CHECK(gaussian_kl(std1, std1) == 0.0);
  CHECK(gaussian_kl(std1, GaussianParams::make(vec({1}), vec({0}))) == doctest::Approx(0.5));
  const auto wide = GaussianParams::make(vec({0}), vec({std::log(4.0)}));
  CHECK(gaussian_kl(wide, std1) == doctest::Approx(0.806853).epsilon(1e-6));

  // Monte-Carlo estimate of E_p[log p - log q].
  Rng rng(3);
  const int n = 200000;
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    const Vector x = sample_reparam(wide, rng).c;
    s += gaussian_logpdf(x, wide) - gaussian_logpdf(x, std1);
  }
  CHECK(std::abs(s / n - 0.806853) <= 1e-2);
  CHECK_THROWS_AS(gaussian_kl(wide, GaussianParams::make(vec({0, 0}), vec({0, 0}))), std::invalid_argument);
}

TEST_CASE("kl identity, positivity and oracle on random pairs") {
  Rng rng(7);
  for (int k = 0; k < 1000; ++k) {
    const int d = 1 + k % 5;
    const Vector mp = random_vec(rng, d, -3, 3), lp = random_vec(rng, d, -6, 6);
    const Vector mq = random_vec(rng, d, -3, 3), lq = random_vec(rng, d, -6, 6);
    const auto p = GaussianParams::make(mp, lp), q = GaussianParams::make(mq, lq);
    CHECK(gaussian_kl(p, p) == 0.0);
    const double kl = gaussian_kl(p, q);
    CHECK(kl >= 0.0);
    CHECK(kl == doctest::Approx(kl_oracle(mp, lp, mq, lq)).epsilon(1e-9));
  }
  // Nearly identical distributions stay non-negative despite cancellation.
  const auto p = GaussianParams::make(vec({0.1}), vec({1e-12}));
  CHECK(gaussian_kl(p, GaussianParams::make(vec({0.1}), vec({0}))) >= 0.0);
}

TEST_CASE("log-variance is clamped and non-finite input rejected") {
  const auto p = GaussianParams::make(vec({0, 0}), vec({-50, 50}));
  CHECK(p.log_var(0) == kLogVarMin);
  CHECK(p.log_var(1) == kLogVarMax);
  CHECK_THROWS_AS(GaussianParams::make(vec({NAN}), vec({0})), std::invalid_argument);
  CHECK_THROWS_AS(GaussianParams::make(vec({0, 1}), vec({0})), std::invalid_argument);
}

TEST_CASE("reparameterized samples") {
  const auto p = GaussianParams::make(vec({1.5, -2.0, 0.0}), vec({0.0, std::log(9.0), -2.0}));
  Rng a(11), b(11);
  const CodeSample s = sample_reparam(p, a);
  CHECK(s.c == sample_reparam(p, b).c);
  CHECK(s.c == (p.mean.array() + (0.5 * p.log_var.array()).exp() * s.noise.array()).matrix());

  const auto tight = GaussianParams::make(vec({0.7, -0.3}), vec({-100, -100}));
  const CodeSample t = sample_reparam(tight, a);
  CHECK((t.c - tight.mean).norm() <= 1e-2 * t.noise.norm());

  const int n = 100000;
  Vector sum = Vector::Zero(3);
  Rng rng(5);
  for (int k = 0; k < n; ++k) sum += sample_reparam(p, rng).c;
  const Vector mean = sum / n;
  for (Eigen::Index d = 0; d < 3; ++d) {
    const double sigma = std::exp(0.5 * p.log_var(d));
    CHECK(std::abs(mean(d) - p.mean(d)) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("reparameterized gradient matches central differences") {
  // f(mu, lv) = mean_k logpdf(mu + exp(lv/2) eps_k ; target), common random numbers.
  const int dim = 3, n = 10000;
  Rng rng(21);
  const Matrix noise = standard_normal(dim, n, rng);
  const Vector tm = vec({0.5, -1.0, 2.0}), tlv = vec({0.2, -0.4, 1.0});
  Parameter mu("mu", "test", vec({0.1, 0.3, -0.2}));
  Parameter lv("lv", "test", vec({-0.5, 0.4, 0.0}));

  auto value = [&](const Vector& m, const Vector& l) {
    const auto p = GaussianParams::make(m, l), target = GaussianParams::make(tm, tlv);
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += gaussian_logpdf(reparam_with_noise(p, noise.col(k)).c, target);
    return s / n;
  };

  Graph g;
  const std::vector<int> bcast(static_cast<std::size_t>(n), 0);
  const GaussianExpr q{gather_cols(g.parameter(mu), bcast), gather_cols(g.parameter(lv), bcast)};
  const Expr c = reparameterize(q, noise);
  const GaussianExpr target{g.constant(tm.replicate(1, n)), g.constant(tlv.replicate(1, n))};
  const Expr loss = scale(sum_all(gaussian_logpdf(c, target)), 1.0 / n);
  mu.zero_grad();
  lv.zero_grad();
  g.backward(loss);
  CHECK(loss.scalar() == doctest::Approx(value(mu.value, lv.value)).epsilon(1e-12));

  const double h = 1e-5;
  for (Parameter* p : {&mu, &lv}) {
    for (Eigen::Index d = 0; d < dim; ++d) {
      Vector up_m = mu.value, dn_m = mu.value, up_l = lv.value, dn_l = lv.value;
      Vector& up = p == &mu ? up_m : up_l;
      Vector& dn = p == &mu ? dn_m : dn_l;
      up(d) += h;
      dn(d) -= h;
      const double fd = (value(up_m, up_l) - value(dn_m, dn_l)) / (2 * h);
      const double an = p->grad(d, 0);
      CHECK(std::abs(an - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("code space networks have the documented shapes and data paths") {
  NexusModel m(tiny_config(), 9);
  const CodeSpace& cs = m.code_space();
  Rng rng(1);
  const Vector h = random_vec(rng, 12, -1, 1), f = random_vec(rng, 12, -1, 1), f2 = random_vec(rng, 12, -1, 1);
  const auto post = cs.posterior(h, f);
  CHECK(post.dim() == 4);
  CHECK(post.log_var.size() == 4);
  CHECK(cs.posterior(h, f).mean == post.mean);
  CHECK((cs.posterior(h, f2).mean - post.mean).norm() > 1e-9);

  const auto prior = cs.prior(h);
  CHECK(prior.dim() == 4);
  CHECK(cs.prior(h).mean == prior.mean);

  const Vector c1 = random_vec(rng, 4, -1, 1), c2 = random_vec(rng, 4, -1, 1);
  const auto [rh, rf] = cs.reconstruction_heads(c1);
  CHECK(rh.dim() == 12);
  CHECK(rf.dim() == 12);
  const auto fut = cs.future_predictor(h, c1);
  CHECK(fut.dim() == 12);
  CHECK((cs.future_predictor(h, c2).mean - fut.mean).norm() > 1e-9);

  // The reconstruction loss has a nonzero gradient with respect to the code.
  Graph g;
  Parameter code("code", "test", c1);
  const auto heads = cs.reconstruction_heads(g, g.parameter(code));
  const Expr loss = sum_all(gaussian_logpdf(g.constant(h), heads.first));
  code.zero_grad();
  g.backward(loss);
  CHECK(code.grad.norm() > 0.0);
  const double eps = 1e-6;
  Vector up = c1, dn = c1;
  up(0) += eps;
  dn(0) -= eps;
  const double fd = (gaussian_logpdf(h, cs.reconstruction_heads(up).first) -
                     gaussian_logpdf(h, cs.reconstruction_heads(dn).first)) / (2 * eps);
  CHECK(code.grad(0, 0) == doctest::Approx(fd).epsilon(1e-5));
}
