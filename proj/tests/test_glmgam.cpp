#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geoembed/error.hpp"
#include "geoembed/glmgam.hpp"
#include "geoembed/random.hpp"
#include "oracles.hpp"

using namespace geoembed;

namespace {

DesignMatrix random_design(Rng& rng, std::size_t n, std::size_t p, Eigen::VectorXd& y) {
  DesignMatrix d;
  d.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  d.offset.resize(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < p; ++j) {
    d.names.push_back(j == 0 ? "intercept" : "x" + std::to_string(j));
    d.penalized.push_back(false);
  }
  Eigen::VectorXd beta(static_cast<Eigen::Index>(p));
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta(j) = rng.uniform(-0.5, 0.5);
  y.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < d.X.rows(); ++i) {
    d.X(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < d.X.cols(); ++j) d.X(i, j) = rng.normal();
    d.offset(i) = std::log(rng.uniform(0.5, 2.0));
    const double mu = std::exp(d.X.row(i).dot(beta) + d.offset(i));
    y(i) = static_cast<double>(rng.poisson(mu));
  }
  return d;
}

double ks_uniform(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  const double n = static_cast<double>(p.size());
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    d = std::max({d, (static_cast<double>(i) + 1) / n - p[i], p[i] - static_cast<double>(i) / n});
  }
  return d;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("IRLS agrees with an independent Newton maximizer") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 40 + rng.index(80), p = 2 + rng.index(4);
    Eigen::VectorXd y;
    const DesignMatrix d = random_design(rng, n, p, y);
    const GlmFit fit = fit_poisson(d, y);
    const Eigen::VectorXd ref = oracle::newton_poisson(d.X, y, d.offset);
    CHECK((fit.coefficients - ref).cwiseAbs().maxCoeff() < 1e-8);
    // score equations at the fixed point
    const Eigen::VectorXd mu = predict_mean(fit, d);
    CHECK((d.X.transpose() * (y - mu)).cwiseAbs().maxCoeff() < 1e-6);
    // unpenalized edof is the column count
    CHECK(fit.edof == doctest::Approx(static_cast<double>(p)).epsilon(1e-8));
    CHECK(fit.train_deviance >= 0.0);
  }
}

TEST_CASE("closed forms") {
  Eigen::VectorXd y(3);
  y << 2, 4, 6;
  const GlmFit fit = fit_poisson(intercept_design(Eigen::VectorXd::Zero(3)), y);
  CHECK(fit.coefficients(0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Eigen::VectorXd w(4), y2(4);
  w << 0.5, 1.0, 2.0, 4.0;
  y2 << 1, 0, 3, 5;
  const DesignMatrix d = intercept_design(w.array().log().matrix());
  const GlmFit f2 = fit_poisson(d, y2);
  CHECK(f2.coefficients(0) == doctest::Approx(std::log(y2.sum() / w.sum())).epsilon(1e-14));
  const Eigen::VectorXd mu = predict_mean(f2, d);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(mu(i) == doctest::Approx(w(i) * std::exp(f2.coefficients(0))).epsilon(1e-13));
  }
}

TEST_CASE("deviance") {
  Eigen::VectorXd a(3);
  a << 1, 2, 3;
  CHECK(deviance(a, a) == 0.0);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(2), m(2);
  m << 0.7, 1.3;
  CHECK(deviance(z, m) == doctest::Approx(2 * 2.0).epsilon(1e-14));

  Rng rng(3);
  std::vector<double> ys, mus;
  Eigen::VectorXd yv(200), mv(200);
  for (int i = 0; i < 200; ++i) {
    ys.push_back(static_cast<double>(rng.poisson(1.2)));
    mus.push_back(rng.uniform(0.1, 3.0));
    yv(i) = ys.back();
    mv(i) = mus.back();
  }
  const double oracle_d = oracle::poisson_deviance(ys, mus);
  CHECK(deviance(yv, mv) == doctest::Approx(oracle_d).epsilon(1e-12));
  // row order does not matter
  Eigen::VectorXd yr = yv.reverse(), mr = mv.reverse();
  CHECK(deviance(yr, mr) == doctest::Approx(oracle_d).epsilon(1e-12));
}

TEST_CASE("wald p-values") {
  CHECK(wald_pvalue(0.0, 1.0) == 1.0);
  CHECK(std::abs(wald_pvalue(1.96, 1.0) - 0.05) < 5e-4);
  CHECK(std::abs(wald_pvalue(-3.92, 2.0) - 0.05) < 5e-4);
}

TEST_CASE("null covariate p-values are uniform") {
  Rng rng(77);
  std::vector<double> p;
  for (int rep = 0; rep < 200; ++rep) {
    const Eigen::Index n = 300;
    DesignMatrix d = intercept_design(Eigen::VectorXd::Zero(n));
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      x(i, 0) = rng.normal();
      y(i) = static_cast<double>(rng.poisson(0.8));
    }
    d.append({"x"}, x);
    p.push_back(fit_poisson(d, y).p_values(1));
  }
  // 1% critical value of the one-sample KS statistic
  CHECK(ks_uniform(p) < 1.628 / std::sqrt(200.0));
}

TEST_CASE("nesting never increases training deviance") {
  Rng rng(8);
  Eigen::VectorXd y;
  DesignMatrix d = random_design(rng, 150, 3, y);
  const double small = fit_poisson(d, y).train_deviance;
  Eigen::MatrixXd extra(150, 2);
  for (Eigen::Index i = 0; i < 150; ++i) extra.row(i) << rng.normal(), rng.uniform();
  d.append({"e0", "e1"}, extra);
  CHECK(fit_poisson(d, y).train_deviance <= small + 1e-9);
}

TEST_CASE("fit failures") {
  Rng rng(9);
  Eigen::VectorXd y;
  DesignMatrix d = random_design(rng, 60, 3, y);
  d.append({"dup"}, d.X.col(1));
  try {
    fit_poisson(d, y);
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
    const std::string msg = e.what();
    CHECK((msg.find("dup") != std::string::npos || msg.find("x1") != std::string::npos));
  }
  DesignMatrix ok = random_design(rng, 60, 3, y);
  FitOptions opts;
  opts.max_iterations = 1;
  CHECK(code_of([&] { fit_poisson(ok, y, opts); }) == ErrorCode::NonConvergence);
}

TEST_CASE("spline basis") {
  Rng rng(12);
  std::vector<Coordinate> pts;
  for (int i = 0; i < 500; ++i) pts.push_back({rng.uniform(0, 10), rng.uniform(-3, 3)});
  CHECK(SplineBasis(pts, 0).columns() == 0);
  CHECK(code_of([&] { SplineBasis(pts, 1); }) == ErrorCode::InvalidArgument);
  const std::vector<Coordinate> same(5, Coordinate{1, 1});
  CHECK(code_of([&] { SplineBasis(same, 4); }) == ErrorCode::DegenerateExtent);

  for (std::size_t k : {2, 3, 5, 8}) {
    const SplineBasis basis(pts, k);
    CHECK(basis.columns() == (k + 2) * (k + 2));
    std::vector<Coordinate> probe;
    for (int i = 0; i < 1000; ++i) {
      probe.push_back({rng.uniform(basis.box().min_x, basis.box().max_x),
                       rng.uniform(basis.box().min_y, basis.box().max_y)});
    }
    const Eigen::MatrixXd B = basis.evaluate(probe);
    CHECK((B.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK(B.minCoeff() >= 0.0);
  }
  const SplineBasis basis(pts, 4);
  std::size_t clamped = 0;
  const std::vector<Coordinate> outside{{-5, 0}, {1, 1}, {20, 10}};
  const Eigen::MatrixXd B = basis.evaluate(outside, &clamped);
  CHECK(clamped == 2);
  const std::vector<Coordinate> edge{{basis.box().min_x, 0}};
  CHECK((B.row(0) - basis.evaluate(edge).row(0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("penalized fits and lambda selection") {
  Rng rng(31);
  const std::size_t n = 1500;
  std::vector<Coordinate> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
  const SplineBasis basis(pts, 6);
  const Eigen::MatrixXd B = basis.evaluate(pts);
  const std::vector<double> grid{0.01, 0.1, 1, 10, 100, 1000, 10000, 100000};

  auto design = [&] {
    DesignMatrix d = intercept_design(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
    d.append(basis.column_names(), B, true);
    return d;
  };

  Eigen::VectorXd noise(static_cast<Eigen::Index>(n)), smooth(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    noise(static_cast<Eigen::Index>(i)) = static_cast<double>(rng.poisson(2.0));
    const double eta = 0.7 + 1.2 * std::sin(2 * M_PI * pts[i].x) * std::cos(M_PI * pts[i].y);
    smooth(static_cast<Eigen::Index>(i)) = static_cast<double>(rng.poisson(std::exp(eta)));
  }
  const auto noisy = select_lambda(design(), noise, grid);
  const auto structured = select_lambda(design(), smooth, grid);
  CHECK(noisy.lambda >= grid[grid.size() - 2]);
  CHECK(structured.lambda < 10.0);

  // edof shrinks as the penalty grows and stays under the column count
  for (std::size_t i = 1; i < noisy.edof.size(); ++i) CHECK(noisy.edof[i] <= noisy.edof[i - 1] + 1e-9);
  CHECK(noisy.edof.front() <= static_cast<double>(B.cols() + 1));

  const auto single = select_lambda(design(), smooth, {3.0});
  CHECK(single.lambda == 3.0);

  // penalized score equations: X'(y - mu) = lambda * beta on the spline block
  const GlmFit& f = structured.fit;
  const DesignMatrix d = design();
  const Eigen::VectorXd r = d.X.transpose() * (smooth - predict_mean(f, d));
  CHECK(std::abs(r(0)) < 1e-6);
  for (Eigen::Index j = 1; j < r.size(); ++j) {
    CHECK(std::abs(r(j) - f.lambda * f.coefficients(j)) < 1e-6);
  }
}
