#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance gate. Nothing here calls into the code it checks.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "geoembed/random.hpp"
#include "geoembed/tensor.hpp"

namespace oracle {

// Dense matrix M with conv(x) = M * unroll(x) + b, built entry by entry from the
// convolution definition. Rows index output cells (b, i, j, c_out), columns
// index input cells (b, y, x, c_in), both in the tensor's row-major order.
// The kernel is tapped in flipped position: input (i*s - p + m) meets
// K(k - 1 - m).
inline Eigen::MatrixXd conv_matrix(std::size_t n, std::size_t h, std::size_t w, std::size_t cin,
                                   const std::vector<double>& kernel, std::size_t cout,
                                   std::size_t k, std::size_t s, std::size_t p) {
  const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (w + 2 * p - k) / s + 1;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n * oh * ow * cout, n * h * w * cin);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t c = 0; c < cout; ++c) {
          const std::size_t row = ((b * oh + i) * ow + j) * cout + c;
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t q = 0; q < k; ++q) {
              const long y = static_cast<long>(i * s + a) - static_cast<long>(p);
              const long x = static_cast<long>(j * s + q) - static_cast<long>(p);
              if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w))
                continue;
              for (std::size_t l = 0; l < cin; ++l) {
                const std::size_t col =
                    ((b * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(x)) *
                        cin + l;
                const std::size_t kidx = ((c * k + (k - 1 - a)) * k + (k - 1 - q)) * cin + l;
                m(row, col) += kernel[kidx];
              }
            }
        }
  return m;
}

inline Eigen::VectorXd as_vector(const geoembed::Tensor& t) {
  return Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

inline geoembed::Tensor random_tensor(geoembed::Shape shape, geoembed::Rng& rng,
                                      double lo = -1.0, double hi = 1.0) {
  geoembed::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, geoembed::Rng& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central difference of a scalar function with respect to one coordinate.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Poisson log-likelihood maximizer by plain Newton iterations on the exact
// objective, sum(y*eta - exp(eta)) with eta = X*beta + offset.
inline Eigen::VectorXd newton_poisson(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Eigen::VectorXd& offset) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  // Start at the log of the mean rate for the intercept-like direction.
  const double rate = y.sum() / offset.array().exp().sum();
  Eigen::VectorXd start = (X.transpose() * X).ldlt().solve(
      X.transpose() * Eigen::VectorXd::Constant(X.rows(), std::log(std::max(rate, 1e-3))));
  beta = start;
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd mu = (X * beta + offset).array().exp();
    const Eigen::VectorXd grad = X.transpose() * (y - mu);
    const Eigen::MatrixXd hess = X.transpose() * mu.asDiagonal() * X;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    auto loglik = [&](const Eigen::VectorXd& b) {
      const Eigen::VectorXd eta = X * b + offset;
      return (y.array() * eta.array() - eta.array().exp()).sum();
    };
    double t = 1.0;
    const double base = loglik(beta);
    while (loglik(beta + t * step) < base - 1e-12 && t > 1e-10) t /= 2;
    beta += t * step;
    if (step.cwiseAbs().maxCoeff() * t < 1e-14) break;
  }
  return beta;
}

inline double poisson_deviance(const std::vector<double>& y, const std::vector<double>& mu) {
  double d = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double term = y[i] > 0 ? y[i] * std::log(y[i] / mu[i]) : 0.0;
    d += 2.0 * (term - (y[i] - mu[i]));
  }
  return d;
}

}  // namespace oracle
