#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geoembed/geodata.hpp"

namespace geoembed {

/// Columns of a Poisson regression. `penalized[j]` marks the spline block
/// the ridge penalty applies to.
struct DesignMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd X;
  Eigen::VectorXd offset;  // log exposure; empty means zero
  std::vector<bool> penalized;

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(X.cols()); }

  /// Appends a block of columns (must have the same row count).
  void append(const std::vector<std::string>& block_names, const Eigen::MatrixXd& block,
              bool penalize = false);
  /// Rows selected by index, same columns.
  DesignMatrix subset(std::span<const std::size_t> rows) const;
  void validate() const;
};

/// Intercept-only design with the given offset.
DesignMatrix intercept_design(const Eigen::VectorXd& offset);

struct FitOptions {
  double lambda = 0.0;  // ridge weight on the penalized columns
  std::size_t max_iterations = 100;
  double tolerance = 1e-10;  // on |change of penalized log-likelihood| / max(1, |loglik|)
};

struct GlmFit {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd p_values;
  double train_deviance = 0.0;
  double log_likelihood = 0.0;
  double edof = 0.0;
  double lambda = 0.0;
  std::size_t iterations = 0;
  std::vector<double> loglik_trace;
};

/// Penalized IRLS with step halving. Throws RankDeficient naming collinear
/// columns, NonConvergence with the iteration log.
GlmFit fit_poisson(const DesignMatrix& design, const Eigen::VectorXd& y,
                   const FitOptions& options = {});

Eigen::VectorXd predict_mean(const GlmFit& fit, const DesignMatrix& design);

/// 2 * sum[y ln(y/mu) - (y - mu)], with y ln(y/mu) = 0 at y = 0.
double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu);
double test_deviance(const GlmFit& fit, const DesignMatrix& holdout, const Eigen::VectorXd& y);

/// Two-sided normal p-value of coefficient / standard error.
double wald_pvalue(double estimate, double std_error);
Eigen::VectorXd wald_pvalues(const GlmFit& fit);

/// Tensor product of cubic B-splines over the bounding box of the training
/// coordinates. `knots` counts knots per axis including both boundary knots,
/// giving knots + 2 marginal functions per axis and (knots + 2)^2 columns.
class SplineBasis {
 public:
  SplineBasis() = default;
  /// knots == 0 gives an empty basis. Throws DegenerateExtent on a zero-width
  /// box and InvalidArgument for knots == 1.
  SplineBasis(std::span<const Coordinate> coords, std::size_t knots);

  std::size_t knots() const noexcept { return knots_; }
  std::size_t marginal_size() const noexcept { return knots_ ? knots_ + 2 : 0; }
  std::size_t columns() const noexcept { return marginal_size() * marginal_size(); }

  /// One row per coordinate. Points outside the box are clamped to it; the
  /// number of clamped points is written to `clamped` when given.
  Eigen::MatrixXd evaluate(std::span<const Coordinate> coords, std::size_t* clamped = nullptr) const;
  std::vector<std::string> column_names() const;
  /// Marginal basis values at t in [lo, hi] of one axis.
  std::vector<double> marginal(double t, double lo, double hi) const;

  const BoundingBox& box() const noexcept { return box_; }

 private:
  std::size_t knots_ = 0;
  BoundingBox box_;
};

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> gcv;
  std::vector<double> edof;
  GlmFit fit;  // the fit at the selected lambda
};

/// Minimizes GCV = n D / (n - edof)^2 over the grid.
LambdaSelection select_lambda(const DesignMatrix& design, const Eigen::VectorXd& y,
                              const std::vector<double>& grid, const FitOptions& base = {});

}  // namespace geoembed
