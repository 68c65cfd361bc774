#include "geoembed/glmgam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "geoembed/error.hpp"

namespace geoembed {

void DesignMatrix::append(const std::vector<std::string>& block_names,
                          const Eigen::MatrixXd& block, bool penalize) {
  if (static_cast<std::size_t>(block.cols()) != block_names.size()) {
    fail(ErrorCode::ShapeMismatch, "column names do not match the block width");
  }
  if (X.size() > 0 && block.rows() != X.rows()) {
    fail(ErrorCode::ShapeMismatch, "appended block has " + std::to_string(block.rows()) +
                                       " rows, design has " + std::to_string(X.rows()));
  }
  if (block.cols() == 0) return;
  Eigen::MatrixXd joined(block.rows(), X.cols() + block.cols());
  if (X.cols() > 0) joined.leftCols(X.cols()) = X;
  joined.rightCols(block.cols()) = block;
  X = std::move(joined);
  names.insert(names.end(), block_names.begin(), block_names.end());
  penalized.insert(penalized.end(), block_names.size(), penalize);
}

DesignMatrix DesignMatrix::subset(std::span<const std::size_t> rows) const {
  DesignMatrix out;
  out.names = names;
  out.penalized = penalized;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  out.offset.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.X.row(static_cast<Eigen::Index>(i)) = X.row(r);
    out.offset(static_cast<Eigen::Index>(i)) = offset.size() ? offset(r) : 0.0;
  }
  return out;
}

void DesignMatrix::validate() const {
  if (names.size() != cols() || penalized.size() != cols()) {
    fail(ErrorCode::ShapeMismatch, "design column metadata does not match the matrix");
  }
  if (offset.size() != 0 && static_cast<std::size_t>(offset.size()) != rows()) {
    fail(ErrorCode::ShapeMismatch, "offset length does not match the design rows");
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) fail(ErrorCode::InvalidArgument, "duplicate column name '" + n + "'");
  }
  if (!X.allFinite() || (offset.size() && !offset.allFinite())) {
    fail(ErrorCode::InvalidArgument, "design contains non-finite values");
  }
}

DesignMatrix intercept_design(const Eigen::VectorXd& offset) {
  DesignMatrix d;
  d.X = Eigen::MatrixXd::Ones(offset.size(), 1);
  d.names = {"intercept"};
  d.penalized = {false};
  d.offset = offset;
  return d;
}

// ---------------------------------------------------------------------------

namespace {

struct Work {
  const Eigen::MatrixXd& X;
  Eigen::VectorXd offset;
  const Eigen::VectorXd& y;
  Eigen::VectorXd pen;  // diagonal of the penalty, lambda included
  double log_y_factorial = 0.0;

  double penalized_loglik(const Eigen::VectorXd& beta, Eigen::VectorXd* eta_out) const {
    Eigen::VectorXd eta = X * beta + offset;
    double ll = -log_y_factorial;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double mu = std::exp(eta(i));
      ll += y(i) * eta(i) - mu;
    }
    ll -= 0.5 * beta.dot(pen.cwiseProduct(beta));
    if (eta_out) *eta_out = std::move(eta);
    return ll;
  }
};

void check_rank(const DesignMatrix& d, const Eigen::VectorXd& pen) {
  const Eigen::Index p = d.X.cols();
  Eigen::MatrixXd stacked(d.X.rows() + p, p);
  stacked.topRows(d.X.rows()) = d.X;
  stacked.bottomRows(p) = pen.cwiseSqrt().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
  qr.setThreshold(1e-10);
  if (qr.rank() == p) return;
  std::ostringstream msg;
  msg << "design has rank " << qr.rank() << " < " << p << " columns; collinear:";
  const auto perm = qr.colsPermutation().indices();
  for (Eigen::Index i = qr.rank(); i < p; ++i) msg << ' ' << d.names[static_cast<std::size_t>(perm(i))];
  fail(ErrorCode::RankDeficient, msg.str());
}

}  // namespace

GlmFit fit_poisson(const DesignMatrix& design, const Eigen::VectorXd& y,
                   const FitOptions& options) {
  design.validate();
  const Eigen::Index n = design.X.rows(), p = design.X.cols();
  if (y.size() != n) fail(ErrorCode::ShapeMismatch, "response length does not match the design");
  if (p == 0) fail(ErrorCode::InvalidArgument, "design has no columns");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(y(i) >= 0.0) || y(i) != std::floor(y(i))) {
      fail(ErrorCode::InvalidArgument, "Poisson response must be non-negative integers");
    }
  }
  if (!(options.lambda >= 0.0)) fail(ErrorCode::InvalidArgument, "lambda must be non-negative");

  Work w{design.X, design.offset.size() ? design.offset : Eigen::VectorXd::Zero(n), y,
         Eigen::VectorXd::Zero(p)};
  for (Eigen::Index j = 0; j < p; ++j) {
    if (design.penalized[static_cast<std::size_t>(j)]) w.pen(j) = options.lambda;
  }
  for (Eigen::Index i = 0; i < n; ++i) w.log_y_factorial += std::lgamma(y(i) + 1.0);
  check_rank(design, w.pen);

  GlmFit fit;
  fit.names = design.names;
  fit.lambda = options.lambda;

  // First step from mu = y + 0.1.
  Eigen::VectorXd mu = (y.array() + 0.1).matrix();
  Eigen::VectorXd eta = mu.array().log().matrix();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int polish = 0;

  for (std::size_t it = 1; it <= options.max_iterations; ++it) {
    const Eigen::VectorXd z = eta - w.offset + ((y - mu).array() / mu.array()).matrix();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    const Eigen::MatrixXd sx = design.X.array().colwise() * mu.array().sqrt();
    A.selfadjointView<Eigen::Lower>().rankUpdate(sx.transpose(), 1.0);
    A.diagonal() += w.pen;
    const Eigen::VectorXd rhs = design.X.transpose() * mu.cwiseProduct(z);
    Eigen::VectorXd proposal = A.selfadjointView<Eigen::Lower>().ldlt().solve(rhs);

    Eigen::VectorXd next_eta;
    double next_ll = w.penalized_loglik(proposal, &next_eta);
    if (it > 1) {
      // Halve back toward the current estimate until the objective improves.
      double t = 1.0;
      while (!(std::isfinite(next_ll) && next_ll >= ll - 1e-12 * std::max(1.0, std::abs(ll))) &&
             t > 1e-12) {
        t /= 2;
        proposal = beta + t * (proposal - beta);
        next_ll = w.penalized_loglik(proposal, &next_eta);
      }
    }
    if (!std::isfinite(next_ll)) break;
    const double change = std::abs(next_ll - ll);
    const double step = (proposal - beta).cwiseAbs().maxCoeff();
    beta = proposal;
    eta = next_eta;
    mu = eta.array().exp().matrix();
    fit.loglik_trace.push_back(next_ll);
    fit.iterations = it;
    const bool small = change < options.tolerance * std::max(1.0, std::abs(next_ll));
    ll = next_ll;
    // The log-likelihood flattens out before the coefficients do; a few more
    // Newton steps finish them off to rounding level.
    if (it > 1 && small && (step <= 1e-9 * (1.0 + beta.cwiseAbs().maxCoeff()) || ++polish > 5)) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "IRLS did not converge in " << fit.iterations << " iterations (possible separation);"
        << " penalized log-likelihood trace:";
    for (double v : fit.loglik_trace) msg << ' ' << v;
    fail(ErrorCode::NonConvergence, msg.str());
  }

  fit.coefficients = beta;
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  const Eigen::MatrixXd sx = design.X.array().colwise() * mu.array().sqrt();
  info.selfadjointView<Eigen::Lower>().rankUpdate(sx.transpose(), 1.0);
  info = info.selfadjointView<Eigen::Lower>();
  Eigen::MatrixXd penalized_info = info;
  penalized_info.diagonal() += w.pen;
  fit.covariance = penalized_info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.edof = (fit.covariance * info).trace();
  fit.std_errors = fit.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  fit.p_values = wald_pvalues(fit);
  fit.train_deviance = deviance(y, mu);
  fit.log_likelihood = ll + 0.5 * beta.dot(w.pen.cwiseProduct(beta));
  return fit;
}

Eigen::VectorXd predict_mean(const GlmFit& fit, const DesignMatrix& design) {
  if (design.cols() != static_cast<std::size_t>(fit.coefficients.size())) {
    fail(ErrorCode::ShapeMismatch, "design columns do not match the fit");
  }
  Eigen::VectorXd eta = design.X * fit.coefficients;
  if (design.offset.size()) eta += design.offset;
  return eta.array().exp().matrix();
}

double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  if (y.size() != mu.size()) fail(ErrorCode::ShapeMismatch, "deviance inputs differ in length");
  double d = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double term = y(i) > 0.0 ? y(i) * std::log(y(i) / mu(i)) : 0.0;
    d += term - (y(i) - mu(i));
  }
  return 2.0 * d;
}

double test_deviance(const GlmFit& fit, const DesignMatrix& holdout, const Eigen::VectorXd& y) {
  return deviance(y, predict_mean(fit, holdout));
}

double wald_pvalue(double estimate, double std_error) {
  if (!(std_error > 0.0)) return estimate == 0.0 ? 1.0 : 0.0;
  return std::erfc(std::abs(estimate / std_error) / std::sqrt(2.0));
}

Eigen::VectorXd wald_pvalues(const GlmFit& fit) {
  Eigen::VectorXd p(fit.coefficients.size());
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    p(j) = wald_pvalue(fit.coefficients(j), fit.std_errors(j));
  }
  return p;
}

// ---------------------------------------------------------------------------

SplineBasis::SplineBasis(std::span<const Coordinate> coords, std::size_t knots) : knots_(knots) {
  if (knots == 0) return;
  if (knots == 1) fail(ErrorCode::InvalidArgument, "a spline axis needs at least two knots");
  if (coords.empty()) fail(ErrorCode::DegenerateExtent, "no coordinates to span");
  box_ = {coords[0].x, coords[0].y, coords[0].x, coords[0].y};
  for (const auto& c : coords) {
    box_.min_x = std::min(box_.min_x, c.x);
    box_.max_x = std::max(box_.max_x, c.x);
    box_.min_y = std::min(box_.min_y, c.y);
    box_.max_y = std::max(box_.max_y, c.y);
  }
  if (!(box_.max_x > box_.min_x) || !(box_.max_y > box_.min_y)) {
    fail(ErrorCode::DegenerateExtent, "coordinates have a zero-width bounding box");
  }
}

std::vector<double> SplineBasis::marginal(double t, double lo, double hi) const {
  const std::size_t m = knots_ - 1;  // intervals
  const std::size_t nb = m + 3;
  // Clamped knot vector: boundary knots repeated four times.
  std::vector<double> u;
  for (int i = 0; i < 3; ++i) u.push_back(lo);
  for (std::size_t i = 0; i <= m; ++i) {
    u.push_back(i == m ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m));
  }
  for (int i = 0; i < 3; ++i) u.push_back(hi);
  t = std::clamp(t, lo, hi);
  std::size_t span = 3 + std::min(m - 1, static_cast<std::size_t>((t - lo) / (hi - lo) * static_cast<double>(m)));
  // Cox-de Boor on the four non-zero functions of the span.
  double N[4] = {1.0, 0.0, 0.0, 0.0};
  double left[4], right[4];
  for (std::size_t j = 1; j <= 3; ++j) {
    left[j] = t - u[span + 1 - j];
    right[j] = u[span + j] - t;
    double saved = 0.0;
    for (std::size_t r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom > 0.0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  std::vector<double> out(nb, 0.0);
  for (std::size_t r = 0; r < 4; ++r) out[span - 3 + r] = N[r];
  return out;
}

Eigen::MatrixXd SplineBasis::evaluate(std::span<const Coordinate> coords,
                                      std::size_t* clamped) const {
  const std::size_t nb = marginal_size();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(coords.size()),
                                            static_cast<Eigen::Index>(nb * nb));
  if (clamped) *clamped = 0;
  if (nb == 0) return B;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (clamped && !box_.contains(coords[i])) ++*clamped;
    const auto bx = marginal(coords[i].x, box_.min_x, box_.max_x);
    const auto by = marginal(coords[i].y, box_.min_y, box_.max_y);
    for (std::size_t a = 0; a < nb; ++a) {
      if (bx[a] == 0.0) continue;
      for (std::size_t b = 0; b < nb; ++b) {
        B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a * nb + b)) = bx[a] * by[b];
      }
    }
  }
  return B;
}

std::vector<std::string> SplineBasis::column_names() const {
  std::vector<std::string> names;
  for (std::size_t a = 0; a < marginal_size(); ++a)
    for (std::size_t b = 0; b < marginal_size(); ++b)
      names.push_back("s(" + std::to_string(a) + "," + std::to_string(b) + ")");
  return names;
}

LambdaSelection select_lambda(const DesignMatrix& design, const Eigen::VectorXd& y,
                              const std::vector<double>& grid, const FitOptions& base) {
  if (grid.empty()) fail(ErrorCode::InvalidArgument, "lambda grid is empty");
  LambdaSelection sel;
  sel.grid = grid;
  const double n = static_cast<double>(design.rows());
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    FitOptions opt = base;
    opt.lambda = lambda;
    GlmFit fit = fit_poisson(design, y, opt);
    const double gcv = n * fit.train_deviance / ((n - fit.edof) * (n - fit.edof));
    sel.gcv.push_back(gcv);
    sel.edof.push_back(fit.edof);
    if (gcv < best) {
      best = gcv;
      sel.lambda = lambda;
      sel.fit = std::move(fit);
    }
  }
  return sel;
}

}  // namespace geoembed
