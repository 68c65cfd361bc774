#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "geoembed/cuboid.hpp"
#include "geoembed/embedmodel.hpp"
#include "geoembed/geodata.hpp"
#include "geoembed/glmgam.hpp"

namespace geoembed {

enum class ExposureLaw { Constant, Uniform };

std::string_view to_string(ExposureLaw law);
ExposureLaw exposure_from_string(std::string_view name);

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t rows = 60;        // regions per column
  std::size_t cols = 60;        // regions per row
  double side = 400.0;          // region side L in meters
  std::size_t n_factors = 3;
  std::size_t n_vars = 16;      // attributes per region
  double attribute_noise = 0.1; // region-level noise inside the sigmoid
  std::size_t n_locations = 12000;
  ExposureLaw exposure = ExposureLaw::Uniform;
  double exposure_lo = 0.5;
  double exposure_hi = 1.5;
  double intercept = -1.6;      // a0
  double factor_scale = 0.5;    // spread of the factor coefficients a_f
  std::size_t bumps = 160;      // Gaussian bumps per factor
  double length_scale = 3.0;    // bump width in units of L (>= 3)
  std::size_t train_periods = 4;
  bool river = true;            // one column of water regions
  std::size_t n_traditional = 0;
  double traditional_scale = 0.3;
  std::size_t n_perils = 1;

  void validate() const;
};

/// Census-like stand-in: square regions with attributes driven by smooth
/// latent factors, and Poisson counts whose intensity depends on the same
/// factors at each location.
struct SyntheticWorld {
  WorldConfig config;
  std::vector<PolygonRegion> regions;   // populated regions only
  AttributeTable attributes;            // raw, every value in [0, 1]
  std::vector<Location> locations;
  std::vector<std::string> location_regions;
  Eigen::VectorXd exposure;             // per location and period
  Eigen::MatrixXd factors;              // location x factor
  Eigen::MatrixXd traditional;          // location x traditional variable
  std::vector<std::string> traditional_names;
  std::vector<Eigen::VectorXd> intensity;  // per peril
  /// Per peril, location x period counts; the last period is the test period.
  std::vector<Eigen::MatrixXd> counts;

  Eigen::VectorXd train_counts(std::size_t peril = 0) const;
  Eigen::VectorXd test_counts(std::size_t peril = 0) const;
  Eigen::VectorXd train_offset() const;  // log(periods * exposure)
  Eigen::VectorXd test_offset() const;   // log(exposure)
  std::vector<Coordinate> coordinates() const;
};

SyntheticWorld generate_world(const WorldConfig& config);

/// Latent factor values at arbitrary points (same fields as the world).
Eigen::MatrixXd factor_values(const WorldConfig& config, std::span<const Coordinate> points);

/// Everything a frequency fit needs, aligned by location.
struct FrequencyData {
  std::vector<Coordinate> coords;
  Eigen::MatrixXd embeddings;           // location x retained dimension
  std::vector<std::string> embedding_names;
  Eigen::MatrixXd traditional;          // may have zero columns
  std::vector<std::string> traditional_names;
  Eigen::VectorXd train_y, train_offset, test_y, test_offset;

  std::size_t size() const { return coords.size(); }
};

/// Builds the aligned data for one peril; embeddings are matched to world
/// locations by id and restricted to retained dimensions.
FrequencyData frequency_data(const SyntheticWorld& world, const EmbeddingSet& embeddings,
                             std::size_t peril = 0);

struct DevianceRow {
  std::size_t knots = 0;
  bool with_embeddings = false;
  double train_deviance = 0.0;
  double test_deviance = 0.0;
  double edof = 0.0;
  double lambda = 0.0;
  std::size_t columns = 0;
  double seconds = 0.0;
};

struct DevianceTable {
  std::vector<std::size_t> knots_grid;
  std::vector<DevianceRow> rows;  // no (k = 0, without) row

  const DevianceRow* find(std::size_t k, bool with_embeddings) const;
};

struct SweepOptions {
  std::vector<std::size_t> knots_grid{0, 3, 5, 8, 10};
  std::vector<double> lambda_grid{0.1, 1, 10, 100, 1000, 10000};
  std::size_t threads = 1;
  /// Knots of the within-territory GAM baseline; 0 picks k from knots_grid by GCV.
  std::size_t territory_gam_knots = 10;
};

/// Fits every (k, with/without embeddings) model on the training period and
/// scores it on the test period. Spline blocks get a GCV-selected ridge.
DevianceTable knots_sweep(const FrequencyData& data, const SweepOptions& options = {});

/// Design for the given rows: intercept, traditional columns, optional
/// embeddings, optional spline block over `basis`.
DesignMatrix frequency_design(const FrequencyData& data, std::span<const std::size_t> rows,
                              bool with_embeddings, const SplineBasis* basis, bool test_period);

void write_deviance_table(const std::filesystem::path& path, const DevianceTable& table);
/// Human-readable table with "--" cells for the absent (k = 0, without) row.
std::string render_deviance_table(const DevianceTable& table, bool with_time = true);

struct TerritoryResult {
  double oot_test = 0.0;   // embeddings GLM trained outside the territory
  double wt_test = 0.0;    // embeddings GLM trained inside
  double gam_test = 0.0;   // spline GAM trained inside
  double full_test = 0.0;  // embeddings GLM trained everywhere
  std::size_t inside = 0;
  std::size_t outside = 0;
  std::size_t gam_knots = 0;
  GlmFit oot_fit;
};

/// Test deviances on the territory's test period. An empty territory leaves
/// the inside models undefined (NaN); a territory holding every location
/// throws InsufficientTrainingData.
TerritoryResult out_of_territory(const FrequencyData& data, const std::vector<bool>& in_territory,
                                 const SweepOptions& options = {});

struct MoranEntry {
  std::size_t dimension = 0;
  double I = 0.0;
  double p_value = 1.0;
  bool zero_variance = false;
};

struct MoranReport {
  std::size_t neighbors = 8;
  std::size_t permutations = 999;
  std::vector<MoranEntry> entries;
};

/// Row-normalized k-nearest-neighbor weights, as neighbor lists.
std::vector<std::vector<std::size_t>> knn_graph(std::span<const Coordinate> coords, std::size_t k);

/// Moran's I of one variable with a one-sided permutation p-value
/// (1 + #{I_perm >= I}) / (1 + permutations). Throws ZeroVariance.
MoranEntry moran_statistic(std::span<const double> values,
                           const std::vector<std::vector<std::size_t>>& graph,
                           std::size_t permutations, std::uint64_t seed);

MoranReport moran_i(const EmbeddingSet& set, std::span<const Coordinate> coords,
                    std::size_t neighbors = 8, std::size_t permutations = 999,
                    std::uint64_t seed = 1);

struct PerilData {
  std::string name;
  Eigen::VectorXd y;
  Eigen::VectorXd offset;
};

struct PvalueGrid {
  std::vector<std::string> coefficients;  // embeddings then traditional columns
  std::vector<std::string> perils;
  Eigen::MatrixXd p_values;               // coefficient x peril
  std::vector<std::size_t> significant;   // per coefficient, perils with p < alpha
  double alpha = 0.05;
};

/// One GLM per peril on intercept + embeddings + traditional columns.
PvalueGrid perperil_pvalue_grid(const std::vector<PerilData>& perils,
                                const Eigen::MatrixXd& embeddings,
                                const std::vector<std::string>& embedding_names,
                                const Eigen::MatrixXd& traditional,
                                const std::vector<std::string>& traditional_names,
                                double alpha = 0.05);

/// For each event point, the index of the nearest location.
std::vector<std::size_t> snap_to_nearest(std::span<const Coordinate> events,
                                         std::span<const Coordinate> locations);

/// Per-dimension map (scatter colored by value) and histogram, as SVG.
/// Returns the files written; an empty set writes nothing and reports a warning.
std::vector<std::filesystem::path> export_plots(const EmbeddingSet& set,
                                                std::span<const Coordinate> coords,
                                                const std::filesystem::path& dir,
                                                std::vector<std::string>* warnings = nullptr);

/// Largest axis-aligned square around `center`, grown in steps of `step`
/// meters, that holds at most `max_share` of the locations.
std::vector<bool> square_territory(std::span<const Coordinate> coords, const Coordinate& center,
                                   double max_share, double step);

/// square_territory centered in the left half of the world (clear of the
/// river), growing by half a region side.
std::vector<bool> central_territory(const SyntheticWorld& world, double max_share);

}  // namespace geoembed
