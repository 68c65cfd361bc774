#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoembed/cuboid.hpp"
#include "geoembed/embedmodel.hpp"
#include "geoembed/error.hpp"
#include "geoembed/evalsuite.hpp"
#include "geoembed/geodata.hpp"
#include "geoembed/train.hpp"

namespace geoembed::cli {

using nlohmann::json;

/// Every key a config may hold, with its default value.
json default_config();

/// Merges `user` over the defaults. Unknown keys and type mismatches throw
/// ConfigInvalid naming the key path.
json merge_config(const json& user);

/// Applies "a.b.c=value"; the value is parsed as JSON when it can be,
/// otherwise taken as a string.
void apply_override(json& config, const std::string& assignment);

struct TerritorySpec {
  std::string name;
  std::optional<Coordinate> center;  // default: quarter width, mid height
  double max_share = 0.1;
  double step = 200.0;
};

struct RunConfig {
  std::filesystem::path output_dir;
  std::size_t threads = 1;

  // geodata
  std::filesystem::path geometry, attributes, locations, frequency;
  std::vector<std::string> exclude;
  std::map<std::string, NormalizationSpec> normalization;
  std::optional<NormalizationKind> default_normalization;

  GridParams grid;

  ArchitectureName architecture = ArchitectureName::SmallCBOW;
  InitConfig init;
  TrainConfig train;
  std::size_t train_locations = 0;  // 0 = every location
  double validation_fraction = 0.2;
  bool resample_angles = false;  // redraw grid angles every epoch
  std::size_t embed_batch = 64;
  double saturation_eps = 1e-3;
  double saturation_q = 0.95;

  SweepOptions sweep;
  std::string peril;  // empty = first peril in the frequency file

  WorldConfig world;
  std::vector<TerritorySpec> territories;
  std::size_t moran_neighbors = 8;
  std::size_t moran_permutations = 999;
  std::uint64_t moran_seed = 1;
  bool plots = true;

  json effective;  // the merged document
};

/// Validates the merged document and converts it. Errors carry key paths.
RunConfig parse_config(const json& merged);

/// Reads a config file (JSON), applies environment and --set overrides.
RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides);

/// ConfigInvalid that also names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(ErrorCode::ConfigInvalid, key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace geoembed::cli
