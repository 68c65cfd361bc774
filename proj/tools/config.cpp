#include "config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace geoembed::cli {

json default_config() {
  const WorldConfig w;
  const TrainConfig t;
  const SweepOptions s;
  return json{
      {"output_dir", "geoembed-run"},
      {"threads", 1},
      {"geodata",
       {{"geometry", ""},
        {"attributes", ""},
        {"locations", ""},
        {"frequency", ""},
        {"exclude", json::array()},
        {"normalization", json::object()},
        {"default_normalization", "minmax_global"}}},
      {"cuboid", {{"spacing", 100.0}, {"grid_size", 16}, {"seed", 1}}},
      {"model",
       {{"architecture", "small_cbow"},
        {"init_std", 1e-3},
        {"init_seed", 1},
        {"embed_batch", 64},
        {"saturation_eps", 1e-3},
        {"saturation_q", 0.95},
        {"train",
         {{"lr", t.lr0},
          {"patience", t.plateau_patience},
          {"factor", t.lr_factor},
          {"max_reductions", t.max_reductions},
          {"plateau_threshold", t.plateau_threshold},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"max_epochs", t.max_epochs},
          {"locations", 0},
          {"validation_fraction", 0.2},
          {"resample_angles", false}}}}},
      {"glm",
       {{"knots", s.knots_grid},
        {"lambdas", s.lambda_grid},
        {"territory_gam_knots", s.territory_gam_knots},
        {"peril", ""}}},
      {"eval",
       {{"world",
         {{"seed", w.seed},
          {"rows", w.rows},
          {"cols", w.cols},
          {"side", w.side},
          {"n_factors", w.n_factors},
          {"n_vars", w.n_vars},
          {"attribute_noise", w.attribute_noise},
          {"n_locations", w.n_locations},
          {"exposure", std::string(to_string(w.exposure))},
          {"exposure_lo", w.exposure_lo},
          {"exposure_hi", w.exposure_hi},
          {"intercept", w.intercept},
          {"factor_scale", w.factor_scale},
          {"bumps", w.bumps},
          {"length_scale", w.length_scale},
          {"train_periods", w.train_periods},
          {"river", w.river},
          {"n_traditional", w.n_traditional},
          {"traditional_scale", w.traditional_scale},
          {"n_perils", w.n_perils}}},
        {"territories", json::array({{{"name", "center"}, {"max_share", 0.1}}})},
        {"moran", {{"neighbors", 8}, {"permutations", 999}, {"seed", 1}}},
        {"plots", true}}},
  };
}

namespace {

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    // an integer default only accepts integers
    return !a.is_number_integer() || b.is_number_integer();
  }
  return a.type() == b.type();
}

std::string kind_name(const json& j) {
  if (j.is_number_integer()) return "an integer";
  if (j.is_number()) return "a number";
  if (j.is_string()) return "a string";
  if (j.is_boolean()) return "a boolean";
  if (j.is_array()) return "an array";
  if (j.is_object()) return "an object";
  return "null";
}

// Free-form sections: their keys are user data, not schema.
bool free_form(const std::string& path) {
  return path == "geodata.normalization" || path == "eval.territories";
}

void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(path, "unknown key");
    json& slot = base[it.key()];
    if (!same_kind(slot, it.value())) {
      throw ConfigError(path, "expected " + kind_name(slot) + ", got " + kind_name(it.value()));
    }
    if (slot.is_object() && !free_form(path)) {
      merge_into(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

const json& at(const json& j, const std::string& path) {
  const json* cur = &j;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) cur = &cur->at(part);
  return *cur;
}

template <typename T>
T get(const json& j, const std::string& path) {
  return at(j, path).get<T>();
}

std::size_t count(const json& j, const std::string& path, std::size_t min = 0) {
  const auto v = at(j, path).get<long long>();
  if (v < static_cast<long long>(min)) {
    throw ConfigError(path, "must be at least " + std::to_string(min));
  }
  return static_cast<std::size_t>(v);
}

double positive(const json& j, const std::string& path) {
  const double v = get<double>(j, path);
  if (!(v > 0)) throw ConfigError(path, "must be positive");
  return v;
}

double unit_interval(const json& j, const std::string& path) {
  const double v = get<double>(j, path);
  if (!(v >= 0 && v <= 1)) throw ConfigError(path, "must lie in [0, 1]");
  return v;
}

NormalizationKind kind_at(const std::string& name, const std::string& path) {
  try {
    return normalization_from_string(name);
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

// Runs a library validate() and rethrows with a key path: the section, plus
// the field when the message starts with one of the section's keys.
template <typename Fn>
void validated(const json& m, const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    std::string msg = e.what();
    if (const auto colon = msg.find(": "); colon != std::string::npos) msg = msg.substr(colon + 2);
    const std::string word = msg.substr(0, msg.find(' '));
    const json& obj = at(m, section);
    throw ConfigError(obj.contains(word) ? section + "." + word : section, msg);
  }
}

}  // namespace

json merge_config(const json& user) {
  json base = default_config();
  merge_into(base, user, "");
  return base;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must look like key.path=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  // Build the nested object and merge it, so overrides get the same checks.
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_into(config, patch, "");
}

RunConfig parse_config(const json& m) {
  RunConfig c;
  c.effective = m;
  c.output_dir = get<std::string>(m, "output_dir");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  c.threads = count(m, "threads", 1);

  c.geometry = get<std::string>(m, "geodata.geometry");
  c.attributes = get<std::string>(m, "geodata.attributes");
  c.locations = get<std::string>(m, "geodata.locations");
  c.frequency = get<std::string>(m, "geodata.frequency");
  for (const auto& e : at(m, "geodata.exclude")) {
    if (!e.is_string()) throw ConfigError("geodata.exclude", "entries must be strings");
    c.exclude.push_back(e.get<std::string>());
  }
  for (const auto& [col, spec] : at(m, "geodata.normalization").items()) {
    const std::string path = "geodata.normalization." + col;
    NormalizationSpec s;
    if (spec.is_string()) {
      s.kind = kind_at(spec.get<std::string>(), path);
    } else if (spec.is_object()) {
      for (const auto& [k, v] : spec.items()) {
        if (k != "kind" && k != "denominator") throw ConfigError(path + "." + k, "unknown key");
        if (!v.is_string()) throw ConfigError(path + "." + k, "expected a string");
      }
      if (!spec.contains("kind")) throw ConfigError(path + ".kind", "missing");
      s.kind = kind_at(spec["kind"].get<std::string>(), path + ".kind");
      s.denominator_column = spec.value("denominator", "");
    } else {
      throw ConfigError(path, "expected a kind name or {kind, denominator}");
    }
    if (s.kind == NormalizationKind::ShareOfRegionTotal && s.denominator_column.empty()) {
      throw ConfigError(path + ".denominator", "share columns need a denominator");
    }
    c.normalization[col] = s;
  }
  if (const auto d = get<std::string>(m, "geodata.default_normalization"); !d.empty()) {
    c.default_normalization = kind_at(d, "geodata.default_normalization");
    if (*c.default_normalization == NormalizationKind::ShareOfRegionTotal) {
      throw ConfigError("geodata.default_normalization", "share needs a per-column denominator");
    }
  }

  c.grid.spacing = positive(m, "cuboid.spacing");
  c.grid.grid_size = count(m, "cuboid.grid_size", 1);
  c.grid.rng_seed = get<std::uint64_t>(m, "cuboid.seed");
  validated(m, "cuboid", [&] { c.grid.validate(); });

  try {
    c.architecture = architecture_from_string(get<std::string>(m, "model.architecture"));
  } catch (const Error& e) {
    throw ConfigError("model.architecture", e.what());
  }
  if (c.grid.grid_size % 4 != 0) {
    throw ConfigError("cuboid.grid_size", "the encoder needs a multiple of 4");
  }
  c.init.weight_std = positive(m, "model.init_std");
  c.init.seed = get<std::uint64_t>(m, "model.init_seed");
  c.embed_batch = count(m, "model.embed_batch", 1);
  c.saturation_eps = unit_interval(m, "model.saturation_eps");
  c.saturation_q = unit_interval(m, "model.saturation_q");

  auto& t = c.train;
  t.lr0 = positive(m, "model.train.lr");
  t.plateau_patience = count(m, "model.train.patience");
  t.lr_factor = positive(m, "model.train.factor");
  t.max_reductions = count(m, "model.train.max_reductions");
  t.plateau_threshold = get<double>(m, "model.train.plateau_threshold");
  t.batch_size = count(m, "model.train.batch_size", 1);
  t.seed = get<std::uint64_t>(m, "model.train.seed");
  t.max_epochs = count(m, "model.train.max_epochs", 1);
  validated(m, "model.train", [&] { t.validate(); });
  c.train_locations = count(m, "model.train.locations");
  c.validation_fraction = get<double>(m, "model.train.validation_fraction");
  c.resample_angles = get<bool>(m, "model.train.resample_angles");
  if (!(c.validation_fraction >= 0 && c.validation_fraction < 1)) {
    throw ConfigError("model.train.validation_fraction", "must lie in [0, 1)");
  }

  c.sweep.knots_grid.clear();
  for (const auto& k : at(m, "glm.knots")) {
    if (!k.is_number_unsigned()) throw ConfigError("glm.knots", "entries must be non-negative integers");
    if (k.get<std::size_t>() == 1) throw ConfigError("glm.knots", "k = 1 is not a valid knot count");
    c.sweep.knots_grid.push_back(k.get<std::size_t>());
  }
  if (c.sweep.knots_grid.empty()) throw ConfigError("glm.knots", "must not be empty");
  c.sweep.lambda_grid.clear();
  for (const auto& l : at(m, "glm.lambdas")) {
    if (!l.is_number() || !(l.get<double>() > 0)) throw ConfigError("glm.lambdas", "entries must be positive");
    c.sweep.lambda_grid.push_back(l.get<double>());
  }
  if (c.sweep.lambda_grid.empty()) throw ConfigError("glm.lambdas", "must not be empty");
  c.sweep.territory_gam_knots = count(m, "glm.territory_gam_knots");
  if (c.sweep.territory_gam_knots == 1)
    throw ConfigError("glm.territory_gam_knots", "k = 1 is not a valid knot count");
  c.sweep.threads = c.threads;
  c.peril = get<std::string>(m, "glm.peril");

  auto& w = c.world;
  const std::string wp = "eval.world.";
  w.seed = get<std::uint64_t>(m, wp + "seed");
  w.rows = count(m, wp + "rows");
  w.cols = count(m, wp + "cols");
  w.side = get<double>(m, wp + "side");
  w.n_factors = count(m, wp + "n_factors");
  w.n_vars = count(m, wp + "n_vars");
  w.attribute_noise = get<double>(m, wp + "attribute_noise");
  w.n_locations = count(m, wp + "n_locations");
  try {
    w.exposure = exposure_from_string(get<std::string>(m, wp + "exposure"));
  } catch (const Error& e) {
    throw ConfigError(wp + "exposure", e.what());
  }
  w.exposure_lo = get<double>(m, wp + "exposure_lo");
  w.exposure_hi = get<double>(m, wp + "exposure_hi");
  w.intercept = get<double>(m, wp + "intercept");
  w.factor_scale = get<double>(m, wp + "factor_scale");
  w.bumps = count(m, wp + "bumps");
  w.length_scale = get<double>(m, wp + "length_scale");
  w.train_periods = count(m, wp + "train_periods");
  w.river = get<bool>(m, wp + "river");
  w.n_traditional = count(m, wp + "n_traditional");
  w.traditional_scale = get<double>(m, wp + "traditional_scale");
  w.n_perils = count(m, wp + "n_perils");
  validated(m, "eval.world", [&] { w.validate(); });

  const auto& terr = at(m, "eval.territories");
  if (!terr.is_array()) throw ConfigError("eval.territories", "expected an array");
  for (std::size_t i = 0; i < terr.size(); ++i) {
    const std::string path = "eval.territories[" + std::to_string(i) + "]";
    const auto& e = terr[i];
    if (!e.is_object()) throw ConfigError(path, "expected an object");
    TerritorySpec s;
    for (const auto& [k, v] : e.items()) {
      const std::string kp = path + "." + k;
      if (k == "name") {
        if (!v.is_string()) throw ConfigError(kp, "expected a string");
        s.name = v.get<std::string>();
      } else if (k == "center") {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
          throw ConfigError(kp, "expected [x, y]");
        }
        s.center = Coordinate{v[0].get<double>(), v[1].get<double>()};
      } else if (k == "max_share") {
        if (!v.is_number() || !(v.get<double>() > 0 && v.get<double>() < 1)) {
          throw ConfigError(kp, "must lie in (0, 1)");
        }
        s.max_share = v.get<double>();
      } else if (k == "step") {
        if (!v.is_number() || !(v.get<double>() > 0)) throw ConfigError(kp, "must be positive");
        s.step = v.get<double>();
      } else {
        throw ConfigError(kp, "unknown key");
      }
    }
    if (s.name.empty()) throw ConfigError(path + ".name", "missing");
    c.territories.push_back(s);
  }

  c.moran_neighbors = count(m, "eval.moran.neighbors", 1);
  c.moran_permutations = count(m, "eval.moran.permutations", 999);
  c.moran_seed = get<std::uint64_t>(m, "eval.moran.seed");
  c.plots = get<bool>(m, "eval.plots");
  return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides) {
  json user = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) fail(ErrorCode::MissingArtifact, "config file not found: " + file->string());
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("<file>", std::string("not valid JSON: ") + e.what());
    }
  }
  json merged = merge_config(user);
  if (const char* dir = std::getenv("GEOEMBED_OUTPUT_DIR"); dir && *dir) {
    merged["output_dir"] = dir;
  }
  if (const char* th = std::getenv("GEOEMBED_THREADS"); th && *th) {
    char* end = nullptr;
    const long v = std::strtol(th, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("GEOEMBED_THREADS", "must be a positive integer");
    merged["threads"] = v;
  }
  for (const auto& o : overrides) apply_override(merged, o);
  return parse_config(merged);
}

}  // namespace geoembed::cli
