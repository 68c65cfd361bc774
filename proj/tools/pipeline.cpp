#include "pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "geoembed/csv.hpp"
#include "geoembed/hash.hpp"
#include "geoembed/parallel.hpp"

namespace geoembed::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

template <typename... Args>
void note(StageName stage, const char* fmt, Args... args) {
  std::fprintf(stderr, "[%s] ", std::string(to_string(stage)).c_str());
  if constexpr (sizeof...(Args) == 0) {
    std::fputs(fmt, stderr);
  } else {
    std::fprintf(stderr, fmt, args...);
  }
  std::fputc('\n', stderr);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

// NaN has no JSON spelling; it becomes null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------------------
// Paths

struct Paths {
  fs::path root;

  fs::path stage_dir(StageName s) const { return root / std::string(to_string(s)); }
  fs::path synth_regions() const { return stage_dir(StageName::Synth) / "regions.geojson"; }
  fs::path synth_attributes() const { return stage_dir(StageName::Synth) / "attributes.csv"; }
  fs::path synth_locations() const { return stage_dir(StageName::Synth) / "locations.csv"; }
  fs::path synth_frequency() const { return stage_dir(StageName::Synth) / "frequency.csv"; }
  fs::path regions() const { return stage_dir(StageName::Ingest) / "regions.geojson"; }
  fs::path attributes() const { return stage_dir(StageName::Ingest) / "attributes.csv"; }
  fs::path normalization() const { return stage_dir(StageName::Ingest) / "normalization.json"; }
  fs::path cache() const { return stage_dir(StageName::Cuboid) / "cache.csv"; }
  fs::path centers() const { return stage_dir(StageName::Cuboid) / "centers.csv"; }
  fs::path checkpoint() const { return stage_dir(StageName::Train) / "checkpoint.bin"; }
  fs::path training_log() const { return stage_dir(StageName::Train) / "training_log.csv"; }
  fs::path training_summary() const { return stage_dir(StageName::Train) / "summary.json"; }
  fs::path embeddings() const { return stage_dir(StageName::Embed) / "embeddings.csv"; }
  fs::path embeddings_meta() const { return stage_dir(StageName::Embed) / "embeddings.json"; }
  fs::path embed_summary() const { return stage_dir(StageName::Embed) / "summary.json"; }
  fs::path deviance() const { return stage_dir(StageName::Fit) / "deviance_table.csv"; }
  fs::path models() const { return stage_dir(StageName::Fit) / "models.json"; }
  fs::path moran() const { return stage_dir(StageName::Evaluate) / "moran.json"; }
  fs::path territories() const { return stage_dir(StageName::Evaluate) / "territories.json"; }
  fs::path pvalues() const { return stage_dir(StageName::Evaluate) / "pvalues.csv"; }
  fs::path plots() const { return stage_dir(StageName::Evaluate) / "plots"; }
  fs::path report() const { return stage_dir(StageName::Report) / "report.txt"; }
};

// Input file chosen by the config, or the synth artifact when unset.
fs::path input_or_synth(const fs::path& configured, const fs::path& synth) {
  return configured.empty() ? synth : configured;
}

const fs::path& require(const fs::path& path, StageName producer) {
  if (!fs::exists(path)) {
    throw ArtifactError(path, " (run the '" + std::string(to_string(producer)) + "' stage first)");
  }
  return path;
}

const fs::path& require_input(const fs::path& path, const fs::path& configured) {
  if (!fs::exists(path)) {
    if (configured.empty()) return require(path, StageName::Synth);
    throw ArtifactError(path, " (configured input)");
  }
  return path;
}

std::string relative_to(const fs::path& file, const fs::path& root) {
  return fs::relative(file, root).generic_string();
}

// ---------------------------------------------------------------------------
// Location and frequency files

std::vector<Location> read_locations(const fs::path& path) {
  const csv::Table t = csv::read(path);
  auto col = [&](const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) fail(ErrorCode::FormatError, path.string() + " has no '" + name + "' column");
    return static_cast<std::size_t>(it - t.header.begin());
  };
  const std::size_t id = col("location_id"), x = col("x"), y = col("y");
  std::vector<Location> out;
  out.reserve(t.rows.size());
  std::set<std::string> seen;
  for (const auto& r : t.rows) {
    if (!seen.insert(r[id]).second) fail(ErrorCode::KeyMismatch, "duplicate location id " + r[id]);
    out.push_back({r[id], {csv::parse_double(r[x]), csv::parse_double(r[y])}});
  }
  return out;
}

void write_locations(const fs::path& path, const std::vector<Location>& locations) {
  csv::Table t;
  t.header = {"location_id", "x", "y"};
  for (const auto& l : locations) {
    t.rows.push_back({l.id, csv::format_double(l.position.x), csv::format_double(l.position.y)});
  }
  csv::write(path, t);
}

// Columns: location_id, train_offset, test_offset, then train:<peril> and
// test:<peril> pairs and trad:<name> covariates.
struct FrequencyFile {
  std::vector<std::string> ids;
  Eigen::VectorXd train_offset, test_offset;
  std::vector<std::string> perils;
  std::vector<Eigen::VectorXd> train, test;
  std::vector<std::string> traditional_names;
  Eigen::MatrixXd traditional;
};

FrequencyFile read_frequency(const fs::path& path) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 3 || t.header[0] != "location_id" || t.header[1] != "train_offset" ||
      t.header[2] != "test_offset") {
    fail(ErrorCode::FormatError, path.string() + " must start with location_id,train_offset,test_offset");
  }
  FrequencyFile f;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  std::vector<std::size_t> train_cols, test_cols, trad_cols;
  for (std::size_t c = 3; c < t.header.size(); ++c) {
    const std::string& h = t.header[c];
    if (h.rfind("train:", 0) == 0) {
      f.perils.push_back(h.substr(6));
      train_cols.push_back(c);
    } else if (h.rfind("trad:", 0) == 0) {
      f.traditional_names.push_back(h.substr(5));
      trad_cols.push_back(c);
    }
  }
  for (const auto& p : f.perils) {
    const auto it = std::find(t.header.begin(), t.header.end(), "test:" + p);
    if (it == t.header.end()) fail(ErrorCode::FormatError, path.string() + " lacks test:" + p);
    test_cols.push_back(static_cast<std::size_t>(it - t.header.begin()));
  }
  if (f.perils.empty()) fail(ErrorCode::FormatError, path.string() + " has no train:<peril> column");
  f.train_offset.resize(n);
  f.test_offset.resize(n);
  f.train.assign(f.perils.size(), Eigen::VectorXd(n));
  f.test.assign(f.perils.size(), Eigen::VectorXd(n));
  f.traditional.resize(n, static_cast<Eigen::Index>(trad_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = t.rows[static_cast<std::size_t>(i)];
    f.ids.push_back(r[0]);
    f.train_offset(i) = csv::parse_double(r[1]);
    f.test_offset(i) = csv::parse_double(r[2]);
    for (std::size_t p = 0; p < f.perils.size(); ++p) {
      f.train[p](i) = csv::parse_double(r[train_cols[p]]);
      f.test[p](i) = csv::parse_double(r[test_cols[p]]);
    }
    for (std::size_t j = 0; j < trad_cols.size(); ++j) {
      f.traditional(i, static_cast<Eigen::Index>(j)) = csv::parse_double(r[trad_cols[j]]);
    }
  }
  return f;
}

void write_frequency(const fs::path& path, const SyntheticWorld& w) {
  csv::Table t;
  t.header = {"location_id", "train_offset", "test_offset"};
  for (std::size_t p = 0; p < w.counts.size(); ++p) {
    t.header.push_back("train:peril" + std::to_string(p));
    t.header.push_back("test:peril" + std::to_string(p));
  }
  for (const auto& name : w.traditional_names) t.header.push_back("trad:" + name);
  const Eigen::VectorXd tro = w.train_offset(), teo = w.test_offset();
  std::vector<Eigen::VectorXd> tr, te;
  for (std::size_t p = 0; p < w.counts.size(); ++p) {
    tr.push_back(w.train_counts(p));
    te.push_back(w.test_counts(p));
  }
  for (std::size_t i = 0; i < w.locations.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    csv::Row r{w.locations[i].id, csv::format_double(tro(k)), csv::format_double(teo(k))};
    for (std::size_t p = 0; p < tr.size(); ++p) {
      r.push_back(csv::format_double(tr[p](k)));
      r.push_back(csv::format_double(te[p](k)));
    }
    for (Eigen::Index j = 0; j < w.traditional.cols(); ++j) r.push_back(csv::format_double(w.traditional(k, j)));
    t.rows.push_back(std::move(r));
  }
  csv::write(path, t);
}

std::size_t peril_index(const FrequencyFile& f, const std::string& name) {
  if (name.empty()) return 0;
  const auto it = std::find(f.perils.begin(), f.perils.end(), name);
  if (it == f.perils.end()) throw ConfigError("glm.peril", "no peril '" + name + "' in the frequency file");
  return static_cast<std::size_t>(it - f.perils.begin());
}

// Rows follow the frequency file; every row needs a location and an embedding.
FrequencyData assemble(const FrequencyFile& f, std::size_t peril, const std::vector<Location>& locations,
                       const EmbeddingSet& emb) {
  std::map<std::string, std::size_t> loc_row, emb_row;
  for (std::size_t i = 0; i < locations.size(); ++i) loc_row[locations[i].id] = i;
  for (std::size_t i = 0; i < emb.size(); ++i) emb_row[emb.location_ids[i]] = i;
  FrequencyData d;
  const auto n = static_cast<Eigen::Index>(f.ids.size());
  d.embeddings.resize(n, static_cast<Eigen::Index>(emb.retained_dims.size()));
  for (auto k : emb.retained_dims) d.embedding_names.push_back("e" + std::to_string(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string& id = f.ids[static_cast<std::size_t>(i)];
    const auto l = loc_row.find(id);
    if (l == loc_row.end()) fail(ErrorCode::KeyMismatch, "location " + id + " has frequency data but no position");
    const auto e = emb_row.find(id);
    if (e == emb_row.end()) fail(ErrorCode::KeyMismatch, "location " + id + " has no embedding");
    d.coords.push_back(locations[l->second].position);
    for (std::size_t j = 0; j < emb.retained_dims.size(); ++j) {
      d.embeddings(i, static_cast<Eigen::Index>(j)) = emb.at(e->second, emb.retained_dims[j]);
    }
  }
  d.traditional = f.traditional;
  d.traditional_names = f.traditional_names;
  d.train_y = f.train[peril];
  d.test_y = f.test[peril];
  d.train_offset = f.train_offset;
  d.test_offset = f.test_offset;
  return d;
}

std::vector<Coordinate> embedding_coords(const EmbeddingSet& emb, const std::vector<Location>& locations) {
  std::map<std::string, Coordinate> pos;
  for (const auto& l : locations) pos[l.id] = l.position;
  std::vector<Coordinate> out;
  out.reserve(emb.size());
  for (const auto& id : emb.location_ids) {
    const auto it = pos.find(id);
    if (it == pos.end()) fail(ErrorCode::KeyMismatch, "embedded location " + id + " has no position");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region data written by ingest

struct Regions {
  std::vector<PolygonRegion> regions;
  AttributeTable table;
};

Regions load_ingested(const Paths& p) {
  auto r = ingest_regions(require(p.regions(), StageName::Ingest), require(p.attributes(), StageName::Ingest), {});
  r.table.mark_normalized(true);
  return {std::move(r.regions), std::move(r.table)};
}

std::vector<std::string> read_centers(const fs::path& path, const CuboidIndexCache& cache) {
  const csv::Table t = csv::read(path);
  if (t.rows.size() != cache.entries.size()) {
    fail(ErrorCode::KeyMismatch, path.string() + " and the cuboid cache differ in length");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].at(0) != cache.entries[i].location_id) {
      fail(ErrorCode::KeyMismatch, "center row " + std::to_string(i) + " does not match the cache");
    }
    out.push_back(t.rows[i].at(1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

struct StageRun {
  std::vector<fs::path> inputs;
  json settings;
  std::function<std::vector<fs::path>()> body;
};

std::string stage_key(StageName s, const StageRun& run, const fs::path& root) {
  json k;
  k["format"] = kFormatVersion;
  k["stage"] = std::string(to_string(s));
  k["settings"] = run.settings;
  json inputs = json::object();
  for (const auto& in : run.inputs) {
    // inputs inside the run directory are keyed by relative path
    const auto rel = fs::relative(in, root);
    const std::string name = (!rel.empty() && *rel.begin() != "..") ? rel.generic_string() : in.string();
    inputs[name] = sha256_file(in);
  }
  k["inputs"] = inputs;
  return sha256_hex(k.dump());
}

StageRun synth_stage(const RunConfig& c, const Paths& p) {
  StageRun r;
  r.settings = c.effective["eval"]["world"];
  r.body = [&c, p] {
    auto t0 = std::chrono::steady_clock::now();
    const SyntheticWorld w = generate_world(c.world);
    write_text(p.synth_regions(), regions_to_geojson(w.regions));
    write_attribute_table(p.synth_attributes(), w.attributes);
    write_locations(p.synth_locations(), w.locations);
    write_frequency(p.synth_frequency(), w);
    note(StageName::Synth, "%zu regions, %zu locations, %zu peril(s) in %.1fs", w.regions.size(),
         w.locations.size(), w.counts.size(), seconds_since(t0));
    return std::vector<fs::path>{p.synth_regions(), p.synth_attributes(), p.synth_locations(),
                                 p.synth_frequency()};
  };
  return r;
}

StageRun ingest_stage(const RunConfig& c, const Paths& p) {
  const fs::path geometry = input_or_synth(c.geometry, p.synth_regions());
  const fs::path attributes = input_or_synth(c.attributes, p.synth_attributes());
  StageRun r;
  r.inputs = {require_input(geometry, c.geometry), require_input(attributes, c.attributes)};
  r.settings = c.effective["geodata"];
  r.settings.erase("locations");
  r.settings.erase("frequency");
  r.settings.erase("geometry");
  r.settings.erase("attributes");
  r.body = [&c, p, geometry, attributes] {
    const IngestResult in = ingest_regions(geometry, attributes, c.exclude);
    std::map<std::string, NormalizationSpec> specs;
    for (const auto& [col, spec] : c.normalization) {
      if (!in.table.find_column(col)) {
        throw ConfigError("geodata.normalization." + col, "no such attribute column");
      }
      specs[col] = spec;
    }
    for (const auto& col : in.table.columns()) {
      if (specs.count(col)) continue;
      if (!c.default_normalization) {
        throw ConfigError("geodata.normalization." + col, "no normalization given for this column");
      }
      specs[col] = {*c.default_normalization, ""};
    }
    const NormalizationResult n = normalize(in.table, specs);
    for (const auto& col : n.degenerate_columns) {
      note(StageName::Ingest, "warning: column %s is constant and was set to 0", col.c_str());
    }
    for (const auto& id : n.missing_rows) {
      note(StageName::Ingest, "warning: region %s has a non-positive share denominator", id.c_str());
    }
    write_text(p.regions(), regions_to_geojson(in.regions));
    write_attribute_table(p.attributes(), n.table);
    json meta;
    meta["columns"] = n.table.columns();
    meta["regions"] = in.regions.size();
    meta["degenerate_columns"] = n.degenerate_columns;
    meta["missing_rows"] = n.missing_rows;
    json ranges = json::object();
    for (const auto& [col, range] : n.ranges) ranges[col] = {{"min", range.min}, {"max", range.max}};
    meta["ranges"] = ranges;
    json kinds = json::object();
    for (const auto& [col, spec] : specs) {
      kinds[col] = {{"kind", std::string(to_string(spec.kind))}, {"denominator", spec.denominator_column}};
    }
    meta["specs"] = kinds;
    write_text(p.normalization(), meta.dump(2) + "\n");
    note(StageName::Ingest, "%zu regions, %zu attributes", in.regions.size(), n.table.dimension());
    return std::vector<fs::path>{p.regions(), p.attributes(), p.normalization()};
  };
  return r;
}

StageRun cuboid_stage(const RunConfig& c, const Paths& p) {
  const fs::path locations = input_or_synth(c.locations, p.synth_locations());
  StageRun r;
  r.inputs = {require(p.regions(), StageName::Ingest), require(p.attributes(), StageName::Ingest),
              require_input(locations, c.locations)};
  r.settings = c.effective["cuboid"];
  r.body = [&c, p, locations] {
    auto t0 = std::chrono::steady_clock::now();
    const Regions reg = load_ingested(p);
    const RegionIndex index(reg.regions);
    const auto locs = read_locations(locations);
    const CuboidDataset ds(locs, index, reg.table, c.grid, c.threads);
    write_cache(p.cache(), ds.cache());
    csv::Table centers;
    centers.header = {"location_id", "region_id"};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      centers.rows.push_back({ds.location_ids()[i], ds.center_regions()[i]});
    }
    csv::write(p.centers(), centers);
    const auto outside = static_cast<std::size_t>(
        std::count(ds.center_regions().begin(), ds.center_regions().end(), std::string(kMissingRegion)));
    if (outside > 0) note(StageName::Cuboid, "warning: %zu locations fall outside every region", outside);
    note(StageName::Cuboid, "%zu cuboids of %zux%zux%zu in %.1fs", ds.size(), ds.grid_size(), ds.grid_size(),
         ds.dimension(), seconds_since(t0));
    return std::vector<fs::path>{p.cache(), p.centers()};
  };
  return r;
}

CuboidDataset load_dataset(const Paths& p, const AttributeTable& table) {
  const CuboidIndexCache cache = read_cache(require(p.cache(), StageName::Cuboid));
  return CuboidDataset(cache, read_centers(require(p.centers(), StageName::Cuboid), cache), table);
}

StageRun train_stage(const RunConfig& c, const Paths& p) {
  const fs::path locations = input_or_synth(c.locations, p.synth_locations());
  StageRun r;
  r.inputs = {require(p.attributes(), StageName::Ingest), require(p.cache(), StageName::Cuboid),
              require(p.centers(), StageName::Cuboid)};
  r.settings = c.effective["model"];
  r.settings.erase("embed_batch");
  r.settings.erase("saturation_eps");
  r.settings.erase("saturation_q");
  if (c.resample_angles) {
    r.inputs.push_back(require(p.regions(), StageName::Ingest));
    r.inputs.push_back(require_input(locations, c.locations));
    r.settings["cuboid"] = c.effective["cuboid"];
  }
  r.body = [&c, p, locations] {
    const Regions reg = load_ingested(p);
    CuboidDataset ds = load_dataset(p, reg.table);
    std::optional<RegionIndex> index;
    std::vector<Location> locs;
    if (c.resample_angles) {
      index.emplace(reg.regions);
      locs = read_locations(locations);
    }

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(splitmix64(c.train.seed ^ 0x73706c6974ULL));
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t used = c.train_locations ? std::min(c.train_locations, ds.size()) : ds.size();
    const auto n_val = static_cast<std::size_t>(std::floor(c.validation_fraction * static_cast<double>(used)));
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                                   order.begin() + static_cast<std::ptrdiff_t>(used));
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());

    EmbeddingModel model(c.architecture, ds.dimension(), ds.grid_size(), c.init);
    note(StageName::Train, "%s, %zu parameters, %zu training / %zu validation cuboids",
         std::string(to_string(c.architecture)).c_str(), model.architecture().parameter_count(), train.size(),
         val.size());
    auto t0 = std::chrono::steady_clock::now();
    const TrainingLog log = model.train(ds, train, val, c.train, [&](const EpochRecord& e) {
      if (e.epoch % 10 == 0 || e.reduced) {
        note(StageName::Train, "epoch %zu loss %.6g monitored %.6g lr %g%s", e.epoch, e.train_loss,
             e.monitored_loss, e.lr, e.reduced ? " (reduced)" : "");
      }
      // the loop reads cuboids lazily, so the next epoch sees the new angles
      if (c.resample_angles) ds.resample_angles(locs, *index, c.grid, e.epoch + 1, c.threads);
    });
    const double secs = seconds_since(t0);
    if (!log.schedule_finished) {
      note(StageName::Train, "warning: stopped at max_epochs before the schedule finished");
    }
    model.save(p.checkpoint());
    write_training_log(p.training_log(), log);
    json summary;
    summary["architecture"] = std::string(to_string(c.architecture));
    summary["parameters"] = model.architecture().parameter_count();
    summary["epochs"] = log.epochs.size();
    summary["best_epoch"] = log.best_epoch;
    summary["best_loss"] = log.best_loss;
    summary["schedule_finished"] = log.schedule_finished;
    summary["train_size"] = train.size();
    summary["validation_size"] = val.size();
    summary["seconds"] = secs;
    write_text(p.training_summary(), summary.dump(2) + "\n");
    note(StageName::Train, "best loss %.6g at epoch %zu, %.1fs", log.best_loss, log.best_epoch, secs);
    return std::vector<fs::path>{p.checkpoint(), p.training_log(), p.training_summary()};
  };
  return r;
}

StageRun embed_stage(const RunConfig& c, const Paths& p) {
  StageRun r;
  r.inputs = {require(p.checkpoint(), StageName::Train), require(p.attributes(), StageName::Ingest),
              require(p.cache(), StageName::Cuboid), require(p.centers(), StageName::Cuboid)};
  r.settings = {{"embed_batch", c.embed_batch},
                {"saturation_eps", c.saturation_eps},
                {"saturation_q", c.saturation_q},
                {"cuboid", c.effective["cuboid"]}};
  r.body = [&c, p] {
    auto t0 = std::chrono::steady_clock::now();
    const Regions reg = load_ingested(p);
    const CuboidDataset ds = load_dataset(p, reg.table);
    EmbeddingModel model = EmbeddingModel::load(p.checkpoint());
    if (model.architecture().dimension != ds.dimension() || model.architecture().grid_size != ds.grid_size()) {
      fail(ErrorCode::ShapeMismatch, "checkpoint does not match the cuboids; rerun train");
    }
    EmbeddingSet set = model.extract(ds, c.embed_batch);
    set.spacing = c.grid.spacing;
    set.seed = c.grid.rng_seed;
    SaturationReport rep;
    set = saturation_filter(set, c.saturation_eps, c.saturation_q, &rep);
    write_embeddings(p.embeddings(), p.embeddings_meta(), set);
    json sat;
    sat["eps"] = c.saturation_eps;
    sat["q"] = c.saturation_q;
    sat["saturated_fraction"] = rep.saturated_fraction;
    sat["dropped"] = rep.dropped;
    sat["retained"] = set.retained_dims;
    const EmbeddingStats st = embedding_stats(set);
    sat["mean"] = st.mean;
    sat["mean_abs"] = st.mean_abs;
    sat["overall_mean"] = st.overall_mean;
    sat["overall_mean_abs"] = st.overall_mean_abs;
    write_text(p.embed_summary(), sat.dump(2) + "\n");
    for (auto k : rep.dropped) {
      note(StageName::Embed, "dimension e%zu is saturated (%.1f%% at +-1) and was dropped", k,
           100 * rep.saturated_fraction[k]);
    }
    if (set.retained_dims.empty()) note(StageName::Embed, "warning: every dimension is saturated");
    note(StageName::Embed, "%zu embeddings, %zu of %zu dimensions retained, %.1fs", set.size(),
         set.retained_dims.size(), set.embedding_dim, seconds_since(t0));
    return std::vector<fs::path>{p.embeddings(), p.embeddings_meta(), p.embed_summary()};
  };
  return r;
}

json coefficient_table(const GlmFit& fit) {
  json rows = json::array();
  for (std::size_t j = 0; j < fit.names.size(); ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    rows.push_back({{"name", fit.names[j]},
                    {"estimate", number(fit.coefficients(k))},
                    {"std_error", number(fit.std_errors(k))},
                    {"p_value", number(fit.p_values(k))}});
  }
  return rows;
}

StageRun fit_stage(const RunConfig& c, const Paths& p) {
  const fs::path frequency = input_or_synth(c.frequency, p.synth_frequency());
  const fs::path locations = input_or_synth(c.locations, p.synth_locations());
  StageRun r;
  r.inputs = {require(p.embeddings(), StageName::Embed), require(p.embeddings_meta(), StageName::Embed),
              require_input(frequency, c.frequency), require_input(locations, c.locations)};
  r.settings = c.effective["glm"];
  r.body = [&c, p, frequency, locations] {
    const EmbeddingSet emb = read_embeddings(p.embeddings(), p.embeddings_meta());
    const FrequencyFile f = read_frequency(frequency);
    const std::size_t peril = peril_index(f, c.peril);
    const FrequencyData data = assemble(f, peril, read_locations(locations), emb);
    if (data.embeddings.cols() == 0) note(StageName::Fit, "warning: no retained embedding dimensions");

    auto t0 = std::chrono::steady_clock::now();
    const DevianceTable table = knots_sweep(data, c.sweep);
    note(StageName::Fit, "knots sweep over %zu models in %.1fs", table.rows.size(), seconds_since(t0));
    write_deviance_table(p.deviance(), table);

    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const GlmFit glm = fit_poisson(frequency_design(data, all, true, nullptr, false), data.train_y);

    json models;
    models["peril"] = f.perils[peril];
    models["locations"] = data.size();
    json rows = json::array();
    for (const auto& row : table.rows) {
      rows.push_back({{"knots", row.knots},
                      {"embeddings", row.with_embeddings},
                      {"train_deviance", row.train_deviance},
                      {"test_deviance", row.test_deviance},
                      {"edof", row.edof},
                      {"lambda", row.lambda},
                      {"columns", row.columns},
                      {"seconds", row.seconds}});
    }
    models["sweep"] = rows;
    models["glm_with_embeddings"] = {{"coefficients", coefficient_table(glm)},
                                     {"train_deviance", glm.train_deviance},
                                     {"iterations", glm.iterations}};
    write_text(p.models(), models.dump(2) + "\n");
    std::fputs(render_deviance_table(table).c_str(), stderr);
    return std::vector<fs::path>{p.deviance(), p.models()};
  };
  return r;
}

StageRun evaluate_stage(const RunConfig& c, const Paths& p) {
  const fs::path frequency = input_or_synth(c.frequency, p.synth_frequency());
  const fs::path locations = input_or_synth(c.locations, p.synth_locations());
  StageRun r;
  r.inputs = {require(p.embeddings(), StageName::Embed), require(p.embeddings_meta(), StageName::Embed),
              require_input(frequency, c.frequency), require_input(locations, c.locations)};
  r.settings = c.effective["eval"];
  r.settings.erase("world");
  r.settings["glm"] = c.effective["glm"];
  r.body = [&c, p, frequency, locations] {
    const EmbeddingSet emb = read_embeddings(p.embeddings(), p.embeddings_meta());
    const auto locs = read_locations(locations);
    const auto coords = embedding_coords(emb, locs);
    std::vector<fs::path> written;

    auto t0 = std::chrono::steady_clock::now();
    const MoranReport moran = moran_i(emb, coords, c.moran_neighbors, c.moran_permutations, c.moran_seed);
    json mj;
    mj["neighbors"] = moran.neighbors;
    mj["permutations"] = moran.permutations;
    json entries = json::array();
    for (const auto& e : moran.entries) {
      entries.push_back({{"dimension", e.dimension},
                         {"I", number(e.I)},
                         {"p_value", number(e.p_value)},
                         {"zero_variance", e.zero_variance}});
    }
    mj["entries"] = entries;
    write_text(p.moran(), mj.dump(2) + "\n");
    written.push_back(p.moran());
    note(StageName::Evaluate, "Moran's I on %zu dimensions in %.1fs", moran.entries.size(), seconds_since(t0));

    const FrequencyFile f = read_frequency(frequency);
    const FrequencyData data = assemble(f, peril_index(f, c.peril), locs, emb);
    json terr = json::array();
    for (const auto& spec : c.territories) {
      Coordinate center;
      if (spec.center) {
        center = *spec.center;
      } else {
        BoundingBox b{data.coords[0].x, data.coords[0].y, data.coords[0].x, data.coords[0].y};
        for (const auto& q : data.coords) {
          b.min_x = std::min(b.min_x, q.x);
          b.max_x = std::max(b.max_x, q.x);
          b.min_y = std::min(b.min_y, q.y);
          b.max_y = std::max(b.max_y, q.y);
        }
        center = {b.min_x + 0.25 * (b.max_x - b.min_x), 0.5 * (b.min_y + b.max_y)};
      }
      const auto inside = square_territory(data.coords, center, spec.max_share, spec.step);
      const TerritoryResult t = out_of_territory(data, inside, c.sweep);
      terr.push_back({{"name", spec.name},
                      {"center", {center.x, center.y}},
                      {"inside", t.inside},
                      {"outside", t.outside},
                      {"oot_test_deviance", number(t.oot_test)},
                      {"wt_test_deviance", number(t.wt_test)},
                      {"gam_test_deviance", number(t.gam_test)},
                      {"gam_knots", t.gam_knots},
                      {"full_test_deviance", number(t.full_test)},
                      {"oot_coefficients", coefficient_table(t.oot_fit)}});
      note(StageName::Evaluate, "territory %s: %zu inside, OOT %.2f WT %.2f GAM %.2f", spec.name.c_str(),
           t.inside, t.oot_test, t.wt_test, t.gam_test);
    }
    write_text(p.territories(), terr.dump(2) + "\n");
    written.push_back(p.territories());

    std::vector<PerilData> perils;
    for (std::size_t k = 0; k < f.perils.size(); ++k) perils.push_back({f.perils[k], f.train[k], f.train_offset});
    const PvalueGrid grid =
        perperil_pvalue_grid(perils, data.embeddings, data.embedding_names, data.traditional, data.traditional_names);
    csv::Table pv;
    pv.header = {"coefficient"};
    for (const auto& name : grid.perils) pv.header.push_back(name);
    pv.header.push_back("significant");
    for (std::size_t i = 0; i < grid.coefficients.size(); ++i) {
      csv::Row row{grid.coefficients[i]};
      for (Eigen::Index j = 0; j < grid.p_values.cols(); ++j) {
        row.push_back(csv::format_double(grid.p_values(static_cast<Eigen::Index>(i), j)));
      }
      row.push_back(std::to_string(grid.significant[i]));
      pv.rows.push_back(std::move(row));
    }
    csv::write(p.pvalues(), pv);
    written.push_back(p.pvalues());

    if (c.plots) {
      std::vector<std::string> warnings;
      for (auto& file : export_plots(emb, coords, p.plots(), &warnings)) written.push_back(file);
      for (const auto& w : warnings) note(StageName::Evaluate, "warning: %s", w.c_str());
    }
    return written;
  };
  return r;
}

DevianceTable read_deviance_table(const fs::path& path, const json& models) {
  const csv::Table t = csv::read(path);
  DevianceTable table;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    if (r.size() < 7) fail(ErrorCode::FormatError, path.string() + " has a short row");
    DevianceRow row;
    row.knots = std::stoul(r[0]);
    row.with_embeddings = r[1] == "with";
    row.train_deviance = csv::parse_double(r[2]);
    row.test_deviance = csv::parse_double(r[3]);
    row.edof = csv::parse_double(r[4]);
    row.lambda = csv::parse_double(r[5]);
    row.columns = std::stoul(r[6]);
    if (models.contains("sweep") && i < models["sweep"].size()) {
      row.seconds = models["sweep"][i].value("seconds", 0.0);
    }
    if (std::find(table.knots_grid.begin(), table.knots_grid.end(), row.knots) == table.knots_grid.end()) {
      table.knots_grid.push_back(row.knots);
    }
    table.rows.push_back(row);
  }
  std::sort(table.knots_grid.begin(), table.knots_grid.end());
  return table;
}

StageRun report_stage(const RunConfig& c, const Paths& p) {
  StageRun r;
  r.inputs = {require(p.deviance(), StageName::Fit), require(p.models(), StageName::Fit),
              require(p.moran(), StageName::Evaluate), require(p.territories(), StageName::Evaluate),
              require(p.embed_summary(), StageName::Embed)};
  r.settings = json::object();
  r.body = [&c, p] {
    const json models = read_json(p.models());
    const DevianceTable table = read_deviance_table(p.deviance(), models);
    std::ostringstream out;
    char buf[512];
    out << "Claim frequency (" << models.value("peril", std::string("?")) << "), test deviance by spline knots\n\n";
    out << render_deviance_table(table) << "\n";

    const json sat = read_json(p.embed_summary());
    out << "Embedding dimensions retained: " << sat["retained"].size() << " of "
        << sat["saturated_fraction"].size() << "\n";
    std::snprintf(buf, sizeof buf, "Mean embedding value %.4f, mean absolute value %.4f\n\n",
                  sat["overall_mean"].get<double>(), sat["overall_mean_abs"].get<double>());
    out << buf;
    out << "Spatial autocorrelation (Moran's I)\n";
    const json moran = read_json(p.moran());
    for (const auto& e : moran["entries"]) {
      if (e["zero_variance"].get<bool>()) {
        std::snprintf(buf, sizeof buf, "  e%-3zu  zero variance\n", e["dimension"].get<std::size_t>());
      } else {
        std::snprintf(buf, sizeof buf, "  e%-3zu  I = %7.4f  p = %.4f\n", e["dimension"].get<std::size_t>(),
                      e["I"].get<double>(), e["p_value"].get<double>());
      }
      out << buf;
    }
    out << "\nHeld-out territories (test deviance inside the territory)\n";
    for (const auto& t : read_json(p.territories())) {
      auto val = [&](const char* key) { return t[key].is_null() ? std::nan("") : t[key].get<double>(); };
      std::snprintf(buf, sizeof buf, "  %-12s inside %6zu  OOT %12.2f  WT %12.2f  GAM %12.2f\n",
                    t["name"].get<std::string>().c_str(), t["inside"].get<std::size_t>(), val("oot_test_deviance"),
                    val("wt_test_deviance"), val("gam_test_deviance"));
      out << buf;
    }
    if (fs::exists(p.plots())) {
      std::vector<std::string> names;
      for (const auto& e : fs::directory_iterator(p.plots())) names.push_back(e.path().filename().string());
      std::sort(names.begin(), names.end());
      out << "\nPlots in " << p.plots().string() << ": " << names.size() << " files\n";
    }
    (void)c;
    write_text(p.report(), out.str());
    std::fputs(out.str().c_str(), stdout);
    return std::vector<fs::path>{p.report()};
  };
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

Manifest::Manifest(fs::path root) : root_(std::move(root)) {
  const fs::path file = root_ / "manifest.json";
  if (!fs::exists(file)) return;
  const json j = read_json(file);
  for (const auto& [name, s] : j.at("stages").items()) {
    Stage st;
    st.key = s.at("key").get<std::string>();
    for (const auto& a : s.at("artifacts")) {
      st.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                              a.at("bytes").get<std::uintmax_t>()});
    }
    stages_[name] = std::move(st);
  }
}

bool Manifest::up_to_date(const std::string& stage, const std::string& key) const {
  const auto it = stages_.find(stage);
  if (it == stages_.end() || it->second.key != key) return false;
  for (const auto& a : it->second.artifacts) {
    const fs::path f = root_ / a.path;
    if (!fs::exists(f) || fs::file_size(f) != a.bytes || sha256_file(f) != a.sha256) return false;
  }
  return true;
}

void Manifest::record(const std::string& stage, const std::string& key, const std::vector<fs::path>& files) {
  Stage st;
  st.key = key;
  std::set<std::string> mine;
  for (const auto& f : files) {
    const std::string rel = relative_to(f, root_);
    if (!mine.insert(rel).second) continue;
    st.artifacts.push_back({rel, sha256_file(f), fs::file_size(f)});
  }
  std::sort(st.artifacts.begin(), st.artifacts.end(),
            [](const Artifact& a, const Artifact& b) { return a.path < b.path; });
  for (auto& [name, other] : stages_) {
    if (name == stage) continue;
    std::erase_if(other.artifacts, [&](const Artifact& a) { return mine.count(a.path) > 0; });
  }
  stages_[stage] = std::move(st);
}

void Manifest::save() const {
  json j;
  j["format"] = kFormatVersion;
  json stages = json::object();
  for (const auto& [name, s] : stages_) {
    json arts = json::array();
    for (const auto& a : s.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    stages[name] = {{"key", s.key}, {"artifacts", arts}};
  }
  j["stages"] = stages;
  const fs::path tmp = root_ / "manifest.json.tmp";
  write_text(tmp, j.dump(2) + "\n");
  fs::rename(tmp, root_ / "manifest.json");
}

std::string_view to_string(StageName s) {
  switch (s) {
    case StageName::Synth: return "synth";
    case StageName::Ingest: return "ingest";
    case StageName::Cuboid: return "cuboid";
    case StageName::Train: return "train";
    case StageName::Embed: return "embed";
    case StageName::Fit: return "fit";
    case StageName::Evaluate: return "evaluate";
    case StageName::Report: return "report";
  }
  return "?";
}

std::vector<StageName> pipeline_order(const RunConfig& c) {
  std::vector<StageName> out;
  if (c.geometry.empty() || c.attributes.empty() || c.locations.empty() || c.frequency.empty()) {
    out.push_back(StageName::Synth);
  }
  for (auto s : {StageName::Ingest, StageName::Cuboid, StageName::Train, StageName::Embed, StageName::Fit,
                 StageName::Evaluate, StageName::Report}) {
    out.push_back(s);
  }
  return out;
}

bool run_stage(StageName stage, const RunConfig& config, const StageOptions& options) {
  const Paths p{config.output_dir};
  fs::create_directories(p.root);
  StageRun run;
  switch (stage) {
    case StageName::Synth: run = synth_stage(config, p); break;
    case StageName::Ingest: run = ingest_stage(config, p); break;
    case StageName::Cuboid: run = cuboid_stage(config, p); break;
    case StageName::Train: run = train_stage(config, p); break;
    case StageName::Embed: run = embed_stage(config, p); break;
    case StageName::Fit: run = fit_stage(config, p); break;
    case StageName::Evaluate: run = evaluate_stage(config, p); break;
    case StageName::Report: run = report_stage(config, p); break;
  }
  const std::string name(to_string(stage));
  Manifest manifest(p.root);
  const std::string key = stage_key(stage, run, p.root);
  if (!options.force && manifest.up_to_date(name, key)) {
    note(stage, "up to date, skipped");
    if (stage == StageName::Report) std::fputs(read_text(p.report()).c_str(), stdout);
    return false;
  }
  // Stale outputs from an earlier run of this stage go first.
  fs::remove_all(p.stage_dir(stage));
  fs::create_directories(p.stage_dir(stage));
  const auto files = run.body();
  manifest.record(name, key, files);
  manifest.save();
  return true;
}

}  // namespace geoembed::cli
