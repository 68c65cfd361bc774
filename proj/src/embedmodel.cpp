#include "geoembed/embedmodel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "geoembed/csv.hpp"
#include "geoembed/error.hpp"
#include "geoembed/hash.hpp"

namespace geoembed {

std::string_view to_string(ArchitectureName name) {
  switch (name) {
    case ArchitectureName::SmallCRAE: return "small_crae";
    case ArchitectureName::LargeCRAE: return "large_crae";
    case ArchitectureName::SmallCBOW: return "small_cbow";
    case ArchitectureName::LargeCBOW: return "large_cbow";
  }
  return "?";
}

ArchitectureName architecture_from_string(std::string_view name) {
  for (auto a : {ArchitectureName::SmallCRAE, ArchitectureName::LargeCRAE,
                 ArchitectureName::SmallCBOW, ArchitectureName::LargeCBOW}) {
    if (to_string(a) == name) return a;
  }
  fail(ErrorCode::ConfigInvalid, "unknown architecture '" + std::string(name) +
                                     "' (expected small_crae, large_crae, small_cbow or large_cbow)");
}

bool is_cbow(ArchitectureName name) {
  return name == ArchitectureName::SmallCBOW || name == ArchitectureName::LargeCBOW;
}

Architecture build_architecture(ArchitectureName name, std::size_t d, std::size_t grid_size) {
  if (grid_size == 0 || grid_size % 4 != 0) {
    fail(ErrorCode::UnsupportedShape,
         "grid_size " + std::to_string(grid_size) + " is not a multiple of 4 (two 2x2 poolings)");
  }
  if (d == 0) fail(ErrorCode::UnsupportedShape, "input needs at least one channel");
  const bool large = name == ArchitectureName::LargeCRAE || name == ArchitectureName::LargeCBOW;
  const std::size_t c1 = large ? 2 * d : 48;
  const std::size_t c2 = large ? 4 * d : 16;
  const std::size_t fc1 = large ? 128 : 16;
  const std::size_t ell = large ? 16 : 8;
  const std::size_t p = grid_size, q = grid_size / 4;

  Architecture a;
  a.name = name;
  a.dimension = d;
  a.grid_size = grid_size;
  a.embedding_dim = ell;
  a.encoder.input_shape = {p, p, d};
  a.encoder.add("conv1", ConvSpec{3, 1, 1, c1})
      .add("bn1", BatchNormSpec{})
      .add("relu1", ActivationSpec{ActivationKind::Relu})
      .add("pool1", MaxPoolSpec{})
      .add("conv2", ConvSpec{3, 1, 1, c2})
      .add("bn2", BatchNormSpec{})
      .add("relu2", ActivationSpec{ActivationKind::Relu})
      .add("pool2", MaxPoolSpec{})
      .add("unroll", UnrollSpec{})
      .add("fc1", DenseSpec{fc1})
      .add("relu3", ActivationSpec{ActivationKind::Relu})
      .add("fc2", DenseSpec{ell})
      .add("tanh", ActivationSpec{ActivationKind::Tanh});

  a.decoder.input_shape = {ell};
  a.decoder.add("fc3", DenseSpec{fc1}).add("relu4", ActivationSpec{ActivationKind::Relu});
  if (is_cbow(name)) {
    a.decoder.add("fc4", DenseSpec{d}).add("sigmoid", ActivationSpec{ActivationKind::Sigmoid});
  } else {
    a.decoder.add("fc4", DenseSpec{q * q * c2})
        .add("relu5", ActivationSpec{ActivationKind::Relu})
        .add("roll", RollSpec{q, q, c2})
        .add("unpool2", MaxUnpoolSpec{"pool2", p / 2, p / 2})
        .add("deconv1", TransposeConvSpec{3, 1, 1, c1})
        .add("relu6", ActivationSpec{ActivationKind::Relu})
        .add("unpool1", MaxUnpoolSpec{"pool1", p, p})
        .add("deconv2", TransposeConvSpec{3, 1, 1, d})
        .add("sigmoid", ActivationSpec{ActivationKind::Sigmoid});
  }
  a.encoder.audit();
  a.decoder.audit();
  return a;
}

Tensor unroll(const Tensor& cuboids) {
  if (cuboids.rank() != 4) fail(ErrorCode::ShapeMismatch, "unroll expects [n, h, w, c]");
  const std::size_t n = cuboids.dim(0), h = cuboids.dim(1), w = cuboids.dim(2),
                    c = cuboids.dim(3), f = h * w * c;
  Tensor out({n, f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        for (std::size_t ch = 0; ch < c; ++ch)
          out[b * f + (ch * h + r) * w + col] = cuboids.at(b, r, col, ch);
  return out;
}

Tensor roll(const Tensor& flat, std::size_t h, std::size_t w, std::size_t c) {
  const std::size_t f = h * w * c;
  if (flat.rank() != 2 || flat.dim(1) != f) {
    fail(ErrorCode::ShapeMismatch, "roll expects [n, " + std::to_string(f) + "]");
  }
  const std::size_t n = flat.dim(0);
  Tensor out({n, h, w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        for (std::size_t ch = 0; ch < c; ++ch)
          out.at(b, r, col, ch) = flat[b * f + (ch * h + r) * w + col];
  return out;
}

namespace {

double mean_squared_norm(const Tensor& output, const Tensor& target, Tensor* grad) {
  const std::size_t n = output.dim(0);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  if (grad) *grad = Tensor(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double diff = output[i] - target[i];
    total += diff * diff;
    if (grad) (*grad)[i] = 2.0 * diff * inv_n;
  }
  return total * inv_n;
}

}  // namespace

double crae_loss(const Tensor& output, const Tensor& cuboids, Tensor* grad) {
  if (output.shape() != cuboids.shape()) {
    fail(ErrorCode::ShapeMismatch, "reconstruction " + shape_string(output.shape()) +
                                       " does not match input " + shape_string(cuboids.shape()));
  }
  return mean_squared_norm(output, cuboids, grad);
}

double cbow_loss(const Tensor& output, const Tensor& centers, Tensor* grad) {
  if (output.rank() != 2 || centers.rank() != 2 || output.dim(0) != centers.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "cbow loss expects [n, d] outputs and targets");
  }
  if (output.dim(1) != centers.dim(1)) {
    fail(ErrorCode::DimMismatch, "decoder output has " + std::to_string(output.dim(1)) +
                                     " values, attribute vectors have " +
                                     std::to_string(centers.dim(1)));
  }
  return mean_squared_norm(output, centers, grad);
}

// ---------------------------------------------------------------------------

EmbeddingModel::EmbeddingModel(ArchitectureName name, std::size_t d, std::size_t grid_size,
                               const InitConfig& init)
    : arch_(build_architecture(name, d, grid_size)),
      encoder_(arch_.encoder, init),
      decoder_(arch_.decoder, InitConfig{init.weight_std, splitmix64(init.seed)}) {
  decoder_.bind_unpooling(&encoder_);
}

std::vector<Parameter> EmbeddingModel::all_parameters() {
  auto p = encoder_.parameters();
  auto q = decoder_.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

double EmbeddingModel::batch_loss(const Tensor& cuboids, const Tensor& centers, Mode mode,
                                  bool accumulate) {
  const Tensor z = encoder_.forward(cuboids, mode);
  const Tensor out = decoder_.forward(z, mode);
  Tensor grad;
  const bool want = accumulate && mode == Mode::Train;
  const double loss = is_cbow(arch_.name) ? cbow_loss(out, centers, want ? &grad : nullptr)
                                          : crae_loss(out, cuboids, want ? &grad : nullptr);
  if (want && std::isfinite(loss)) encoder_.backward(decoder_.backward(grad));
  return loss;
}

TrainingLog EmbeddingModel::train(const CuboidDataset& data, std::span<const std::size_t> train_idx,
                                  std::span<const std::size_t> val_idx, const TrainConfig& config,
                                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (data.dimension() != arch_.dimension || data.grid_size() != arch_.grid_size) {
    fail(ErrorCode::ShapeMismatch, "dataset does not match the architecture input");
  }
  if (train_idx.size() < 2) {
    fail(ErrorCode::InsufficientTrainingData, "at least two training cuboids are needed");
  }
  auto gather = [](std::span<const std::size_t> pool, std::span<const std::size_t> pick) {
    std::vector<std::size_t> out;
    out.reserve(pick.size());
    for (auto i : pick) out.push_back(pool[i]);
    return out;
  };
  TrainTask task;
  task.train_size = train_idx.size();
  task.val_size = val_idx.size();
  task.train_batch = [&](std::span<const std::size_t> pick) {
    const auto rows = gather(train_idx, pick);
    return batch_loss(data.cuboids(rows), data.centers(rows), Mode::Train, true);
  };
  task.eval_batch = [&](std::span<const std::size_t> pick) {
    const auto rows = gather(val_idx, pick);
    return batch_loss(data.cuboids(rows), data.centers(rows), Mode::Inference, false);
  };
  task.train_eval_batch = [&](std::span<const std::size_t> pick) {
    const auto rows = gather(train_idx, pick);
    return batch_loss(data.cuboids(rows), data.centers(rows), Mode::Inference, false);
  };
  task.parameters = [this] { return all_parameters(); };
  task.snapshot = [this] {
    auto s = encoder_.snapshot();
    auto t = decoder_.snapshot();
    s.insert(s.end(), t.begin(), t.end());
    return s;
  };
  task.restore = [this](const std::vector<std::vector<double>>& s) {
    const std::size_t ne = encoder_.parameters().size() + encoder_.buffers().size();
    encoder_.restore({s.begin(), s.begin() + static_cast<std::ptrdiff_t>(ne)});
    decoder_.restore({s.begin() + static_cast<std::ptrdiff_t>(ne), s.end()});
  };
  task.on_epoch = on_epoch;
  return train_loop(task, config);
}

Tensor EmbeddingModel::embed(const Tensor& cuboids) {
  return encoder_.forward(cuboids, Mode::Inference);
}

EmbeddingSet EmbeddingModel::extract(const CuboidDataset& data, std::size_t batch_size) {
  EmbeddingSet set;
  set.embedding_dim = arch_.embedding_dim;
  set.location_ids = data.location_ids();
  set.values.reserve(data.size() * set.embedding_dim);
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    idx.clear();
    for (std::size_t i = first; i < std::min(data.size(), first + batch_size); ++i) idx.push_back(i);
    const Tensor z = embed(data.cuboids(idx));
    set.values.insert(set.values.end(), z.values().begin(), z.values().end());
  }
  for (std::size_t k = 0; k < set.embedding_dim; ++k) set.retained_dims.push_back(k);
  set.architecture = std::string(to_string(arch_.name));
  set.checkpoint_hash = sha256_hex(checkpoint_bytes());
  set.grid_size = arch_.grid_size;
  return set;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "GEOEMBED-CHECKPOINT";
constexpr int kVersion = 1;

}  // namespace

std::string EmbeddingModel::checkpoint_bytes() const {
  auto& self = const_cast<EmbeddingModel&>(*this);
  nlohmann::json header;
  header["version"] = kVersion;
  header["architecture"] = to_string(arch_.name);
  header["dimension"] = arch_.dimension;
  header["grid_size"] = arch_.grid_size;
  header["byte_order"] = "little";
  nlohmann::json arrays = nlohmann::json::array();
  std::string payload;
  auto add = [&](const std::string& name, std::span<const double> v) {
    arrays.push_back({{"name", name}, {"count", v.size()}});
    payload.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  for (Network* net : {&self.encoder_, &self.decoder_}) {
    for (const auto& p : net->parameters()) add(p.name, p.value);
    for (const auto& b : net->buffers()) add(b.name, b.value);
  }
  header["arrays"] = arrays;
  return std::string(kMagic) + "\n" + header.dump() + "\n" + payload;
}

void EmbeddingModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  const std::string bytes = checkpoint_bytes();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "write failed for " + path.string());
}

EmbeddingModel EmbeddingModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::MissingArtifact, "checkpoint " + path.string() + " not found");
  std::string magic, header_line;
  std::getline(in, magic);
  std::getline(in, header_line);
  if (magic != kMagic) fail(ErrorCode::FormatError, path.string() + " is not a checkpoint");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("version", 0) != kVersion) {
    fail(ErrorCode::FormatError, "unsupported checkpoint version");
  }
  EmbeddingModel model(architecture_from_string(header.at("architecture").get<std::string>()),
                       header.at("dimension").get<std::size_t>(),
                       header.at("grid_size").get<std::size_t>());
  const auto& arrays = header.at("arrays");
  std::size_t a = 0;
  for (Network* net : {&model.encoder_, &model.decoder_}) {
    std::vector<std::pair<std::string, std::span<double>>> slots;
    for (auto& p : net->parameters()) slots.emplace_back(p.name, p.value);
    for (auto& b : net->buffers()) slots.emplace_back(b.name, b.value);
    for (auto& [name, span] : slots) {
      if (a >= arrays.size() || arrays[a].at("name") != name ||
          arrays[a].at("count").get<std::size_t>() != span.size()) {
        fail(ErrorCode::FormatError, "checkpoint array '" + name + "' does not match the model");
      }
      in.read(reinterpret_cast<char*>(span.data()),
              static_cast<std::streamsize>(span.size() * sizeof(double)));
      if (!in) fail(ErrorCode::FormatError, "checkpoint is truncated at '" + name + "'");
      ++a;
    }
  }
  if (a != arrays.size()) fail(ErrorCode::FormatError, "checkpoint has extra arrays");
  return model;
}

// ---------------------------------------------------------------------------

EmbeddingSet saturation_filter(const EmbeddingSet& set, double eps, double q,
                               SaturationReport* report) {
  EmbeddingSet out = set;
  out.retained_dims.clear();
  SaturationReport rep;
  for (std::size_t k = 0; k < set.embedding_dim; ++k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (std::abs(set.at(i, k)) >= 1.0 - eps) ++hits;
    }
    const double frac = set.size() ? static_cast<double>(hits) / static_cast<double>(set.size()) : 0.0;
    rep.saturated_fraction.push_back(frac);
    const bool was_retained = std::find(set.retained_dims.begin(), set.retained_dims.end(), k) !=
                              set.retained_dims.end();
    if (frac > q) {
      rep.dropped.push_back(k);
    } else if (was_retained) {
      out.retained_dims.push_back(k);
    }
  }
  if (report) *report = rep;
  return out;
}

void write_embeddings(const std::filesystem::path& csv_path,
                      const std::filesystem::path& meta_path, const EmbeddingSet& set) {
  csv::Table t;
  t.header.push_back("location_id");
  for (std::size_t k = 0; k < set.embedding_dim; ++k) t.header.push_back("e" + std::to_string(k));
  for (std::size_t i = 0; i < set.size(); ++i) {
    csv::Row row{set.location_ids[i]};
    for (std::size_t k = 0; k < set.embedding_dim; ++k) row.push_back(csv::format_double(set.at(i, k)));
    t.rows.push_back(std::move(row));
  }
  csv::write(csv_path, t);
  nlohmann::json meta = {{"architecture", set.architecture},
                         {"checkpoint_sha256", set.checkpoint_hash},
                         {"embedding_dim", set.embedding_dim},
                         {"retained_dims", set.retained_dims},
                         {"grid_size", set.grid_size},
                         {"spacing", set.spacing},
                         {"seed", set.seed}};
  std::ofstream out(meta_path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + meta_path.string());
  out << meta.dump(2) << '\n';
}

EmbeddingSet read_embeddings(const std::filesystem::path& csv_path,
                             const std::filesystem::path& meta_path) {
  if (!std::filesystem::exists(csv_path)) {
    fail(ErrorCode::MissingArtifact, "embedding file " + csv_path.string() + " not found");
  }
  const csv::Table t = csv::read(csv_path);
  EmbeddingSet set;
  if (t.header.empty() || t.header[0] != "location_id") {
    fail(ErrorCode::FormatError, csv_path.string() + " has no location_id column");
  }
  set.embedding_dim = t.header.size() - 1;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) fail(ErrorCode::FormatError, "ragged embedding row");
    set.location_ids.push_back(row[0]);
    for (std::size_t k = 1; k < row.size(); ++k) set.values.push_back(csv::parse_double(row[k]));
  }
  std::ifstream in(meta_path);
  if (!in) fail(ErrorCode::MissingArtifact, "embedding metadata " + meta_path.string() + " not found");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("embedding metadata: ") + e.what());
  }
  set.architecture = meta.value("architecture", "");
  set.checkpoint_hash = meta.value("checkpoint_sha256", "");
  set.retained_dims = meta.value("retained_dims", std::vector<std::size_t>{});
  set.grid_size = meta.value("grid_size", std::size_t{0});
  set.spacing = meta.value("spacing", 0.0);
  set.seed = meta.value("seed", std::uint64_t{0});
  return set;
}

EmbeddingStats embedding_stats(const EmbeddingSet& set) {
  EmbeddingStats st;
  const std::size_t ell = set.embedding_dim;
  st.mean.assign(ell, 0.0);
  st.mean_abs.assign(ell, 0.0);
  if (set.size() == 0 || ell == 0) return st;
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t k = 0; k < ell; ++k) {
      st.mean[k] += set.at(i, k);
      st.mean_abs[k] += std::abs(set.at(i, k));
    }
  const auto n = static_cast<double>(set.size());
  for (std::size_t k = 0; k < ell; ++k) {
    st.mean[k] /= n;
    st.mean_abs[k] /= n;
    st.overall_mean += st.mean[k];
    st.overall_mean_abs += st.mean_abs[k];
  }
  st.overall_mean /= static_cast<double>(ell);
  st.overall_mean_abs /= static_cast<double>(ell);
  return st;
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
  csv::Table t;
  t.header = {"epoch", "train_loss", "val_loss", "lr", "reductions"};
  for (const auto& e : log.epochs) {
    t.rows.push_back({std::to_string(e.epoch), csv::format_double(e.train_loss),
                      std::isnan(e.val_loss) ? "" : csv::format_double(e.val_loss),
                      csv::format_double(e.lr), std::to_string(e.reductions)});
  }
  csv::write(path, t);
}

}  // namespace geoembed
