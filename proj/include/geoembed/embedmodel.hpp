#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geoembed/cuboid.hpp"
#include "geoembed/network.hpp"
#include "geoembed/train.hpp"

namespace geoembed {

enum class ArchitectureName { SmallCRAE, LargeCRAE, SmallCBOW, LargeCBOW };

std::string_view to_string(ArchitectureName name);
ArchitectureName architecture_from_string(std::string_view name);
bool is_cbow(ArchitectureName name);

struct Architecture {
  ArchitectureName name = ArchitectureName::SmallCBOW;
  std::size_t dimension = 0;  // d, input channels
  std::size_t grid_size = 0;
  std::size_t embedding_dim = 0;
  NetworkSpec encoder;
  NetworkSpec decoder;

  std::size_t parameter_count() const {
    return encoder.parameter_count() + decoder.parameter_count();
  }
};

/// Encoder: two (conv 3x3 half-padding, batch norm, relu, 2x2 max pool)
/// blocks, unroll, FC + relu, FC + tanh. Large doubles the channels twice
/// (d -> 2d -> 4d) with FC widths 128/16; Small uses 48 and 16 channels with
/// FC widths 16/8. CBOW decoders are FC + relu, FC to d + sigmoid; CRAE
/// decoders mirror the encoder through roll, unpooling and transpose
/// convolutions, ending in a sigmoid. Throws UnsupportedShape unless
/// grid_size is a positive multiple of 4.
Architecture build_architecture(ArchitectureName name, std::size_t d, std::size_t grid_size);

/// [n, h, w, c] -> [n, h*w*c], channel 0 row-major first.
Tensor unroll(const Tensor& cuboids);
Tensor roll(const Tensor& flat, std::size_t h, std::size_t w, std::size_t c);

/// Mean over the batch of the squared reconstruction error. When `grad` is
/// given it receives dL/d(output).
double crae_loss(const Tensor& output, const Tensor& cuboids, Tensor* grad = nullptr);
/// Same against each location's own attribute vector; DimMismatch when the
/// decoder output width differs from d.
double cbow_loss(const Tensor& output, const Tensor& centers, Tensor* grad = nullptr);

struct EmbeddingSet {
  std::size_t embedding_dim = 0;
  std::vector<std::string> location_ids;
  std::vector<double> values;  // row-major, location by dimension
  std::vector<std::size_t> retained_dims;
  // Provenance.
  std::string architecture;
  std::string checkpoint_hash;
  double spacing = 0.0;
  std::size_t grid_size = 0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return location_ids.size(); }
  double at(std::size_t i, std::size_t k) const { return values[i * embedding_dim + k]; }
};

/// Encoder and decoder of one architecture, trained jointly.
class EmbeddingModel {
 public:
  EmbeddingModel(ArchitectureName name, std::size_t d, std::size_t grid_size,
                 const InitConfig& init = {});

  const Architecture& architecture() const noexcept { return arch_; }
  Network& encoder() noexcept { return encoder_; }
  Network& decoder() noexcept { return decoder_; }

  /// Loss of one batch; in Train mode with `accumulate`, gradients are added
  /// to the parameters.
  double batch_loss(const Tensor& cuboids, const Tensor& centers, Mode mode, bool accumulate);

  TrainingLog train(const CuboidDataset& data, std::span<const std::size_t> train_idx,
                    std::span<const std::size_t> val_idx, const TrainConfig& config,
                    const std::function<void(const EpochRecord&)>& on_epoch = {});

  /// Inference-mode embeddings of the selected cuboids, [n, ell].
  Tensor embed(const Tensor& cuboids);
  EmbeddingSet extract(const CuboidDataset& data, std::size_t batch_size = 64);

  /// Self-describing binary checkpoint; round-trips bit-exactly.
  void save(const std::filesystem::path& path) const;
  static EmbeddingModel load(const std::filesystem::path& path);
  std::string checkpoint_bytes() const;

 private:
  std::vector<Parameter> all_parameters();

  Architecture arch_;
  Network encoder_;
  Network decoder_;
};

struct SaturationReport {
  std::vector<double> saturated_fraction;  // per dimension
  std::vector<std::size_t> dropped;
};

/// A dimension is saturated when more than a fraction q of locations have
/// |value| >= 1 - eps. Returns the set with those dimensions removed from
/// retained_dims.
EmbeddingSet saturation_filter(const EmbeddingSet& set, double eps = 1e-3, double q = 0.95,
                               SaturationReport* report = nullptr);

/// Per-dimension mean and mean absolute value over all locations. The
/// published "mean value" column is undefined, so both readings are kept.
struct EmbeddingStats {
  std::vector<double> mean;
  std::vector<double> mean_abs;
  double overall_mean = 0.0;
  double overall_mean_abs = 0.0;
};

EmbeddingStats embedding_stats(const EmbeddingSet& set);

/// CSV with header location_id,e0..e{ell-1}, plus a JSON sidecar holding the
/// provenance and retained dimensions.
void write_embeddings(const std::filesystem::path& csv_path,
                      const std::filesystem::path& meta_path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& csv_path,
                             const std::filesystem::path& meta_path);

void write_training_log(const std::filesystem::path& path, const TrainingLog& log);

}  // namespace geoembed
