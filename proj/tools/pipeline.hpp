#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "config.hpp"

namespace geoembed::cli {

/// MissingArtifact that names the expected file.
class ArtifactError : public Error {
 public:
  ArtifactError(std::filesystem::path file, const std::string& hint)
      : Error(ErrorCode::MissingArtifact, "missing artifact " + file.string() + hint),
        file_(std::move(file)) {}
  const std::filesystem::path& file() const noexcept { return file_; }

 private:
  std::filesystem::path file_;
};

/// output_dir/manifest.json: per stage, the key its outputs were made from
/// and one entry (path, sha256, bytes) per artifact file.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path root);

  struct Artifact {
    std::string path;  // relative to the root
    std::string sha256;
    std::uintmax_t bytes = 0;
  };
  struct Stage {
    std::string key;
    std::vector<Artifact> artifacts;
  };

  /// True when the stage ran with this key and its files are unchanged.
  bool up_to_date(const std::string& stage, const std::string& key) const;
  /// Replaces the stage's entries; a file moves out of any other stage.
  void record(const std::string& stage, const std::string& key,
              const std::vector<std::filesystem::path>& files);
  void save() const;

  const std::map<std::string, Stage>& stages() const noexcept { return stages_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, Stage> stages_;
};

enum class StageName { Synth, Ingest, Cuboid, Train, Embed, Fit, Evaluate, Report };

std::string_view to_string(StageName s);
std::vector<StageName> pipeline_order(const RunConfig& config);

struct StageOptions {
  bool force = false;
};

/// Runs one stage; returns false when it was skipped as up to date.
bool run_stage(StageName stage, const RunConfig& config, const StageOptions& options);

}  // namespace geoembed::cli
