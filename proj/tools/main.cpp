// geoembed: configuration-driven pipeline from polygon attributes to
// embeddings and claim frequency benchmarks.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "config.hpp"
#include "pipeline.hpp"

using namespace geoembed;
using namespace geoembed::cli;

namespace {

// Exit codes, stable for scripts.
enum Exit : int {
  kOk = 0,
  kUnexpected = 1,
  kConfigInvalid = 2,
  kMissingArtifact = 3,
  kStageFailed = 4,
};

int report_error(const json& detail, const std::string& human, int code) {
  std::cerr << "error: " << human << "\n";
  std::cerr << json{{"error", detail}}.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geographic embeddings pipeline: synth, ingest, cuboid, train, embed, fit, evaluate, report"};
  app.require_subcommand(1, 1);

  std::optional<std::filesystem::path> config_file;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::size_t threads = 0;
  bool force = false;
  bool print_config = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "Override a config value, e.g. --set model.train.max_epochs=50");
    sub->add_option("-o,--output-dir", output_dir, "Output directory (overrides config and GEOEMBED_OUTPUT_DIR)");
    sub->add_option("-j,--threads", threads, "Worker threads (overrides config and GEOEMBED_THREADS)")
        ->check(CLI::PositiveNumber);
    sub->add_flag("-f,--force", force, "Rerun even when inputs are unchanged");
  };

  struct Entry {
    const char* name;
    const char* help;
    std::optional<StageName> stage;
  };
  const Entry entries[] = {
      {"synth", "Generate a synthetic world (regions, attributes, locations, claim counts)", StageName::Synth},
      {"ingest", "Read polygons and attributes, normalize columns", StageName::Ingest},
      {"cuboid", "Sample the neighbor grid around every location", StageName::Cuboid},
      {"train", "Train the encoder/decoder on the cuboids", StageName::Train},
      {"embed", "Export embeddings and drop saturated dimensions", StageName::Embed},
      {"fit", "Knots sweep of Poisson GLM/GAM frequency models", StageName::Fit},
      {"evaluate", "Moran's I, held-out territories, per-peril p-values, plots", StageName::Evaluate},
      {"report", "Render the deviance table and evaluation summary", StageName::Report},
      {"run", "Run every stage in order", std::nullopt},
  };
  std::vector<std::pair<CLI::App*, const Entry*>> subs;
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    add_common(sub);
    subs.push_back({sub, &e});
  }
  auto* show = app.add_subcommand("config", "Print the effective configuration");
  add_common(show);
  show->add_flag("--defaults", print_config, "Print the built-in defaults instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!output_dir.empty()) overrides.push_back("output_dir=\"" + output_dir + "\"");
    if (threads > 0) overrides.push_back("threads=" + std::to_string(threads));
    if (show->parsed() && print_config) {
      std::cout << default_config().dump(2) << "\n";
      return kOk;
    }
    const RunConfig config = load_config(config_file, overrides);
    if (show->parsed()) {
      std::cout << config.effective.dump(2) << "\n";
      return kOk;
    }
    const StageOptions options{force};
    for (const auto& [sub, entry] : subs) {
      if (!sub->parsed()) continue;
      if (entry->stage) {
        run_stage(*entry->stage, config, options);
      } else {
        for (auto s : pipeline_order(config)) run_stage(s, config, options);
      }
    }
    return kOk;
  } catch (const ConfigError& e) {
    return report_error({{"code", "ConfigInvalid"}, {"key", e.key()}, {"message", e.what()}}, e.what(),
                        kConfigInvalid);
  } catch (const ArtifactError& e) {
    return report_error({{"code", "MissingArtifact"}, {"file", e.file().string()}, {"message", e.what()}},
                        e.what(), kMissingArtifact);
  } catch (const Error& e) {
    const std::string code(to_string(e.code()));
    const int exit = e.code() == ErrorCode::ConfigInvalid    ? kConfigInvalid
                     : e.code() == ErrorCode::MissingArtifact ? kMissingArtifact
                                                              : kStageFailed;
    return report_error({{"code", code}, {"message", e.what()}}, e.what(), exit);
  } catch (const std::exception& e) {
    return report_error({{"code", "Internal"}, {"message", e.what()}}, e.what(), kUnexpected);
  }
}
