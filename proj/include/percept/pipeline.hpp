#pragma once

// File-based pipeline stages. Each stage reads artifacts from the output
// directory (or configured inputs), writes its own artifacts, and records a
// manifest of input digests, seed and parameters next to them.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace percept::pipeline {

enum class Stage { sample, cluster, serve, qa, rank, mlm, interpret, map, all };

Stage parse_stage(std::string_view text);
std::string_view to_string(Stage s);

/// A required artifact is missing; names the stage that produces it.
class MissingPrerequisite : public std::runtime_error {
public:
  MissingPrerequisite(Stage stage, const std::filesystem::path& artifact);
  Stage stage() const { return stage_; }

private:
  Stage stage_;
};

struct Paths {
  std::filesystem::path roads;
  std::filesystem::path features;
  std::filesystem::path areas;
  std::filesystem::path votes;     // optional; otherwise <out>/votes.csv from serve
  std::filesystem::path sessions;  // optional; otherwise <out>/sessions.csv
  std::filesystem::path segmentation;
  std::filesystem::path segmentation_kinds;
  std::filesystem::path store;
};

struct PipelineConfig {
  Paths paths;
  std::uint64_t seed = 0;
  nlohmann::json sample = nlohmann::json::object();
  nlohmann::json cluster = nlohmann::json::object();
  nlohmann::json scheduler = nlohmann::json::object();
  nlohmann::json qa = nlohmann::json::object();
  nlohmann::json rank = nlohmann::json::object();
  nlohmann::json mlm = nlohmann::json::object();
  nlohmann::json interpret = nlohmann::json::object();
  nlohmann::json map = nlohmann::json::object();
};

/// Relative paths are resolved against the config file's directory.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

struct StageReport {
  Stage stage;
  std::vector<std::filesystem::path> artifacts;
  nlohmann::json summary;
};

/// Runs one batch stage (`serve` is handled by the executable). `all` runs
/// every batch stage in order and returns one report per stage.
std::vector<StageReport> run(Stage stage, const PipelineConfig& config, const std::filesystem::path& out);

/// Hex FNV-1a digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace percept::pipeline
