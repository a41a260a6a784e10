#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metastruct/igtt.hpp"
#include "metastruct/label_synthesis.hpp"
#include "metastruct/segnet.hpp"

namespace metastruct {

struct DatasetSpec {
  std::string generator = "curvilinear";  // curvilinear | blobs | mixed | multiclass
  int count = 50;
  int height = 64;
  int width = 64;
  int n_objects = 0;  // 0: generator default (3 filaments, 5 blobs)
  int n_classes = 3;  // multiclass only
  double train_fraction = 0.8;
};

enum class NoiseType { kCL, kRclSample, kRclFlip, kPclDilate, kPclErode, kPclSkeleton, kRL, kNtm };

struct NoiseSpec {
  NoiseType type = NoiseType::kCL;
  double p = 0.0;      // p_sample, p_flip or p_generate
  int iterations = 1;  // repeated dilation / erosion
  std::vector<std::vector<double>> ntm;
};

struct AnalysisSpec {
  std::string recipe = "phantom";  // phantom | labels
  int side = 256;
  int bandwidth = 8;
  std::vector<std::vector<double>> q_rcl{{0.7, 0.3}, {0.3, 0.7}};
  std::vector<std::vector<double>> q_rl{{0.5, 0.5}, {0.5, 0.5}};
};

struct IgttRunSpec {
  IgttConfig config;
  bool eval_cl = true;
  int snapshot_every = 0;  // 0 disables pseudo-label snapshots
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  DatasetSpec dataset;
  NoiseSpec noise;
  TrainConfig train;
  IgttRunSpec igtt;
  AnalysisSpec analysis;
  std::string output_dir = "out";
  std::string dataset_dir;  // empty: <output_dir>/dataset
};

/// Parses and validates; errors carry a JSON path, e.g. "$.train.momentum".
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON (sorted keys), stable across runs.
std::string config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

std::string noise_type_name(NoiseType type);
NoiseType parse_noise_type(const std::string& name);
/// Directory name of a noisy label set, e.g. "RCL-flip_p0.45".
std::string noise_tag(const NoiseSpec& noise);
/// Noise transition matrix implied by a noise spec, when one exists.
std::optional<NoiseTransitionMatrix> implied_ntm(const NoiseSpec& noise, int n_classes);
LabelMask apply_noise(const LabelMask& cl, const NoiseSpec& noise, std::uint64_t seed);

struct RunManifest {
  std::string experiment;
  std::string command;
  std::string config_hash;  // 16 hex digits
  std::string input_hash;   // FNV-1a over input file bytes
  std::map<std::string, std::string> artifacts;  // name -> path relative to the manifest
  double wall_clock_seconds = 0.0;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> info;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);
void write_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

struct DatasetSample {
  std::string stem;
  std::string split;  // train | test
  std::string generator;
  std::uint64_t seed = 0;
};

struct LoadedDataset {
  std::vector<DatasetSample> train_samples, test_samples;
  LabelledSet train, test;  // labels are the clean masks
};

std::filesystem::path dataset_dir(const ExperimentConfig& cfg);
std::filesystem::path run_dir(const ExperimentConfig& cfg);
std::filesystem::path labels_dir(const ExperimentConfig& cfg);
LoadedDataset load_dataset(const std::filesystem::path& dir);

struct CommandOptions {
  int threads = 1;
};

// Each command writes under cfg.output_dir and returns its manifest.
RunManifest cmd_synth(const ExperimentConfig& cfg, const CommandOptions& opts = {});
RunManifest cmd_corrupt(const ExperimentConfig& cfg, const CommandOptions& opts = {});
RunManifest cmd_train(const ExperimentConfig& cfg, const CommandOptions& opts = {});
RunManifest cmd_igtt(const ExperimentConfig& cfg, const CommandOptions& opts = {});
RunManifest cmd_analyze(const ExperimentConfig& cfg, const CommandOptions& opts = {});

struct ReportResult {
  std::string markdown;
  std::string csv;
  std::optional<bool> ranking_pass;  // empty when the four families are not all present
  std::vector<std::string> gaps;
};

/// Merges completed runs into summary tables; writes summary.md/summary.csv
/// into out_dir when non-empty.
ReportResult cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                        const std::filesystem::path& out_dir);

// Ordering margins for the CL/RCL/PCL/RL verdict.
inline constexpr double kRankCleanGap = 0.07;
inline constexpr double kRankRclOverPcl = 0.05;
inline constexpr double kRankPclOverRl = 0.10;

struct RankingVerdict {
  bool pass = false;
  std::string line;
};
RankingVerdict ranking_verdict(double cl, double rcl, double pcl, double rl);

}  // namespace metastruct
