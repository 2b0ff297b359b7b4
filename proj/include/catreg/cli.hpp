#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "catreg/config.hpp"
#include "catreg/dataset.hpp"
#include "catreg/eval.hpp"
#include "catreg/trainer.hpp"

namespace catreg {

// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::string code_version();

struct ExperimentManifest {
  std::string run_id;
  std::string command;
  ConfigMap config;  // enough to re-run
  std::string code_version;
  std::uint64_t seed = 0;
  std::string started, finished;  // ISO-8601 UTC; finished empty while running
  std::vector<std::pair<std::string, std::string>> artifacts;  // name -> path
};

// Writes manifest.json in dir via a temp file and rename.
void write_manifest(const ExperimentManifest& manifest, const std::filesystem::path& dir);
std::string utc_timestamp();

struct AblationRun {
  TrainMode mode = TrainMode::source_only;
  std::uint64_t seed = 0;
  double target_map = 0.0;       // target val split
  double source_map = 0.0;       // source val split
  double emd = 0.0;              // balanced GT-instance features, val split
  int emd_points = 0;            // per side
  LocalizationScore localization;  // source val split
  long target_annotation_reads = 0;
  long icr_target_updates = 0;
  double seconds = 0.0;
};

struct AblationOptions {
  RunConfig base;
  std::vector<TrainMode> modes{TrainMode::source_only, TrainMode::da_faster, TrainMode::da_faster_icr,
                               TrainMode::da_faster_icr_ccr};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int emd_per_class = 50;
  std::optional<std::filesystem::path> out_dir;  // per-run checkpoints, metrics and manifests
  std::function<void(const AblationRun&)> on_run;
};

std::vector<AblationRun> run_ablation(const DatasetBundle& data, const AblationOptions& options);

// Per-mode rows: mode, one mAP column per seed, mean mAP, mean EMD.
std::string ablation_table(const std::vector<AblationRun>& runs);

}  // namespace catreg
