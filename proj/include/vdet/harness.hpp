#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vdet/cost_model.hpp"
#include "vdet/detector.hpp"
#include "vdet/metrics.hpp"
#include "vdet/optim.hpp"
#include "vdet/synth.hpp"

namespace vdet::harness {

/// git-describe style build version embedded in every artifact.
std::string version_string();

struct DataConfig {
  int train_volumes = 200, val_volumes = 30, test_volumes = 30;
  synth::SynthConfig synth;
};

struct TrainConfig {
  int epochs = 10;
  int slices_per_volume = 0;  // 0 trains on every slice of every volume each epoch
  int max_volumes = 0;        // 0 uses the whole split
};

struct RunConfig {
  std::uint64_t seed = 0;
  detection::DetectorConfig detector;
  optim::OptimizerConfig optimizer;
  TrainConfig train;
  DataConfig data;
  std::string data_dir = "data";

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected, all of them listed in one error.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

struct VolumeRecord {
  std::string split, volume_id;
  std::uint64_t seed = 0;
  std::string volume_file, gt_file;  // relative to the dataset root
  std::string volume_checksum, gt_checksum;
};

struct Scan {
  std::string volume_id;
  std::vector<Tensor> slices;
  std::vector<LesionBox> ground_truth;
};

/// Seed of volume `index` of `split` for a dataset generated with `seed`.
std::uint64_t volume_seed(std::uint64_t seed, const std::string& split, int index);

/// Writes volumes, GT JSONL files and manifest.json under out_dir. Returns the manifest.
nlohmann::json cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_dir);

std::vector<VolumeRecord> read_manifest(const std::filesystem::path& data_dir, const std::string& split);
std::vector<Scan> load_split(const std::filesystem::path& data_dir, const std::string& split, int max_volumes = 0);

struct TrainingError : Error {
  using Error::Error;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const nlohmann::json&)> on_step;  // optional per-step observer
};

struct TrainResult {
  std::filesystem::path last_checkpoint;
  std::int64_t steps = 0;
  double first_loss = 0, last_loss = 0;
};

/// One optimizer step per (volume, centre slice), shuffled per epoch from the seed.
TrainResult train_on_scans(const RunConfig& cfg, const std::vector<Scan>& scans, const TrainOptions& opts);
TrainResult cmd_train(const RunConfig& cfg, const TrainOptions& opts);

/// Loads a checkpoint into a detector built from `cfg` (the checkpoint's embedded config when null).
detection::Detector load_detector(const std::filesystem::path& checkpoint, const RunConfig* cfg = nullptr);
RunConfig checkpoint_config(const std::filesystem::path& checkpoint);

/// Detections of every slice of a volume; per-slice features are computed once and shared.
std::vector<LesionBox> detect_volume(const detection::Detector& det, const std::vector<Tensor>& slices);

nlohmann::ordered_json eval_report(const RunConfig& cfg, const std::string& split, const metrics::EvalReport& r);

struct EvalOutput {
  nlohmann::ordered_json report;
  std::vector<metrics::ScanBoxes> scans;
};

/// Runs the detector over a split, writes report.json and detections.jsonl to out_dir.
EvalOutput cmd_eval(const std::filesystem::path& checkpoint, const std::string& split,
                    const std::filesystem::path& out_dir, const RunConfig* cfg = nullptr);

/// Cost table over the grid, written as cost.csv and cost.json.
std::vector<cost::CostReport> cmd_bench(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                        const std::vector<cost::CostShape>& grid);

}  // namespace vdet::harness
