#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnndiff/gnn.hpp"
#include "gnndiff/search.hpp"

namespace gnndiff {

enum class Strategy { Grid, Random, Coarse, C2F, GnnDiff };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Every knob of a run. Defaults are the published settings.
struct PipelineConfig {
  // [pipeline]
  std::string dataset = "cora";
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "runs/cora-gcn";
  Task task = Task::NodeClassification;
  Arch arch = Arch::GCN;
  Strategy strategy = Strategy::GnnDiff;
  std::uint64_t seed = 42;
  unsigned workers = 0;
  bool zero_condition = false;

  // [search]
  int runs = 10;
  int epochs = 200;
  double random_fraction = kRandomFraction;
  double coarse_fraction = kCoarseFraction;

  // [model]
  int hidden_size = 64;
  int propagation_steps = 10;

  // [collect]
  int collect_base_epochs = kCollectBaseEpochs;
  int collect_finetune_epochs = kCollectFinetuneEpochs;
  int collect_runs = kCollectRuns;
  double collect_lr = kCollectLearningRate;

  // [gae]
  int gae_epochs = 200;
  double gae_lr = 1e-3;
  double gae_wd = 2e-3;
  double gae_dropout = 0.1;

  // [pae]
  int pae_epochs = 9000;
  int pae_batch = 50;
  double pae_lr = 1e-3;
  double pae_wd = 2e-3;

  // [gldm]
  int gldm_epochs = 6000;
  int gldm_batch = 50;
  double gldm_lr = 1e-3;
  double gldm_wd = 2e-3;
  int diffusion_steps = 1000;
  double beta_first = 1e-4;
  double beta_last = 0.02;
  int samples = 100;

  /// Canonical `section.key = value` listing of every field; also the run fingerprint.
  std::string canonical() const;
  void validate() const;
};

/// Sets one field by `section.key` (or bare key when unambiguous). Throws ContractError on unknown keys or bad values.
void apply_setting(PipelineConfig& config, const std::string& key, const std::string& value);
/// Reads `key = value` lines grouped under `[section]` headers.
PipelineConfig load_config(const std::filesystem::path& file, PipelineConfig base = {});

/// `--fast`: 3 runs per search config.
void apply_fast_mode(PipelineConfig& config);

struct MethodRow {
  std::string method;
  double mean = 0.0;
  double std = 0.0;
  int runs = 0;
  std::size_t configs = 0;
};

struct SampleRow {
  std::size_t index = 0;
  double val = 0.0;
  double test = 0.0;
};

struct ReconstructionRow {
  std::size_t index = 0;
  double original_val = 0.0;
  double decoded_val = 0.0;
  double relative_mse = 0.0;
};

struct RunReport {
  std::string dataset;
  Task task = Task::NodeClassification;
  Arch arch = Arch::GCN;
  Strategy strategy = Strategy::GnnDiff;
  bool zero_condition = false;
  HyperConfig selected;
  std::vector<MethodRow> methods;
  std::vector<SampleRow> samples;
  std::optional<std::size_t> chosen_sample;
  std::vector<ReconstructionRow> reconstruction;
  std::map<std::string, double> seconds;

  const MethodRow* method(const std::string& name) const;
  /// Human-readable table.
  std::string to_text() const;
  /// One JSON object per line.
  std::string to_jsonl() const;
};

struct SampleSelection {
  std::size_t index = 0;
  double test = 0.0;
};

/// Index of the highest validation score; earliest wins ties. Sees validation only.
std::size_t select_by_validation(std::span<const double> val);
/// Test metric of the max-validation sample. Throws ContractError when empty.
SampleSelection select_and_report(const std::vector<std::pair<double, double>>& samples);

using ProgressFn = std::function<void(const std::string& stage, const std::string& message)>;

/// Runs the configured strategy end to end, persisting every stage under `out_dir`
/// and resuming from the last stage whose artifacts verify. Writes report.txt and
/// report.jsonl; timings go to timings.json. Throws StageError naming the failing stage.
RunReport run_pipeline(const PipelineConfig& config, const ProgressFn& progress = {});

}  // namespace gnndiff
