#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gnndiff/gnn.hpp"
#include "gnndiff/optim.hpp"

namespace gnndiff {

using AxisValue = std::variant<double, std::string>;

std::string to_string(const AxisValue& v);

struct Axis {
  std::string name;
  std::vector<AxisValue> values;
  /// Frozen by C2F refinement.
  bool model_related = false;
};

struct SearchSpace {
  std::vector<Axis> axes;
  /// Applied to every config; not searched.
  LrSchedule schedule{{100, 125, 150, 175}, 0.2};

  std::size_t grid_size() const;
  const Axis* find(const std::string& name) const;
};

/// Training axes shared by every target, then the arch's model axes.
/// Throws ContractError for combinations without a published space (SGC link prediction).
SearchSpace default_search_space(Arch arch, Task task);

inline constexpr double kRandomFraction = 0.20;
inline constexpr double kCoarseFraction = 0.10;

/// One point of a search space, in axis-declaration order.
struct HyperConfig {
  std::vector<std::pair<std::string, AxisValue>> values;

  bool has(const std::string& name) const;
  const AxisValue& get(const std::string& name) const;
  double number(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  void set(const std::string& name, AxisValue v);
  /// "optimizer=Adam lr=..." style; stable, used as a record key.
  std::string key() const;

  bool operator==(const HyperConfig&) const = default;
};

/// Lexicographic product; the last-declared axis varies fastest.
std::vector<HyperConfig> enumerate_grid(const SearchSpace& space);
/// floor(fraction * grid size) distinct configs, uniform without replacement.
std::vector<HyperConfig> sample_subspace(const SearchSpace& space, double fraction, std::uint64_t seed);
/// Optimizer and model axes frozen at `coarse_best`; learning_rate, weight_decay
/// and dropout each take a 3-value window of their grid around the chosen value.
std::vector<HyperConfig> c2f_refine(const SearchSpace& space, const HyperConfig& coarse_best);

/// Fully resolved training recipe for one config.
struct TrainRecipe {
  ModelSpec spec;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  LrSchedule schedule;
};

/// Axes present in `config` override the matching fields of `base`.
TrainRecipe resolve(const HyperConfig& config, const ModelSpec& base, const LrSchedule& schedule);

struct TrialOptions {
  int runs = 10;
  int epochs = 200;
  std::uint64_t seed = 42;
  /// Keep the best-validation snapshot of every run.
  bool keep_checkpoints = false;
};

struct TrialResult {
  HyperConfig config;
  std::vector<double> val, test;
  double mean_val = 0.0;
  bool failed = false;
  std::vector<std::vector<Tensor>> checkpoints;

  double mean_test() const;
  double std_test() const;
};

/// Outcome of training one model: best-validation snapshot and its metrics.
struct RunOutcome {
  double best_val = 0.0;
  double test_at_best = 0.0;
  bool failed = false;
  std::vector<Tensor> best;
};

/// Trains `model` for `epochs`, tracking the best validation metric (strictly
/// improving). `trainable` defaults to all model parameters.
RunOutcome train_model(Model& model, const TaskData& data, OptimizerKind optimizer, double lr, double wd,
                       const LrSchedule& schedule, int epochs, ad::Rng& dropout_rng,
                       const std::vector<ad::Var>* trainable = nullptr);

/// Evaluation-mode output of a model on its task.
Tensor evaluate_output(const Model& model, const TaskData& data);

TrialResult run_trial(const HyperConfig& config, const TaskData& data, const ModelSpec& base,
                      const LrSchedule& schedule, const TrialOptions& options);

/// Index of the best mean validation; earliest wins ties. Failed results never win.
/// Throws SelectionError when every result failed or the list is empty.
std::size_t select_best_index(const std::vector<TrialResult>& results);
HyperConfig select_best_config(const std::vector<TrialResult>& results);

using TrialCallback = std::function<void(std::size_t index, const TrialResult&)>;

/// Runs every config on a bounded worker pool. Results come back in config
/// order; `on_done` is called under a lock as trials complete.
std::vector<TrialResult> run_search(const std::vector<HyperConfig>& configs, const TaskData& data,
                                    const ModelSpec& base, const LrSchedule& schedule, const TrialOptions& options,
                                    unsigned workers = 0, const TrialCallback& on_done = {});

inline constexpr int kCollectBaseEpochs = 190;
inline constexpr int kCollectFinetuneEpochs = 10;
inline constexpr int kCollectRuns = 10;
inline constexpr double kCollectLearningRate = 5e-4;

struct CheckpointSet {
  std::vector<ParamVector> vectors;
  LayerLayout layout;
  /// Model at the base run's best-validation epoch; its earlier layers are the frozen ones.
  Model base;
  HyperConfig config;
  std::vector<double> val, test;
};

struct CollectOptions {
  int base_epochs = kCollectBaseEpochs;
  int finetune_epochs = kCollectFinetuneEpochs;
  int runs = kCollectRuns;
  double finetune_lr = kCollectLearningRate;
  std::uint64_t seed = 42;
};

CheckpointSet collect_checkpoints(const HyperConfig& best, const TaskData& data, const ModelSpec& base,
                                  const LrSchedule& schedule, const CollectOptions& options);

struct BaselineResult {
  /// Mean test metric of each scheme; NaN when every run of a scheme failed.
  double full_mean = 0.0, full_std = 0.0;
  double finetune_mean = 0.0, finetune_std = 0.0;
  /// The scheme with the better mean (validation-selected per run).
  double best_mean() const;
  double best_std() const;
};

/// Runs the 200-epoch scheme and the 190+10 fine-tune scheme for `runs` seeds.
BaselineResult baseline_finetune_compare(const HyperConfig& best, const TaskData& data, const ModelSpec& base,
                                         const LrSchedule& schedule, int runs, std::uint64_t seed,
                                         int epochs = 200);

/// One JSON object per line: config, per-run val/test, mean_val, failed.
std::string to_record_line(const TrialResult& r);
TrialResult parse_record_line(const std::string& line);
/// Reads every well-formed record; a truncated last line is ignored.
std::vector<TrialResult> read_records(const std::filesystem::path& file);

}  // namespace gnndiff
