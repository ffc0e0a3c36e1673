#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gnndiff/autodiff.hpp"
#include "gnndiff/graph.hpp"

namespace gnndiff {

enum class Arch { MLP, GCN, SGC, APPNP };
enum class Task { NodeClassification, LinkPrediction };

std::string to_string(Arch arch);
std::string to_string(Task task);
Arch parse_arch(const std::string& name);
Task parse_task(const std::string& name);

struct ModelSpec {
  Arch arch = Arch::GCN;
  Task task = Task::NodeClassification;
  int hidden_size = 64;
  double dropout = 0.5;
  /// SGC propagation power.
  int num_hops = 2;
  /// APPNP restart weight.
  double teleport = 0.1;
  int propagation_steps = 10;

  /// Throws ContractError on out-of-range fields.
  void validate() const;
};

/// Sparse inputs a model consumes: features and the normalized propagation matrix.
/// Shared read-only across concurrent trials; the SGC power cache is locked.
class GraphInputs {
 public:
  GraphInputs(std::shared_ptr<const SparseMatrix> features, std::shared_ptr<const SparseMatrix> propagation);

  const std::shared_ptr<const SparseMatrix>& features() const noexcept { return features_; }
  const std::shared_ptr<const SparseMatrix>& propagation() const noexcept { return propagation_; }
  std::size_t num_nodes() const noexcept { return features_->rows(); }
  std::size_t feature_dim() const noexcept { return features_->cols(); }

  /// P^hops X as a dense tensor, computed once per hop count.
  std::shared_ptr<const Tensor> propagated_features(int hops) const;

 private:
  std::shared_ptr<const SparseMatrix> features_;
  std::shared_ptr<const SparseMatrix> propagation_;
  mutable std::mutex cache_mutex_;
  mutable std::map<int, std::shared_ptr<const Tensor>> cache_;
};

struct Linear {
  ad::Var weight;  // [in, out]
  ad::Var bias;    // [out]
};

/// Ordered (name, shape) list of the generated tensors.
struct LayerLayout {
  std::vector<std::pair<std::string, Shape>> entries;

  std::size_t total() const;
  bool operator==(const LayerLayout&) const = default;
};

/// Flattened last-layer parameters: weight row-major, then bias.
struct ParamVector {
  std::vector<float> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const ParamVector&) const = default;
};

class Model {
 public:
  /// Glorot-uniform weights, zero biases, drawn from `init_rng`.
  Model(ModelSpec spec, std::size_t in_dim, std::size_t out_dim, ad::Rng& init_rng);

  /// Logits [N, out] for node classification, embeddings [N, out] for link prediction.
  ad::Var forward(const GraphInputs& inputs, bool training, ad::Rng& rng) const;

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return out_dim_; }

  std::vector<ad::Var> parameters() const;
  std::vector<ad::Var> last_layer_parameters() const;
  /// Marks every layer trainable, or only the last one.
  void set_trainable(bool all_layers);

  /// Deep copy; parameters are not shared with the original.
  Model clone() const;
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

  LayerLayout last_layer_layout() const;

 private:
  Model() = default;
  ModelSpec spec_;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::vector<Linear> layers_;
};

std::pair<ParamVector, LayerLayout> vectorize_last_layer(const Model& m);
/// Overwrites the last layer of `m` in place. Throws ContractError on layout mismatch.
void load_last_layer(Model& m, const ParamVector& v, const LayerLayout& layout);
/// Copy of `m` with its last layer replaced; earlier layers copied unchanged.
Model devectorize(const ParamVector& v, const LayerLayout& layout, const Model& m);

/// Fraction of `rows` where argmax(logits) equals the label (ties -> lowest class).
double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::uint32_t> rows);
/// sigmoid(<emb_u, emb_v>) per pair.
std::vector<float> link_probabilities(const Tensor& embeddings, const std::vector<Edge>& pairs);
/// Accuracy of thresholding link probabilities at 0.5 (p > 0.5 predicts an edge).
double link_accuracy(const Tensor& embeddings, const LabeledEdges& edges);

/// What a target model is trained and scored on.
struct TaskData {
  Task task = Task::NodeClassification;
  std::shared_ptr<const Graph> graph;
  std::shared_ptr<const GraphInputs> inputs;
  std::shared_ptr<const LinkSplit> link;
  std::vector<std::uint32_t> train_rows, val_rows, test_rows;

  /// Width of the model output for a given spec.
  std::size_t output_dim(const ModelSpec& spec) const;
  ad::Var loss(const ad::Var& output) const;
  /// Accuracy on a split from an evaluation-mode output.
  double metric(const Tensor& output, Split split) const;
};

TaskData make_node_task(std::shared_ptr<const Graph> g);
TaskData make_link_task(std::shared_ptr<const Graph> g, std::shared_ptr<const LinkSplit> split);

}  // namespace gnndiff
