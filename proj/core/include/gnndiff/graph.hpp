#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gnndiff/sparse.hpp"
#include "gnndiff/tensor.hpp"

namespace gnndiff {

enum class Split { Train, Val, Test };

using Edge = std::pair<std::uint32_t, std::uint32_t>;

/// Node-attributed undirected graph with one train/val/test split.
/// Immutable after construction; safe to share across threads.
struct Graph {
  std::string name;
  std::size_t num_nodes = 0;
  /// Row-normalized features [N, D_f].
  Tensor features;
  /// Same features in compressed-row form (Cora/Citeseer are ~1% dense).
  std::shared_ptr<const SparseMatrix> sparse_features;
  /// Symmetric, unit weights, no self-loops.
  SparseMatrix adjacency;
  std::vector<int> labels;
  std::vector<std::uint8_t> train_mask, val_mask, test_mask;

  std::size_t feature_dim() const { return features.cols(); }
  int num_classes() const;
  std::size_t num_undirected_edges() const { return adjacency.nnz() / 2; }
  /// Node indices where the split's mask is set, ascending.
  std::vector<std::uint32_t> mask_indices(Split split) const;
  /// Each undirected edge once, as (u, v) with u < v, sorted.
  std::vector<Edge> undirected_edges() const;
};

/// Unit-weight symmetric adjacency from undirected pairs. Throws on self-loops,
/// duplicates and out-of-range endpoints.
SparseMatrix adjacency_from_edges(std::size_t num_nodes, const std::vector<Edge>& edges);

/// Assembles a Graph, row-normalizing `raw_features` (zero rows stay zero).
/// Throws ContractError when masks overlap or sizes disagree.
Graph make_graph(std::string name, Tensor raw_features, const std::vector<Edge>& edges, std::vector<int> labels,
                 std::vector<std::uint8_t> train, std::vector<std::uint8_t> val, std::vector<std::uint8_t> test);

/// Reads `<root>/<name>/{features.f32, edges.csv, labels.csv, masks.csv}`.
/// Throws LoadError naming file and line on malformed input.
Graph load_dataset(const std::filesystem::path& root, const std::string& name);

/// Writes the on-disk dataset format (features written as stored, i.e. normalized).
void save_dataset(const Graph& g, const std::filesystem::path& dir);

/// Every class that occurs in `labels` must have a training node.
void validate_for_node_classification(const Graph& g);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
SparseMatrix normalize_adjacency(const SparseMatrix& adjacency);
/// D^-1 (A + I); row-stochastic.
SparseMatrix random_walk_normalize(const SparseMatrix& adjacency);

struct LabeledEdges {
  std::vector<Edge> pairs;
  /// 1 for positives, 0 for negatives.
  std::vector<float> labels;

  std::size_t size() const noexcept { return pairs.size(); }
  std::vector<std::uint32_t> sources() const;
  std::vector<std::uint32_t> targets() const;
};

/// Edge split for link prediction: 5% validation, 10% test positives (floor),
/// remainder train, each with as many sampled non-edges.
struct LinkSplit {
  SparseMatrix train_adjacency;
  LabeledEdges train, val, test;

  const LabeledEdges& edges(Split split) const;
};

inline constexpr double kLinkValFraction = 0.05;
inline constexpr double kLinkTestFraction = 0.10;

/// Deterministic under `seed`. Throws ContractError when the graph is too small.
LinkSplit split_edges_for_link_prediction(const Graph& g, std::uint64_t seed);

}  // namespace gnndiff
