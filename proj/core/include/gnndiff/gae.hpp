#pragma once

#include <cstdint>
#include <vector>

#include "gnndiff/gnn.hpp"

namespace gnndiff {

/// Task-trained graph autoencoder whose mean-pooled encoding conditions the diffusion model.
///
/// Node classification: eta = [relu(A^2 X W1) | relu(A X W2) | relu(X W3)] W4, decoder eta W5.
/// Link prediction:     eta = A relu(A X W1) W2, decoder eta Wd, then inner products of node pairs.
struct GaeModel {
  Task task = Task::NodeClassification;
  std::size_t in_dim = 0;
  std::size_t latent_dim = 0;
  float dropout = 0.1f;
  /// NC: W1, W2, W3, W4, W5, b5.  LP: W1, W2, Wd.
  std::vector<ad::Var> weights;
  /// Training loss per epoch.
  std::vector<double> losses;

  std::vector<ad::Var> parameters() const { return weights; }
};

inline constexpr std::size_t kGaeLinkHidden = 256;
inline constexpr std::size_t kGaeLinkDecoder = 64;

struct GaeOptions {
  int epochs = 200;
  double learning_rate = 1e-3;
  double weight_decay = 2e-3;
  float dropout = 0.1f;
  std::uint64_t seed = 42;
};

/// Glorot-uniform weights for a graph with `in_dim` features; `out_dim` is the class count (NC) or ignored (LP).
GaeModel gae_init(Task task, std::size_t in_dim, std::size_t latent_dim, std::size_t out_dim, ad::Rng& rng);

/// eta as a graph node (dropout on X before each branch when training).
ad::Var gae_forward(const GaeModel& m, const GraphInputs& inputs, bool training, ad::Rng& rng);
/// Decoder output: class logits (NC) or decoded node embeddings (LP).
ad::Var gae_decode(const GaeModel& m, const ad::Var& eta);

/// Evaluation-mode encodings.
Tensor gae_encode(const GaeModel& m, const GraphInputs& inputs);
Tensor gae_encode_link(const GaeModel& m, const GraphInputs& train_inputs);

GaeModel gae_train(const TaskData& data, std::size_t latent_dim, const GaeOptions& options);

/// Column means of eta, summed in sorted order so node order never changes the result.
std::vector<float> graph_condition(const Tensor& eta);

}  // namespace gnndiff
