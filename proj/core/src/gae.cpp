#include "gnndiff/gae.hpp"

#include <algorithm>
#include <cmath>

#include "gnndiff/error.hpp"
#include "gnndiff/optim.hpp"
#include "gnndiff/rng.hpp"

namespace gnndiff {

namespace {

ad::Var glorot(std::size_t in, std::size_t out, ad::Rng& rng, std::string name) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<float> u(static_cast<float>(-a), static_cast<float>(a));
  Tensor w({in, out});
  for (auto& v : w.storage()) v = u(rng);
  return ad::parameter(std::move(w), std::move(name));
}

void check_inputs(const GaeModel& m, const GraphInputs& inputs) {
  if (inputs.feature_dim() != m.in_dim)
    throw DimensionError("graph autoencoder expects " + std::to_string(m.in_dim) + " features, graph has " +
                         std::to_string(inputs.feature_dim()));
}

}  // namespace

GaeModel gae_init(Task task, std::size_t in_dim, std::size_t latent_dim, std::size_t out_dim, ad::Rng& rng) {
  if (in_dim == 0 || latent_dim < 3) throw ContractError("graph autoencoder needs features and latent_dim >= 3");
  GaeModel m;
  m.task = task;
  m.in_dim = in_dim;
  m.latent_dim = latent_dim;
  if (task == Task::NodeClassification) {
    if (out_dim == 0) throw ContractError("graph autoencoder needs at least one class");
    const std::size_t d = latent_dim / 3;
    m.weights = {glorot(in_dim, d, rng, "W1"), glorot(in_dim, d, rng, "W2"),
                 glorot(in_dim, latent_dim - 2 * d, rng, "W3"), glorot(latent_dim, latent_dim, rng, "W4"),
                 glorot(latent_dim, out_dim, rng, "W5"), ad::parameter(Tensor({out_dim}), "b5")};
  } else {
    m.weights = {glorot(in_dim, kGaeLinkHidden, rng, "W1"), glorot(kGaeLinkHidden, latent_dim, rng, "W2"),
                 glorot(latent_dim, kGaeLinkDecoder, rng, "Wd")};
  }
  return m;
}

ad::Var gae_forward(const GaeModel& m, const GraphInputs& inputs, bool training, ad::Rng& rng) {
  check_inputs(m, inputs);
  const auto& P = inputs.propagation();
  const auto& W = m.weights;
  auto x = [&] { return ad::dropout_values(inputs.features(), m.dropout, rng, training); };
  if (m.task == Task::NodeClassification) {
    auto two_hop = ad::relu(ad::spmm(P, ad::spmm(P, ad::spmm(x(), W[0]))));
    auto one_hop = ad::relu(ad::spmm(P, ad::spmm(x(), W[1])));
    auto mlp = ad::relu(ad::spmm(x(), W[2]));
    return ad::matmul(ad::concat_cols({two_hop, one_hop, mlp}), W[3]);
  }
  auto h = ad::relu(ad::spmm(P, ad::spmm(x(), W[0])));
  return ad::spmm(P, ad::matmul(h, W[1]));
}

ad::Var gae_decode(const GaeModel& m, const ad::Var& eta) {
  if (m.task == Task::NodeClassification) return ad::add(ad::matmul(eta, m.weights[4]), m.weights[5]);
  return ad::matmul(eta, m.weights[2]);
}

Tensor gae_encode(const GaeModel& m, const GraphInputs& inputs) {
  if (m.task != Task::NodeClassification) throw ContractError("gae_encode needs a node-classification autoencoder");
  ad::Rng unused(0);
  return gae_forward(m, inputs, false, unused)->value;
}

Tensor gae_encode_link(const GaeModel& m, const GraphInputs& train_inputs) {
  if (m.task != Task::LinkPrediction) throw ContractError("gae_encode_link needs a link-prediction autoencoder");
  ad::Rng unused(0);
  return gae_forward(m, train_inputs, false, unused)->value;
}

GaeModel gae_train(const TaskData& data, std::size_t latent_dim, const GaeOptions& options) {
  ad::Rng init(derive_seed(options.seed, {0x6ae}));
  const std::size_t classes =
      data.task == Task::NodeClassification ? static_cast<std::size_t>(data.graph->num_classes()) : 0;
  GaeModel m = gae_init(data.task, data.inputs->feature_dim(), latent_dim, classes, init);
  m.dropout = options.dropout;
  Optimizer opt(OptimizerKind::AdamW, m.parameters(), options.learning_rate, options.weight_decay);
  ad::Rng drop(derive_seed(options.seed, {0x6ae, 1}));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    auto loss = data.loss(gae_decode(m, gae_forward(m, *data.inputs, true, drop)));
    m.losses.push_back(loss->value[0]);
    if (!std::isfinite(m.losses.back())) throw ContractError("graph autoencoder training diverged");
    ad::backward(loss);
    opt.step();
  }
  return m;
}

std::vector<float> graph_condition(const Tensor& eta) {
  const std::size_t n = eta.rows(), d = eta.cols();
  std::vector<float> out(d);
  std::vector<float> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = eta[i * d + j];
    std::sort(column.begin(), column.end());
    double s = 0.0;
    for (float v : column) s += v;
    out[j] = static_cast<float>(s / static_cast<double>(n));
  }
  return out;
}

}  // namespace gnndiff
