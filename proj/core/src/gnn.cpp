#include "gnndiff/gnn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "gnndiff/error.hpp"

namespace gnndiff {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

Linear glorot_linear(std::size_t in, std::size_t out, ad::Rng& rng, const std::string& name) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<float> u(static_cast<float>(-a), static_cast<float>(a));
  Tensor w({in, out});
  for (auto& v : w.storage()) v = u(rng);
  return {ad::parameter(std::move(w), name + ".weight"), ad::parameter(Tensor({out}), name + ".bias")};
}

ad::Var affine(const ad::Var& x, const Linear& l) { return ad::add(ad::matmul(x, l.weight), l.bias); }

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::MLP: return "MLP";
    case Arch::GCN: return "GCN";
    case Arch::SGC: return "SGC";
    case Arch::APPNP: return "APPNP";
  }
  return "?";
}

std::string to_string(Task task) {
  return task == Task::NodeClassification ? "node-classification" : "link-prediction";
}

Arch parse_arch(const std::string& name) {
  const auto s = lower(name);
  if (s == "mlp") return Arch::MLP;
  if (s == "gcn") return Arch::GCN;
  if (s == "sgc") return Arch::SGC;
  if (s == "appnp") return Arch::APPNP;
  throw ContractError("unknown architecture '" + name + "'");
}

Task parse_task(const std::string& name) {
  const auto s = lower(name);
  if (s == "node-classification" || s == "nc") return Task::NodeClassification;
  if (s == "link-prediction" || s == "lp") return Task::LinkPrediction;
  throw ContractError("unknown task '" + name + "'");
}

void ModelSpec::validate() const {
  if (hidden_size < 1) throw ContractError("hidden_size must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("dropout must lie in [0,1)");
  if (arch == Arch::SGC && num_hops < 1) throw ContractError("SGC needs num_hops >= 1");
  if (arch == Arch::APPNP) {
    if (!(teleport > 0.0 && teleport < 1.0)) throw ContractError("APPNP teleport probability must lie in (0,1)");
    if (propagation_steps < 1) throw ContractError("APPNP needs at least one propagation step");
  }
}

// ---- GraphInputs ------------------------------------------------------------

GraphInputs::GraphInputs(std::shared_ptr<const SparseMatrix> features, std::shared_ptr<const SparseMatrix> propagation)
    : features_(std::move(features)), propagation_(std::move(propagation)) {
  if (!features_ || !propagation_) throw ContractError("graph inputs need features and a propagation matrix");
  if (propagation_->rows() != features_->rows() || propagation_->cols() != features_->rows())
    throw DimensionError("propagation matrix " + std::to_string(propagation_->rows()) + "x" +
                         std::to_string(propagation_->cols()) + " does not match " +
                         std::to_string(features_->rows()) + " nodes");
}

std::shared_ptr<const Tensor> GraphInputs::propagated_features(int hops) const {
  std::lock_guard lock(cache_mutex_);
  if (auto it = cache_.find(hops); it != cache_.end()) return it->second;
  Tensor x = features_->to_dense();
  for (int h = 0; h < hops; ++h) x = propagation_->multiply(x);
  auto ptr = std::make_shared<const Tensor>(std::move(x));
  cache_.emplace(hops, ptr);
  return ptr;
}

// ---- Model ------------------------------------------------------------------

std::size_t LayerLayout::total() const {
  std::size_t n = 0;
  for (const auto& [name, shape] : entries) n += shape_numel(shape);
  return n;
}

Model::Model(ModelSpec spec, std::size_t in_dim, std::size_t out_dim, ad::Rng& init_rng)
    : spec_(spec), in_dim_(in_dim), out_dim_(out_dim) {
  spec_.validate();
  if (in_dim == 0 || out_dim == 0) throw DimensionError("model input and output widths must be positive");
  const auto h = static_cast<std::size_t>(spec_.hidden_size);
  switch (spec_.arch) {
    case Arch::MLP:
    case Arch::GCN:
      layers_.push_back(glorot_linear(in_dim, h, init_rng, "layer0"));
      layers_.push_back(glorot_linear(h, out_dim, init_rng, "layer1"));
      break;
    case Arch::SGC:
      layers_.push_back(glorot_linear(in_dim, out_dim, init_rng, "layer0"));
      break;
    case Arch::APPNP:
      layers_.push_back(glorot_linear(in_dim, h, init_rng, "layer0"));
      layers_.push_back(glorot_linear(h, h, init_rng, "layer1"));
      layers_.push_back(glorot_linear(h, out_dim, init_rng, "layer2"));
      break;
  }
}

ad::Var Model::forward(const GraphInputs& inputs, bool training, ad::Rng& rng) const {
  if (inputs.feature_dim() != in_dim_)
    throw ContractError("model expects " + std::to_string(in_dim_) + " input features, graph has " +
                        std::to_string(inputs.feature_dim()));
  const auto p = static_cast<float>(spec_.dropout);
  const auto& P = inputs.propagation();
  auto sparse_input = [&](const Linear& l) {
    auto x = ad::dropout_values(inputs.features(), p, rng, training);
    return ad::add(ad::spmm(x, l.weight), l.bias);
  };

  switch (spec_.arch) {
    case Arch::MLP: {
      auto h = ad::relu(sparse_input(layers_[0]));
      return affine(ad::dropout(h, p, rng, training), layers_[1]);
    }
    case Arch::GCN: {
      auto x = ad::dropout_values(inputs.features(), p, rng, training);
      auto h = ad::relu(ad::add(ad::spmm(P, ad::spmm(x, layers_[0].weight)), layers_[0].bias));
      h = ad::dropout(h, p, rng, training);
      return ad::add(ad::spmm(P, ad::matmul(h, layers_[1].weight)), layers_[1].bias);
    }
    case Arch::SGC: {
      auto x = ad::constant(*inputs.propagated_features(spec_.num_hops));
      return affine(ad::dropout(x, p, rng, training), layers_[0]);
    }
    case Arch::APPNP: {
      auto h = ad::relu(sparse_input(layers_[0]));
      h = ad::relu(affine(ad::dropout(h, p, rng, training), layers_[1]));
      const auto alpha = static_cast<float>(spec_.teleport);
      auto z = h;
      for (int k = 0; k < spec_.propagation_steps; ++k)
        z = ad::add(ad::scale(ad::spmm(P, z), 1.0f - alpha), ad::scale(h, alpha));
      return affine(ad::dropout(z, p, rng, training), layers_[2]);
    }
  }
  throw ContractError("unhandled architecture");
}

std::vector<ad::Var> Model::parameters() const {
  std::vector<ad::Var> out;
  for (const auto& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

std::vector<ad::Var> Model::last_layer_parameters() const { return {layers_.back().weight, layers_.back().bias}; }

void Model::set_trainable(bool all_layers) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool on = all_layers || i + 1 == layers_.size();
    layers_[i].weight->requires_grad = on;
    layers_[i].bias->requires_grad = on;
  }
}

Model Model::clone() const {
  Model m;
  m.spec_ = spec_;
  m.in_dim_ = in_dim_;
  m.out_dim_ = out_dim_;
  for (const auto& l : layers_) {
    Linear c{ad::parameter(l.weight->value, l.weight->name), ad::parameter(l.bias->value, l.bias->name)};
    c.weight->requires_grad = l.weight->requires_grad;
    c.bias->requires_grad = l.bias->requires_grad;
    m.layers_.push_back(std::move(c));
  }
  return m;
}

std::vector<Tensor> Model::snapshot() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters()) out.push_back(p->value);
  return out;
}

void Model::restore(const std::vector<Tensor>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw ContractError("snapshot has the wrong number of tensors");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape())
      throw DimensionError("snapshot tensor " + std::to_string(i) + " has shape " + shape_str(values[i].shape()));
    params[i]->value = values[i];
  }
}

LayerLayout Model::last_layer_layout() const {
  const auto& l = layers_.back();
  return LayerLayout{{{l.weight->name, l.weight->value.shape()}, {l.bias->name, l.bias->value.shape()}}};
}

std::pair<ParamVector, LayerLayout> vectorize_last_layer(const Model& m) {
  ParamVector v;
  for (const auto& p : m.last_layer_parameters())
    v.values.insert(v.values.end(), p->value.storage().begin(), p->value.storage().end());
  return {std::move(v), m.last_layer_layout()};
}

void load_last_layer(Model& m, const ParamVector& v, const LayerLayout& layout) {
  if (!(layout == m.last_layer_layout())) throw ContractError("layer layout does not match the model's last layer");
  if (v.size() != layout.total())
    throw ContractError("parameter vector has length " + std::to_string(v.size()) + ", layout needs " +
                        std::to_string(layout.total()));
  std::size_t off = 0;
  for (const auto& p : m.last_layer_parameters()) {
    std::copy_n(v.values.begin() + static_cast<std::ptrdiff_t>(off), p->value.numel(), p->value.data());
    off += p->value.numel();
  }
}

Model devectorize(const ParamVector& v, const LayerLayout& layout, const Model& m) {
  Model out = m.clone();
  load_last_layer(out, v, layout);
  return out;
}

// ---- metrics ----------------------------------------------------------------

double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::uint32_t> rows) {
  if (rows.empty()) throw ContractError("accuracy over an empty mask");
  const std::size_t n = logits.cols();
  std::size_t correct = 0;
  for (auto i : rows) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * n;
    const auto pred = static_cast<int>(std::max_element(row, row + n) - row);
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

std::vector<float> link_probabilities(const Tensor& embeddings, const std::vector<Edge>& pairs) {
  const std::size_t n = embeddings.rows(), d = embeddings.cols();
  std::vector<float> out;
  out.reserve(pairs.size());
  for (const auto& [u, v] : pairs) {
    if (u >= n || v >= n)
      throw DimensionError("link pair (" + std::to_string(u) + "," + std::to_string(v) + ") out of range");
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(embeddings[u * d + j]) * embeddings[v * d + j];
    out.push_back(static_cast<float>(1.0 / (1.0 + std::exp(-s))));
  }
  return out;
}

double link_accuracy(const Tensor& embeddings, const LabeledEdges& edges) {
  if (edges.size() == 0) throw ContractError("link accuracy over an empty edge set");
  const auto probs = link_probabilities(embeddings, edges.pairs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if ((probs[i] > 0.5f) == (edges.labels[i] > 0.5f)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

// ---- tasks ------------------------------------------------------------------

std::size_t TaskData::output_dim(const ModelSpec& spec) const {
  return task == Task::NodeClassification ? static_cast<std::size_t>(graph->num_classes())
                                          : static_cast<std::size_t>(spec.hidden_size);
}

ad::Var TaskData::loss(const ad::Var& output) const {
  if (task == Task::NodeClassification) return ad::cross_entropy(output, graph->labels, train_rows);
  const auto& e = link->train;
  const auto src = e.sources();
  const auto dst = e.targets();
  auto scores = ad::row_dot(ad::gather_rows(output, src), ad::gather_rows(output, dst));
  return ad::bce_with_logits(scores, e.labels);
}

double TaskData::metric(const Tensor& output, Split split) const {
  if (task == Task::NodeClassification) {
    const auto& rows = split == Split::Train ? train_rows : split == Split::Val ? val_rows : test_rows;
    return accuracy(output, graph->labels, rows);
  }
  return link_accuracy(output, link->edges(split));
}

TaskData make_node_task(std::shared_ptr<const Graph> g) {
  TaskData t;
  t.task = Task::NodeClassification;
  auto prop = std::make_shared<const SparseMatrix>(normalize_adjacency(g->adjacency));
  t.inputs = std::make_shared<const GraphInputs>(g->sparse_features, prop);
  t.train_rows = g->mask_indices(Split::Train);
  t.val_rows = g->mask_indices(Split::Val);
  t.test_rows = g->mask_indices(Split::Test);
  if (t.train_rows.empty() || t.val_rows.empty() || t.test_rows.empty())
    throw ContractError("graph '" + g->name + "' needs non-empty train/val/test masks");
  t.graph = std::move(g);
  return t;
}

TaskData make_link_task(std::shared_ptr<const Graph> g, std::shared_ptr<const LinkSplit> split) {
  TaskData t;
  t.task = Task::LinkPrediction;
  auto prop = std::make_shared<const SparseMatrix>(normalize_adjacency(split->train_adjacency));
  t.inputs = std::make_shared<const GraphInputs>(g->sparse_features, prop);
  t.graph = std::move(g);
  t.link = std::move(split);
  return t;
}

}  // namespace gnndiff
