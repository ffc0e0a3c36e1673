#include "gnndiff/graph.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <unordered_set>

#include "gnndiff/error.hpp"

namespace gnndiff {

static_assert(std::endian::native == std::endian::little, "dataset files are little-endian float32");

namespace {

std::uint64_t edge_key(std::uint32_t u, std::uint32_t v) {
  if (u > v) std::swap(u, v);
  return (static_cast<std::uint64_t>(u) << 32) | v;
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw LoadError(file.string(), 0, "cannot open file");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::vector<long long> parse_ints(const std::string& line, const std::filesystem::path& file, std::size_t lineno,
                                  std::size_t expected) {
  std::vector<long long> out;
  const char* p = line.data();
  const char* end = line.data() + line.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    long long v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{}) throw LoadError(file.string(), lineno, "expected an integer in '" + line + "'");
    out.push_back(v);
    p = next;
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p < end) {
      if (*p != ',') throw LoadError(file.string(), lineno, "expected ',' in '" + line + "'");
      ++p;
    }
  }
  if (out.size() != expected)
    throw LoadError(file.string(), lineno,
                    "expected " + std::to_string(expected) + " fields, found " + std::to_string(out.size()));
  return out;
}

}  // namespace

int Graph::num_classes() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
}

std::vector<std::uint32_t> Graph::mask_indices(Split split) const {
  const auto& mask = split == Split::Train ? train_mask : split == Split::Val ? val_mask : test_mask;
  std::vector<std::uint32_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(static_cast<std::uint32_t>(i));
  return idx;
}

std::vector<Edge> Graph::undirected_edges() const {
  std::vector<Edge> out;
  out.reserve(num_undirected_edges());
  const auto rp = adjacency.row_ptr();
  const auto ci = adjacency.col_idx();
  for (std::size_t r = 0; r < adjacency.rows(); ++r)
    for (auto k = rp[r]; k < rp[r + 1]; ++k)
      if (r < ci[k]) out.emplace_back(static_cast<std::uint32_t>(r), ci[k]);
  return out;
}

SparseMatrix adjacency_from_edges(std::size_t num_nodes, const std::vector<Edge>& edges) {
  std::vector<Triplet> t;
  t.reserve(edges.size() * 2);
  std::unordered_set<std::uint64_t> seen;
  for (const auto& [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes)
      throw DimensionError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") outside " +
                           std::to_string(num_nodes) + " nodes");
    if (u == v) throw ContractError("self-loop on node " + std::to_string(u));
    if (!seen.insert(edge_key(u, v)).second)
      throw ContractError("edge (" + std::to_string(u) + "," + std::to_string(v) + ") listed twice");
    t.push_back({u, v, 1.0f});
    t.push_back({v, u, 1.0f});
  }
  return SparseMatrix::from_triplets(num_nodes, num_nodes, std::move(t));
}

Graph make_graph(std::string name, Tensor raw_features, const std::vector<Edge>& edges, std::vector<int> labels,
                 std::vector<std::uint8_t> train, std::vector<std::uint8_t> val, std::vector<std::uint8_t> test) {
  const std::size_t n = raw_features.rows();
  if (labels.size() != n || train.size() != n || val.size() != n || test.size() != n)
    throw ContractError("graph '" + name + "': labels/masks must have one entry per node");
  for (std::size_t i = 0; i < n; ++i)
    if (int(train[i] != 0) + int(val[i] != 0) + int(test[i] != 0) > 1)
      throw ContractError("graph '" + name + "': masks overlap at node " + std::to_string(i));
  for (int y : labels)
    if (y < 0) throw ContractError("graph '" + name + "': negative label");

  const std::size_t d = raw_features.cols();
  for (std::size_t i = 0; i < n; ++i) {
    float* row = raw_features.data() + i * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += row[j];
    if (s != 0.0)
      for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(row[j] / s);
  }

  Graph g;
  g.name = std::move(name);
  g.num_nodes = n;
  g.adjacency = adjacency_from_edges(n, edges);
  g.sparse_features = std::make_shared<const SparseMatrix>(SparseMatrix::from_dense(raw_features));
  g.features = std::move(raw_features);
  g.labels = std::move(labels);
  g.train_mask = std::move(train);
  g.val_mask = std::move(val);
  g.test_mask = std::move(test);
  return g;
}

Graph load_dataset(const std::filesystem::path& root, const std::string& name) {
  const auto dir = root / name;
  const auto labels_file = dir / "labels.csv";
  const auto masks_file = dir / "masks.csv";
  const auto edges_file = dir / "edges.csv";
  const auto features_file = dir / "features.f32";

  std::vector<int> labels;
  {
    const auto lines = read_lines(labels_file);
    labels.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto v = parse_ints(lines[i], labels_file, i + 1, 1)[0];
      if (v < 0) throw LoadError(labels_file.string(), i + 1, "negative label");
      labels.push_back(static_cast<int>(v));
    }
  }
  const std::size_t n = labels.size();
  if (n == 0) throw LoadError(labels_file.string(), 0, "no nodes");

  std::vector<std::uint8_t> train(n), val(n), test(n);
  {
    const auto lines = read_lines(masks_file);
    if (lines.size() != n)
      throw LoadError(masks_file.string(), lines.size(),
                      "has " + std::to_string(lines.size()) + " rows, labels.csv has " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto f = parse_ints(lines[i], masks_file, i + 1, 3);
      for (auto v : f)
        if (v != 0 && v != 1) throw LoadError(masks_file.string(), i + 1, "mask values must be 0 or 1");
      if (f[0] + f[1] + f[2] > 1) throw LoadError(masks_file.string(), i + 1, "node is in more than one split");
      train[i] = static_cast<std::uint8_t>(f[0]);
      val[i] = static_cast<std::uint8_t>(f[1]);
      test[i] = static_cast<std::uint8_t>(f[2]);
    }
  }

  std::vector<Edge> edges;
  {
    const auto lines = read_lines(edges_file);
    std::unordered_set<std::uint64_t> seen;
    edges.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto f = parse_ints(lines[i], edges_file, i + 1, 2);
      if (f[0] < 0 || f[1] < 0 || static_cast<std::size_t>(f[0]) >= n || static_cast<std::size_t>(f[1]) >= n)
        throw LoadError(edges_file.string(), i + 1, "node index out of range [0," + std::to_string(n) + ")");
      const auto u = static_cast<std::uint32_t>(f[0]);
      const auto v = static_cast<std::uint32_t>(f[1]);
      if (u == v) throw LoadError(edges_file.string(), i + 1, "self-loop");
      if (!seen.insert(edge_key(u, v)).second)
        throw LoadError(edges_file.string(), i + 1, "asymmetric edge list: pair already listed (in either direction)");
      edges.emplace_back(u, v);
    }
  }

  Tensor features;
  {
    std::ifstream in(features_file, std::ios::binary | std::ios::ate);
    if (!in) throw LoadError(features_file.string(), 0, "cannot open file");
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes == 0 || bytes % (4 * n) != 0)
      throw LoadError(features_file.string(), 0,
                      std::to_string(bytes) + " bytes is not a multiple of 4 x " + std::to_string(n) + " nodes");
    const std::size_t d = bytes / (4 * n);
    std::vector<float> data(n * d);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw LoadError(features_file.string(), 0, "short read");
    features = Tensor({n, d}, std::move(data));
  }

  return make_graph(name, std::move(features), edges, std::move(labels), std::move(train), std::move(val),
                    std::move(test));
}

void save_dataset(const Graph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "features.f32", std::ios::binary);
    out.write(reinterpret_cast<const char*>(g.features.data()),
              static_cast<std::streamsize>(g.features.numel() * sizeof(float)));
  }
  {
    std::ofstream out(dir / "edges.csv");
    for (const auto& [u, v] : g.undirected_edges()) out << u << ',' << v << '\n';
  }
  {
    std::ofstream out(dir / "labels.csv");
    for (int y : g.labels) out << y << '\n';
  }
  {
    std::ofstream out(dir / "masks.csv");
    for (std::size_t i = 0; i < g.num_nodes; ++i)
      out << int(g.train_mask[i]) << ',' << int(g.val_mask[i]) << ',' << int(g.test_mask[i]) << '\n';
  }
}

void validate_for_node_classification(const Graph& g) {
  std::set<int> present(g.labels.begin(), g.labels.end());
  std::set<int> trained;
  for (std::size_t i = 0; i < g.num_nodes; ++i)
    if (g.train_mask[i]) trained.insert(g.labels[i]);
  for (int c : present)
    if (!trained.count(c))
      throw ContractError("graph '" + g.name + "': class " + std::to_string(c) + " has no training node");
}

namespace {

// Adds unit self-loops and returns the degree of each node in A + I.
std::pair<std::vector<Triplet>, std::vector<double>> with_self_loops(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("adjacency must be square");
  std::vector<Triplet> t;
  std::vector<double> degree(a.rows(), 0.0);
  for (const auto& e : a.triplets()) {
    if (e.row == e.col) continue;
    t.push_back(e);
    degree[e.row] += e.value;
  }
  for (std::uint32_t i = 0; i < a.rows(); ++i) {
    t.push_back({i, i, 1.0f});
    degree[i] += 1.0;
  }
  return {std::move(t), std::move(degree)};
}

}  // namespace

SparseMatrix normalize_adjacency(const SparseMatrix& adjacency) {
  auto [t, degree] = with_self_loops(adjacency);
  for (auto& e : t) e.value = static_cast<float>(e.value / std::sqrt(degree[e.row] * degree[e.col]));
  return SparseMatrix::from_triplets(adjacency.rows(), adjacency.cols(), std::move(t));
}

SparseMatrix random_walk_normalize(const SparseMatrix& adjacency) {
  auto [t, degree] = with_self_loops(adjacency);
  for (auto& e : t) e.value = static_cast<float>(e.value / degree[e.row]);
  return SparseMatrix::from_triplets(adjacency.rows(), adjacency.cols(), std::move(t));
}

std::vector<std::uint32_t> LabeledEdges::sources() const {
  std::vector<std::uint32_t> s;
  s.reserve(pairs.size());
  for (const auto& p : pairs) s.push_back(p.first);
  return s;
}

std::vector<std::uint32_t> LabeledEdges::targets() const {
  std::vector<std::uint32_t> s;
  s.reserve(pairs.size());
  for (const auto& p : pairs) s.push_back(p.second);
  return s;
}

const LabeledEdges& LinkSplit::edges(Split split) const {
  return split == Split::Train ? train : split == Split::Val ? val : test;
}

LinkSplit split_edges_for_link_prediction(const Graph& g, std::uint64_t seed) {
  auto positives = g.undirected_edges();
  const std::size_t e = positives.size();
  const auto n_val = static_cast<std::size_t>(std::floor(kLinkValFraction * static_cast<double>(e)));
  const auto n_test = static_cast<std::size_t>(std::floor(kLinkTestFraction * static_cast<double>(e)));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= e)
    throw ContractError("graph '" + g.name + "' has " + std::to_string(e) +
                        " edges, too few for a 5%/10% link split");
  const std::size_t n = g.num_nodes;
  const double total_pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  if (total_pairs - static_cast<double>(e) < static_cast<double>(e))
    throw ContractError("graph '" + g.name + "' is too dense to sample as many non-edges as edges");

  std::mt19937_64 rng(seed);
  std::shuffle(positives.begin(), positives.end(), rng);

  std::unordered_set<std::uint64_t> taken;
  taken.reserve(2 * e);
  for (const auto& [u, v] : positives) taken.insert(edge_key(u, v));
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
  auto sample_negatives = [&](std::size_t count) {
    std::vector<Edge> out;
    out.reserve(count);
    while (out.size() < count) {
      std::uint32_t u = pick(rng), v = pick(rng);
      if (u == v) continue;
      if (!taken.insert(edge_key(u, v)).second) continue;
      out.emplace_back(std::min(u, v), std::max(u, v));
    }
    return out;
  };

  auto build = [&](std::size_t begin, std::size_t count) {
    LabeledEdges le;
    le.pairs.assign(positives.begin() + static_cast<std::ptrdiff_t>(begin),
                    positives.begin() + static_cast<std::ptrdiff_t>(begin + count));
    le.labels.assign(count, 1.0f);
    auto neg = sample_negatives(count);
    le.pairs.insert(le.pairs.end(), neg.begin(), neg.end());
    le.labels.insert(le.labels.end(), count, 0.0f);
    return le;
  };

  LinkSplit split;
  split.val = build(0, n_val);
  split.test = build(n_val, n_test);
  split.train = build(n_val + n_test, e - n_val - n_test);
  std::vector<Edge> train_pos(positives.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), positives.end());
  split.train_adjacency = adjacency_from_edges(n, train_pos);
  return split;
}

}  // namespace gnndiff
