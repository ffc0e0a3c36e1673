#include "gnndiff/search.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "gnndiff/error.hpp"
#include "gnndiff/rng.hpp"

namespace gnndiff {

namespace {

using Json = nlohmann::ordered_json;

enum : std::uint64_t { kInitStream = 1, kDropoutStream = 2, kCollectStream = 3, kSampleStream = 4 };

std::vector<AxisValue> numbers(std::initializer_list<double> xs) { return {xs.begin(), xs.end()}; }

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nan("");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nan("");
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

std::vector<AxisValue> window3(const Axis& axis, const AxisValue& chosen) {
  const auto it = std::find(axis.values.begin(), axis.values.end(), chosen);
  if (it == axis.values.end())
    throw ContractError("value " + to_string(chosen) + " is not on axis '" + axis.name + "'");
  if (axis.values.size() <= 3) return axis.values;
  const auto i = static_cast<std::ptrdiff_t>(it - axis.values.begin());
  const auto start = std::clamp<std::ptrdiff_t>(i - 1, 0, static_cast<std::ptrdiff_t>(axis.values.size()) - 3);
  return {axis.values.begin() + start, axis.values.begin() + start + 3};
}

Model fresh_model(const TrainRecipe& recipe, const TaskData& data, std::uint64_t seed) {
  ad::Rng init(derive_seed(seed, {kInitStream}));
  return Model(recipe.spec, data.inputs->feature_dim(), data.output_dim(recipe.spec), init);
}

}  // namespace

std::string to_string(const AxisValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, std::get<double>(v));
  return std::string(buf, r.ptr);
}

// ---- spaces -----------------------------------------------------------------

std::size_t SearchSpace::grid_size() const {
  std::size_t n = 1;
  for (const auto& a : axes) n *= a.values.size();
  return axes.empty() ? 0 : n;
}

const Axis* SearchSpace::find(const std::string& name) const {
  for (const auto& a : axes)
    if (a.name == name) return &a;
  return nullptr;
}

SearchSpace default_search_space(Arch arch, Task task) {
  SearchSpace s;
  s.axes = {
      {"optimizer", {std::string("SGD"), std::string("Adam")}, true},
      {"learning_rate", numbers({0.005, 0.01, 0.05, 0.1, 0.5, 1.0}), false},
      {"weight_decay", numbers({0.0005, 0.005, 0.05}), false},
      {"dropout", numbers({0.1, 0.3, 0.5, 0.7, 0.9}), false},
  };
  const Axis hidden{"hidden_size", numbers({16, 32, 64}), true};
  if (task == Task::NodeClassification) {
    switch (arch) {
      case Arch::MLP:
      case Arch::GCN: s.axes.push_back(hidden); break;
      case Arch::SGC: s.axes.push_back({"num_hops", numbers({1, 2, 3}), true}); break;
      case Arch::APPNP: s.axes.push_back({"teleport", numbers({0.1, 0.3, 0.5, 0.7, 0.9}), true}); break;
    }
  } else {
    switch (arch) {
      case Arch::MLP:
      case Arch::GCN: s.axes.push_back(hidden); break;
      case Arch::APPNP:
        s.axes.push_back(hidden);
        s.axes.push_back({"teleport", numbers({0.1, 0.5, 0.9}), true});
        break;
      case Arch::SGC: throw ContractError("no link-prediction search space is defined for SGC");
    }
  }
  return s;
}

// ---- configs ----------------------------------------------------------------

bool HyperConfig::has(const std::string& name) const {
  return std::any_of(values.begin(), values.end(), [&](const auto& kv) { return kv.first == name; });
}

const AxisValue& HyperConfig::get(const std::string& name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  throw ContractError("config has no axis '" + name + "'");
}

double HyperConfig::number(const std::string& name) const {
  const auto& v = get(name);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw ContractError("axis '" + name + "' is not numeric");
}

const std::string& HyperConfig::text(const std::string& name) const {
  const auto& v = get(name);
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw ContractError("axis '" + name + "' is not textual");
}

void HyperConfig::set(const std::string& name, AxisValue v) {
  for (auto& [k, old] : values)
    if (k == name) {
      old = std::move(v);
      return;
    }
  values.emplace_back(name, std::move(v));
}

std::string HyperConfig::key() const {
  std::string out;
  for (const auto& [k, v] : values) {
    if (!out.empty()) out += ' ';
    out += k + "=" + to_string(v);
  }
  return out;
}

std::vector<HyperConfig> enumerate_grid(const SearchSpace& space) {
  if (space.axes.empty()) throw ContractError("search space has no axes");
  for (const auto& a : space.axes)
    if (a.values.empty()) throw ContractError("axis '" + a.name + "' is empty");
  const std::size_t total = space.grid_size();
  std::vector<HyperConfig> out;
  out.reserve(total);
  std::vector<std::size_t> idx(space.axes.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    HyperConfig c;
    for (std::size_t a = 0; a < space.axes.size(); ++a) c.values.emplace_back(space.axes[a].name, space.axes[a].values[idx[a]]);
    out.push_back(std::move(c));
    for (std::size_t a = space.axes.size(); a-- > 0;) {
      if (++idx[a] < space.axes[a].values.size()) break;
      idx[a] = 0;
    }
  }
  return out;
}

std::vector<HyperConfig> sample_subspace(const SearchSpace& space, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("fraction must lie in (0,1]");
  auto grid = enumerate_grid(space);
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(grid.size()) + 1e-9));
  if (count == 0) throw ContractError("fraction selects zero configurations");
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  ad::Rng rng(derive_seed(seed, {kSampleStream}));
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<HyperConfig> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(grid[order[i]]);
  return out;
}

std::vector<HyperConfig> c2f_refine(const SearchSpace& space, const HyperConfig& coarse_best) {
  SearchSpace narrow{{}, space.schedule};
  for (const auto& axis : space.axes) {
    const auto& chosen = coarse_best.get(axis.name);
    Axis a{axis.name, {}, axis.model_related};
    if (axis.model_related)
      a.values = {chosen};
    else
      a.values = window3(axis, chosen);
    narrow.axes.push_back(std::move(a));
  }
  return enumerate_grid(narrow);
}

TrainRecipe resolve(const HyperConfig& config, const ModelSpec& base, const LrSchedule& schedule) {
  TrainRecipe r;
  r.spec = base;
  r.schedule = schedule;
  if (config.has("optimizer")) r.optimizer = parse_optimizer(config.text("optimizer"));
  if (config.has("learning_rate")) r.learning_rate = config.number("learning_rate");
  if (config.has("weight_decay")) r.weight_decay = config.number("weight_decay");
  if (config.has("dropout")) r.spec.dropout = config.number("dropout");
  if (config.has("hidden_size")) r.spec.hidden_size = static_cast<int>(config.number("hidden_size"));
  if (config.has("num_hops")) r.spec.num_hops = static_cast<int>(config.number("num_hops"));
  if (config.has("teleport")) r.spec.teleport = config.number("teleport");
  r.spec.validate();
  return r;
}

// ---- training ---------------------------------------------------------------

Tensor evaluate_output(const Model& model, const TaskData& data) {
  ad::Rng unused(0);
  return model.forward(*data.inputs, false, unused)->value;
}

RunOutcome train_model(Model& model, const TaskData& data, OptimizerKind optimizer, double lr, double wd,
                       const LrSchedule& schedule, int epochs, ad::Rng& dropout_rng,
                       const std::vector<ad::Var>* trainable) {
  const auto params = trainable ? *trainable : model.parameters();
  Optimizer opt(optimizer, params, lr, wd);
  RunOutcome out;
  out.best_val = -1.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto loss = data.loss(model.forward(*data.inputs, true, dropout_rng));
    const float l = loss->value[0];
    if (!std::isfinite(l)) {
      out.failed = true;
      break;
    }
    ad::backward(loss);
    loss.reset();
    opt.step(schedule.multiplier(epoch));

    const Tensor y = evaluate_output(model, data);
    if (!std::all_of(y.storage().begin(), y.storage().end(), [](float v) { return std::isfinite(v); })) {
      out.failed = true;
      break;
    }
    const double val = data.metric(y, Split::Val);
    if (val > out.best_val) {
      out.best_val = val;
      out.test_at_best = data.metric(y, Split::Test);
      out.best = model.snapshot();
    }
  }
  if (out.failed) {
    out.best_val = 0.0;
    out.test_at_best = 0.0;
  } else if (out.best.empty()) {
    out.best = model.snapshot();
    out.best_val = 0.0;
  }
  return out;
}

TrialResult run_trial(const HyperConfig& config, const TaskData& data, const ModelSpec& base,
                      const LrSchedule& schedule, const TrialOptions& options) {
  if (options.runs < 1) throw ContractError("a trial needs at least one run");
  const auto recipe = resolve(config, base, schedule);
  TrialResult r;
  r.config = config;
  for (int run = 0; run < options.runs; ++run) {
    const auto seed = run_seed(options.seed, static_cast<std::uint64_t>(run));
    Model model = fresh_model(recipe, data, seed);
    ad::Rng drop(derive_seed(seed, {kDropoutStream}));
    auto o = train_model(model, data, recipe.optimizer, recipe.learning_rate, recipe.weight_decay, recipe.schedule,
                         options.epochs, drop);
    if (o.failed) {
      r.failed = true;
      r.val.clear();
      r.test.clear();
      r.checkpoints.clear();
      break;
    }
    r.val.push_back(o.best_val);
    r.test.push_back(o.test_at_best);
    if (options.keep_checkpoints) r.checkpoints.push_back(std::move(o.best));
  }
  r.mean_val = r.failed ? 0.0 : mean_of(r.val);
  return r;
}

double TrialResult::mean_test() const { return mean_of(test); }
double TrialResult::std_test() const { return std_of(test); }

std::size_t select_best_index(const std::vector<TrialResult>& results) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].failed) continue;
    if (!best || results[i].mean_val > results[*best].mean_val) best = i;
  }
  if (!best) throw SelectionError(results.empty() ? "no trial results to select from" : "every trial failed");
  return *best;
}

HyperConfig select_best_config(const std::vector<TrialResult>& results) {
  return results[select_best_index(results)].config;
}

std::vector<TrialResult> run_search(const std::vector<HyperConfig>& configs, const TaskData& data,
                                    const ModelSpec& base, const LrSchedule& schedule, const TrialOptions& options,
                                    unsigned workers, const TrialCallback& on_done) {
  std::vector<TrialResult> results(configs.size());
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(configs.size(), 1)));

  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  std::exception_ptr error;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      try {
        results[i] = run_trial(configs[i], data, base, schedule, options);
        std::lock_guard lock(done_mutex);
        if (on_done) on_done(i, results[i]);
      } catch (...) {
        std::lock_guard lock(done_mutex);
        if (!error) error = std::current_exception();
        next = configs.size();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);
  return results;
}

// ---- checkpoint collection --------------------------------------------------

CheckpointSet collect_checkpoints(const HyperConfig& best, const TaskData& data, const ModelSpec& base_spec,
                                  const LrSchedule& schedule, const CollectOptions& options) {
  const auto recipe = resolve(best, base_spec, schedule);
  const auto seed = derive_seed(options.seed, {kCollectStream});
  Model base = fresh_model(recipe, data, seed);
  ad::Rng drop(derive_seed(seed, {kDropoutStream}));
  auto o = train_model(base, data, recipe.optimizer, recipe.learning_rate, recipe.weight_decay, recipe.schedule,
                       options.base_epochs, drop);
  if (o.failed) throw ContractError("base training for checkpoint collection diverged");
  base.restore(o.best);
  base.set_trainable(false);

  CheckpointSet set{{}, base.last_layer_layout(), base.clone(), best, {}, {}};
  for (int r = 0; r < options.runs; ++r) {
    Model m = base.clone();
    ad::Rng run_drop(derive_seed(seed, {kCollectStream, static_cast<std::uint64_t>(r)}));
    const auto last = m.last_layer_parameters();
    auto f = train_model(m, data, recipe.optimizer, options.finetune_lr, recipe.weight_decay, LrSchedule{},
                         options.finetune_epochs, run_drop, &last);
    if (f.failed) throw ContractError("checkpoint fine-tuning diverged");
    const Tensor y = evaluate_output(m, data);
    set.val.push_back(data.metric(y, Split::Val));
    set.test.push_back(data.metric(y, Split::Test));
    set.vectors.push_back(vectorize_last_layer(m).first);
  }
  return set;
}

double BaselineResult::best_mean() const {
  if (std::isnan(full_mean)) return finetune_mean;
  if (std::isnan(finetune_mean)) return full_mean;
  return std::max(full_mean, finetune_mean);
}

double BaselineResult::best_std() const {
  if (std::isnan(full_mean)) return finetune_std;
  if (std::isnan(finetune_mean)) return full_std;
  return full_mean >= finetune_mean ? full_std : finetune_std;
}

BaselineResult baseline_finetune_compare(const HyperConfig& best, const TaskData& data, const ModelSpec& base,
                                         const LrSchedule& schedule, int runs, std::uint64_t seed, int epochs) {
  const auto recipe = resolve(best, base, schedule);
  std::vector<double> full, tuned;
  for (int run = 0; run < runs; ++run) {
    const auto s = run_seed(seed, static_cast<std::uint64_t>(run));
    {
      Model m = fresh_model(recipe, data, s);
      ad::Rng drop(derive_seed(s, {kDropoutStream}));
      auto o = train_model(m, data, recipe.optimizer, recipe.learning_rate, recipe.weight_decay, recipe.schedule,
                           epochs, drop);
      if (!o.failed) full.push_back(o.test_at_best);
    }
    {
      Model m = fresh_model(recipe, data, s);
      ad::Rng drop(derive_seed(s, {kDropoutStream}));
      auto o = train_model(m, data, recipe.optimizer, recipe.learning_rate, recipe.weight_decay, recipe.schedule,
                           std::max(epochs - kCollectFinetuneEpochs, 1), drop);
      if (o.failed) continue;
      m.restore(o.best);
      m.set_trainable(false);
      const auto last = m.last_layer_parameters();
      auto f = train_model(m, data, recipe.optimizer, kCollectLearningRate, recipe.weight_decay, LrSchedule{},
                           kCollectFinetuneEpochs, drop, &last);
      if (!f.failed) tuned.push_back(f.test_at_best);
    }
  }
  return {mean_of(full), std_of(full), mean_of(tuned), std_of(tuned)};
}

// ---- records ----------------------------------------------------------------

std::string to_record_line(const TrialResult& r) {
  Json cfg = Json::object();
  for (const auto& [k, v] : r.config.values) {
    if (const auto* s = std::get_if<std::string>(&v))
      cfg[k] = *s;
    else
      cfg[k] = std::get<double>(v);
  }
  Json j;
  j["config"] = cfg;
  j["val"] = r.val;
  j["test"] = r.test;
  j["mean_val"] = r.mean_val;
  j["failed"] = r.failed;
  return j.dump();
}

TrialResult parse_record_line(const std::string& line) {
  const Json j = Json::parse(line);
  TrialResult r;
  for (const auto& [k, v] : j.at("config").items()) {
    if (v.is_string())
      r.config.values.emplace_back(k, v.get<std::string>());
    else
      r.config.values.emplace_back(k, v.get<double>());
  }
  r.val = j.at("val").get<std::vector<double>>();
  r.test = j.at("test").get<std::vector<double>>();
  r.mean_val = j.at("mean_val").get<double>();
  r.failed = j.at("failed").get<bool>();
  return r;
}

std::vector<TrialResult> read_records(const std::filesystem::path& file) {
  std::vector<TrialResult> out;
  std::ifstream in(file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record_line(line));
    } catch (const nlohmann::json::exception&) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw LoadError(file.string(), lineno, "malformed search record");
    }
  }
  return out;
}

}  // namespace gnndiff
