#include "gnndiff/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "gnndiff/error.hpp"
#include "gnndiff/gae.hpp"
#include "gnndiff/gldm.hpp"
#include "gnndiff/io.hpp"
#include "gnndiff/pae.hpp"
#include "gnndiff/rng.hpp"

namespace gnndiff {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string fmt_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw ContractError("setting '" + key + "' expects a number, got '" + s + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
    throw ContractError("setting '" + key + "' expects an integer, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ContractError("setting '" + key + "' expects a boolean, got '" + s + "'");
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  /// Part of the run fingerprint.
  bool result_affecting = true;
};

#define GD_INT(sec, name, member)                                                                             \
  Field {                                                                                                     \
    sec, name, [](const PipelineConfig& c) { return std::to_string(c.member); },                             \
        [](PipelineConfig& c, const std::string& k, const std::string& v) {                                   \
          c.member = static_cast<decltype(c.member)>(parse_int(k, v));                                        \
        }                                                                                                     \
  }
#define GD_DOUBLE(sec, name, member)                                                                          \
  Field {                                                                                                     \
    sec, name, [](const PipelineConfig& c) { return fmt_double(c.member); },                                  \
        [](PipelineConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"pipeline", "dataset", [](const PipelineConfig& c) { return c.dataset; },
       [](PipelineConfig& c, const std::string&, const std::string& v) { c.dataset = v; }},
      {"pipeline", "data_dir", [](const PipelineConfig& c) { return c.data_dir.string(); },
       [](PipelineConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }, false},
      {"pipeline", "out_dir", [](const PipelineConfig& c) { return c.out_dir.string(); },
       [](PipelineConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }, false},
      {"pipeline", "task", [](const PipelineConfig& c) { return to_string(c.task); },
       [](PipelineConfig& c, const std::string&, const std::string& v) { c.task = parse_task(v); }},
      {"pipeline", "arch", [](const PipelineConfig& c) { return to_string(c.arch); },
       [](PipelineConfig& c, const std::string&, const std::string& v) { c.arch = parse_arch(v); }},
      {"pipeline", "strategy", [](const PipelineConfig& c) { return to_string(c.strategy); },
       [](PipelineConfig& c, const std::string&, const std::string& v) { c.strategy = parse_strategy(v); }},
      {"pipeline", "seed", [](const PipelineConfig& c) { return std::to_string(c.seed); },
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(k, v));
       }},
      {"pipeline", "workers", [](const PipelineConfig& c) { return std::to_string(c.workers); },
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.workers = static_cast<unsigned>(parse_int(k, v));
       },
       false},
      {"pipeline", "zero_condition", [](const PipelineConfig& c) { return std::string(c.zero_condition ? "true" : "false"); },
       [](PipelineConfig& c, const std::string& k, const std::string& v) { c.zero_condition = parse_bool(k, v); }},
      GD_INT("search", "runs", runs),
      GD_INT("search", "epochs", epochs),
      GD_DOUBLE("search", "random_fraction", random_fraction),
      GD_DOUBLE("search", "coarse_fraction", coarse_fraction),
      GD_INT("model", "hidden_size", hidden_size),
      GD_INT("model", "propagation_steps", propagation_steps),
      GD_INT("collect", "base_epochs", collect_base_epochs),
      GD_INT("collect", "finetune_epochs", collect_finetune_epochs),
      GD_INT("collect", "runs", collect_runs),
      GD_DOUBLE("collect", "learning_rate", collect_lr),
      GD_INT("gae", "epochs", gae_epochs),
      GD_DOUBLE("gae", "learning_rate", gae_lr),
      GD_DOUBLE("gae", "weight_decay", gae_wd),
      GD_DOUBLE("gae", "dropout", gae_dropout),
      GD_INT("pae", "epochs", pae_epochs),
      GD_INT("pae", "batch", pae_batch),
      GD_DOUBLE("pae", "learning_rate", pae_lr),
      GD_DOUBLE("pae", "weight_decay", pae_wd),
      GD_INT("gldm", "epochs", gldm_epochs),
      GD_INT("gldm", "batch", gldm_batch),
      GD_DOUBLE("gldm", "learning_rate", gldm_lr),
      GD_DOUBLE("gldm", "weight_decay", gldm_wd),
      GD_INT("gldm", "steps", diffusion_steps),
      GD_DOUBLE("gldm", "beta_first", beta_first),
      GD_DOUBLE("gldm", "beta_last", beta_last),
      GD_INT("gldm", "samples", samples),
  };
  return table;
}

#undef GD_INT
#undef GD_DOUBLE

std::string fingerprint(const PipelineConfig& c) {
  std::string out;
  for (const auto& f : fields())
    if (f.result_affecting) out += std::string(f.section) + "." + f.key + "=" + f.get(c) + "\n";
  return out;
}

// ---- parameter bundles ------------------------------------------------------

std::vector<Tensor> values_of(const std::vector<ad::Var>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p->value);
  return out;
}

void assign(const std::vector<ad::Var>& params, const std::vector<Tensor>& values, const std::string& what) {
  if (params.size() != values.size())
    throw LoadError(what, 0, "holds " + std::to_string(values.size()) + " tensors, model has " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != values[i].shape())
      throw LoadError(what, 0, "tensor " + std::to_string(i) + " has shape " + shape_str(values[i].shape()));
    params[i]->value = values[i];
  }
}

Json config_json(const HyperConfig& c) {
  Json j = Json::object();
  for (const auto& [k, v] : c.values) {
    if (const auto* s = std::get_if<std::string>(&v))
      j[k] = *s;
    else
      j[k] = std::get<double>(v);
  }
  return j;
}

HyperConfig config_from_json(const Json& j) {
  HyperConfig c;
  for (const auto& [k, v] : j.items()) {
    if (v.is_string())
      c.values.emplace_back(k, v.get<std::string>());
    else
      c.values.emplace_back(k, v.get<double>());
  }
  return c;
}

std::string fixed(double v, int digits = 2) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- run state ----------------------------------------------------------------

struct RunState {
  const PipelineConfig& cfg;
  RunDirectory dir;
  const ProgressFn& progress;
  TaskData data;
  ModelSpec base_spec;
  SearchSpace space;
  RunReport report;
  bool chain_valid = true;
  std::map<std::string, double> seconds;
  std::map<std::string, double> previous;

  // stage products
  std::vector<TrialResult> results;
  std::size_t configs_evaluated = 0;
  HyperConfig selected;
  std::optional<CheckpointSet> checkpoints;
  std::vector<float> condition;
  std::optional<PaeModel> pae;
  Tensor latents;
  std::optional<Denoiser> denoiser;

  RunState(const PipelineConfig& c, const ProgressFn& p)
      : cfg(c), dir(c.out_dir, fingerprint(c)), progress(p) {
    if (!dir.resumed() || !fs::exists(dir.root() / "timings.json")) return;
    try {
      const auto j = Json::parse(dir.get_text("timings.json"));
      for (const auto& [k, v] : j.items()) previous[k] = v.get<double>();
    } catch (const nlohmann::json::exception&) {
      previous.clear();
    }
  }

  void note(const std::string& stage, const std::string& msg) const {
    if (progress) progress(stage, msg);
  }

  template <class Run, class Load>
  void stage(const std::string& name, Run run, Load load) {
    try {
      if (chain_valid && dir.stage_valid(name)) {
        note(name, "loading persisted artifacts");
        load();
        seconds[name] = previous.count(name) ? previous.at(name) : 0.0;
        return;
      }
      chain_valid = false;
      dir.invalidate_from(name);
      note(name, "running");
      const auto t0 = std::chrono::steady_clock::now();
      const std::vector<std::string> files = run();
      seconds[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      dir.complete_stage(name, files);
      note(name, "done in " + fixed(seconds[name], 1) + " s");
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  }
};

std::vector<HyperConfig> strategy_configs(const PipelineConfig& cfg, const SearchSpace& space) {
  switch (cfg.strategy) {
    case Strategy::Grid: return enumerate_grid(space);
    case Strategy::Random: return sample_subspace(space, cfg.random_fraction, cfg.seed);
    case Strategy::Coarse:
    case Strategy::C2F:
    case Strategy::GnnDiff: return sample_subspace(space, cfg.coarse_fraction, cfg.seed);
  }
  return {};
}

std::vector<std::string> run_search_stage(RunState& s) {
  const auto& cfg = s.cfg;
  const auto record_file = s.dir.root() / "search.jsonl";
  std::map<std::string, TrialResult> known;
  if (s.dir.resumed() && fs::exists(record_file))
    for (auto& r : read_records(record_file)) known.emplace(r.config.key(), std::move(r));
  else
    fs::remove(record_file);

  std::ofstream log(record_file, std::ios::app);
  const TrialOptions opts{cfg.runs, cfg.epochs, cfg.seed, false};
  auto evaluate = [&](const std::vector<HyperConfig>& configs) {
    std::vector<HyperConfig> todo;
    for (const auto& c : configs)
      if (!known.count(c.key())) todo.push_back(c);
    if (!todo.empty()) s.note("search", std::to_string(todo.size()) + " configurations to train");
    std::size_t done = 0;
    auto results = run_search(todo, s.data, s.base_spec, s.space.schedule, opts, cfg.workers,
                              [&](std::size_t, const TrialResult& r) {
                                log << to_record_line(r) << '\n' << std::flush;
                                ++done;
                                s.note("search", std::to_string(done) + "/" + std::to_string(todo.size()) + " " +
                                                     r.config.key() + " val " + fixed(r.mean_val * 100));
                              });
    for (auto& r : results) known.emplace(r.config.key(), std::move(r));
    std::vector<TrialResult> out;
    for (const auto& c : configs) out.push_back(known.at(c.key()));
    return out;
  };

  auto configs = strategy_configs(cfg, s.space);
  auto results = evaluate(configs);
  if (cfg.strategy == Strategy::C2F) {
    const auto coarse_best = select_best_config(results);
    std::set<std::string> seen;
    for (const auto& c : configs) seen.insert(c.key());
    for (const auto& c : c2f_refine(s.space, coarse_best))
      if (seen.insert(c.key()).second) configs.push_back(c);
    results = evaluate(configs);
  }
  log.close();

  s.results = std::move(results);
  s.configs_evaluated = s.results.size();
  s.selected = select_best_config(s.results);

  std::string lines;
  for (const auto& r : s.results) lines += to_record_line(r) + "\n";
  s.dir.put_text("search.jsonl", lines);
  Json sel;
  sel["configs"] = s.configs_evaluated;
  sel["config"] = config_json(s.selected);
  s.dir.put_text("selected.json", sel.dump(2) + "\n");
  return {"search.jsonl", "selected.json"};
}

void load_search_stage(RunState& s) {
  s.results = read_records(s.dir.root() / "search.jsonl");
  const auto sel = Json::parse(s.dir.get_text("selected.json"));
  s.configs_evaluated = sel.at("configs").get<std::size_t>();
  s.selected = config_from_json(sel.at("config"));
}

std::string method_name(Strategy st) { return st == Strategy::GnnDiff ? "coarse" : to_string(st); }

Model model_for(const RunState& s, const HyperConfig& config) {
  const auto recipe = resolve(config, s.base_spec, s.space.schedule);
  ad::Rng unused(0);
  return Model(recipe.spec, s.data.inputs->feature_dim(), s.data.output_dim(recipe.spec), unused);
}

}  // namespace

// ---- public helpers -----------------------------------------------------------

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Grid: return "grid";
    case Strategy::Random: return "random";
    case Strategy::Coarse: return "coarse";
    case Strategy::C2F: return "c2f";
    case Strategy::GnnDiff: return "gnn-diff";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "grid") return Strategy::Grid;
  if (s == "random") return Strategy::Random;
  if (s == "coarse") return Strategy::Coarse;
  if (s == "c2f") return Strategy::C2F;
  if (s == "gnn-diff" || s == "gnndiff") return Strategy::GnnDiff;
  throw ContractError("unknown strategy '" + name + "'");
}

std::string PipelineConfig::canonical() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(*this) + "\n";
  }
  return out;
}

void PipelineConfig::validate() const {
  if (dataset.empty()) throw ContractError("dataset name is empty");
  if (runs < 1 || epochs < 1) throw ContractError("search needs runs >= 1 and epochs >= 1");
  if (!(random_fraction > 0 && random_fraction <= 1) || !(coarse_fraction > 0 && coarse_fraction <= 1))
    throw ContractError("search fractions must lie in (0,1]");
  if (collect_runs < 1 || collect_base_epochs < 1 || collect_finetune_epochs < 0)
    throw ContractError("collection needs at least one run and one base epoch");
  if (gae_epochs < 0 || pae_epochs < 0 || gldm_epochs < 0) throw ContractError("epoch counts must be non-negative");
  if (pae_batch < 1 || gldm_batch < 1) throw ContractError("batch sizes must be positive");
  if (samples < 1) throw ContractError("samples must be positive");
  if (hidden_size < 1 || propagation_steps < 1) throw ContractError("model sizes must be positive");
}

void apply_setting(PipelineConfig& config, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  const Field* match = nullptr;
  int matches = 0;
  for (const auto& f : fields()) {
    const bool hit = dot == std::string::npos ? key == f.key : key == std::string(f.section) + "." + f.key;
    if (hit) {
      match = &f;
      ++matches;
    }
  }
  if (matches == 0) throw ContractError("unknown setting '" + key + "'");
  if (matches > 1) throw ContractError("setting '" + key + "' is ambiguous; qualify it with its section");
  match->set(config, key, value);
}

PipelineConfig load_config(const fs::path& file, PipelineConfig base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(file.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw LoadError(file.string(), e.line(), e.message());
  }
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      apply_setting(base, name, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) apply_setting(base, name + "." + key, leaf.data());
  }
  return base;
}

void apply_fast_mode(PipelineConfig& config) { config.runs = 3; }

const MethodRow* RunReport::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.method == name) return &m;
  return nullptr;
}

std::string RunReport::to_text() const {
  std::ostringstream out;
  out << "dataset   " << dataset << "\n";
  out << "task      " << to_string(task) << "\n";
  out << "arch      " << to_string(arch) << "\n";
  out << "strategy  " << to_string(strategy) << (zero_condition ? " (zero condition)" : "") << "\n";
  out << "selected  " << selected.key() << "\n\n";
  out << "method      configs  runs  test mean  test std\n";
  for (const auto& m : methods) {
    char line[128];
    std::snprintf(line, sizeof line, "%-10s  %7zu  %4d  %9s  %8s\n", m.method.c_str(), m.configs, m.runs,
                  fixed(m.mean * 100).c_str(), fixed(m.std * 100).c_str());
    out << line;
  }
  if (!reconstruction.empty()) {
    out << "\ncheckpoint  val (orig)  val (decoded)  rel mse\n";
    for (const auto& r : reconstruction) {
      char line[128];
      std::snprintf(line, sizeof line, "%10zu  %10s  %13s  %.3e\n", r.index, fixed(r.original_val * 100).c_str(),
                    fixed(r.decoded_val * 100).c_str(), r.relative_mse);
      out << line;
    }
  }
  if (!samples.empty()) {
    out << "\nsample   val     test\n";
    for (const auto& s : samples) {
      char line[96];
      std::snprintf(line, sizeof line, "%6zu  %6s  %6s%s\n", s.index, fixed(s.val * 100).c_str(),
                    fixed(s.test * 100).c_str(), chosen_sample && *chosen_sample == s.index ? "  <- selected" : "");
      out << line;
    }
  }
  return out.str();
}

std::string RunReport::to_jsonl() const {
  std::string out;
  auto emit = [&](const Json& j) { out += j.dump() + "\n"; };
  emit({{"type", "run"},
        {"dataset", dataset},
        {"task", to_string(task)},
        {"arch", to_string(arch)},
        {"strategy", to_string(strategy)},
        {"zero_condition", zero_condition},
        {"selected", config_json(selected)}});
  for (const auto& m : methods)
    emit({{"type", "method"}, {"method", m.method}, {"mean", m.mean}, {"std", m.std}, {"runs", m.runs}, {"configs", m.configs}});
  for (const auto& r : reconstruction)
    emit({{"type", "reconstruction"},
          {"index", r.index},
          {"original_val", r.original_val},
          {"decoded_val", r.decoded_val},
          {"relative_mse", r.relative_mse}});
  for (const auto& s : samples)
    emit({{"type", "sample"},
          {"index", s.index},
          {"val", s.val},
          {"test", s.test},
          {"selected", chosen_sample && *chosen_sample == s.index}});
  return out;
}

std::size_t select_by_validation(std::span<const double> val) {
  if (val.empty()) throw ContractError("no samples to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val.size(); ++i)
    if (val[i] > val[best]) best = i;
  return best;
}

SampleSelection select_and_report(const std::vector<std::pair<double, double>>& samples) {
  std::vector<double> val;
  val.reserve(samples.size());
  for (const auto& [v, t] : samples) val.push_back(v);
  const auto i = select_by_validation(val);
  return {i, samples[i].second};
}

// ---- pipeline ------------------------------------------------------------------

RunReport run_pipeline(const PipelineConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  RunState s(cfg, progress);
  s.dir.put_text("config.ini", cfg.canonical());

  std::shared_ptr<const Graph> graph;
  try {
    graph = std::make_shared<const Graph>(load_dataset(cfg.data_dir, cfg.dataset));
    s.space = default_search_space(cfg.arch, cfg.task);
    if (cfg.task == Task::NodeClassification) {
      validate_for_node_classification(*graph);
      s.data = make_node_task(graph);
    } else {
      auto split = std::make_shared<const LinkSplit>(split_edges_for_link_prediction(*graph, cfg.seed));
      s.data = make_link_task(graph, split);
    }
  } catch (const std::exception& e) {
    throw StageError("load", e.what());
  }
  s.base_spec = ModelSpec{cfg.arch, cfg.task, cfg.hidden_size, 0.5, 2, 0.1, cfg.propagation_steps};

  RunReport& rep = s.report;
  rep.dataset = cfg.dataset;
  rep.task = cfg.task;
  rep.arch = cfg.arch;
  rep.strategy = cfg.strategy;
  rep.zero_condition = cfg.zero_condition;

  s.stage("search", [&] { return run_search_stage(s); }, [&] { load_search_stage(s); });
  rep.selected = s.selected;

  BaselineResult baseline;
  s.stage(
      "baseline",
      [&] {
        baseline = baseline_finetune_compare(s.selected, s.data, s.base_spec, s.space.schedule, cfg.runs, cfg.seed,
                                             cfg.epochs);
        Json j{{"full_mean", baseline.full_mean},
               {"full_std", baseline.full_std},
               {"finetune_mean", baseline.finetune_mean},
               {"finetune_std", baseline.finetune_std}};
        s.dir.put_text("baseline.json", j.dump(2) + "\n");
        return std::vector<std::string>{"baseline.json"};
      },
      [&] {
        const auto j = Json::parse(s.dir.get_text("baseline.json"));
        auto num = [&](const char* k) { return j.at(k).is_null() ? std::nan("") : j.at(k).get<double>(); };
        baseline = {num("full_mean"), num("full_std"), num("finetune_mean"), num("finetune_std")};
      });
  rep.methods.push_back({method_name(cfg.strategy), baseline.best_mean(), baseline.best_std(), cfg.runs,
                         s.configs_evaluated});

  if (cfg.strategy == Strategy::GnnDiff) {
    s.stage(
        "collect",
        [&] {
          CollectOptions co{cfg.collect_base_epochs, cfg.collect_finetune_epochs, cfg.collect_runs, cfg.collect_lr,
                            cfg.seed};
          s.checkpoints.emplace(collect_checkpoints(s.selected, s.data, s.base_spec, s.space.schedule, co));
          std::vector<Tensor> vs;
          for (const auto& v : s.checkpoints->vectors) vs.emplace_back(Shape{v.size()}, v.values);
          s.dir.put_tensors("checkpoints", vs);
          s.dir.put_tensors("base_model", s.checkpoints->base.snapshot());
          Json j{{"val", s.checkpoints->val}, {"test", s.checkpoints->test}};
          s.dir.put_text("collect.json", j.dump(2) + "\n");
          return std::vector<std::string>{"checkpoints.f32", "base_model.f32", "collect.json"};
        },
        [&] {
          Model base = model_for(s, s.selected);
          base.restore(s.dir.get_tensors("base_model"));
          base.set_trainable(false);
          const auto j = Json::parse(s.dir.get_text("collect.json"));
          CheckpointSet set{{}, base.last_layer_layout(), base.clone(), s.selected,
                            j.at("val").get<std::vector<double>>(), j.at("test").get<std::vector<double>>()};
          for (const auto& t : s.dir.get_tensors("checkpoints")) set.vectors.push_back({t.storage()});
          s.checkpoints.emplace(std::move(set));
        });

    const auto& set = *s.checkpoints;
    const std::size_t latent_dim = pae_latent_dim(set.layout.total());

    s.stage(
        "gae",
        [&] {
          GaeOptions go{cfg.gae_epochs, cfg.gae_lr, cfg.gae_wd, static_cast<float>(cfg.gae_dropout), cfg.seed};
          const auto gae = gae_train(s.data, latent_dim, go);
          const Tensor eta = cfg.task == Task::NodeClassification ? gae_encode(gae, *s.data.inputs)
                                                                  : gae_encode_link(gae, *s.data.inputs);
          s.condition = graph_condition(eta);
          s.dir.put_tensor("condition", Tensor({latent_dim}, s.condition));
          return std::vector<std::string>{"condition.f32"};
        },
        [&] { s.condition = s.dir.get_tensor("condition").storage(); });

    s.stage(
        "pae",
        [&] {
          PaeOptions po{cfg.pae_epochs, static_cast<std::size_t>(cfg.pae_batch), cfg.pae_lr, cfg.pae_wd, cfg.seed};
          s.pae.emplace(pae_train(set.vectors, po));
          s.latents = pae_encode_batch(*s.pae, set.vectors);
          s.dir.put_tensors("pae", values_of(s.pae->parameters()));
          s.dir.put_tensor("pae_mean", Tensor({s.pae->input_dim}, s.pae->mean));
          s.dir.put_tensor("pae_scale", Tensor({s.pae->input_dim}, s.pae->scale));
          s.dir.put_tensor("latents", s.latents);

          const auto decoded = pae_decode_batch(*s.pae, s.latents);
          Json rows = Json::array();
          for (std::size_t i = 0; i < decoded.size(); ++i) {
            const Model m = devectorize(decoded[i], set.layout, set.base);
            const double val = s.data.metric(evaluate_output(m, s.data), Split::Val);
            double num = 0.0, den = 0.0;
            for (std::size_t j = 0; j < decoded[i].size(); ++j) {
              const double d = decoded[i].values[j] - set.vectors[i].values[j];
              num += d * d;
              den += static_cast<double>(set.vectors[i].values[j]) * set.vectors[i].values[j];
            }
            rows.push_back({{"index", i}, {"original_val", set.val[i]}, {"decoded_val", val},
                            {"relative_mse", den > 0 ? num / den : num}});
          }
          s.dir.put_text("reconstruction.json", rows.dump(2) + "\n");
          return std::vector<std::string>{"pae.f32", "pae_mean.f32", "pae_scale.f32", "latents.f32",
                                          "reconstruction.json"};
        },
        [&] {
          ad::Rng unused(0);
          PaeModel m = pae_init(set.layout.total(), unused);
          assign(m.parameters(), s.dir.get_tensors("pae"), "pae.f32");
          m.mean = s.dir.get_tensor("pae_mean").storage();
          m.scale = s.dir.get_tensor("pae_scale").storage();
          s.pae.emplace(std::move(m));
          s.latents = s.dir.get_tensor("latents");
        });
    for (const auto& r : Json::parse(s.dir.get_text("reconstruction.json")))
      rep.reconstruction.push_back({r.at("index").get<std::size_t>(), r.at("original_val").get<double>(),
                                    r.at("decoded_val").get<double>(), r.at("relative_mse").get<double>()});

    const auto schedule = build_schedule(cfg.diffusion_steps, cfg.beta_first, cfg.beta_last);
    std::vector<float> cond = s.condition;
    if (cfg.zero_condition) std::fill(cond.begin(), cond.end(), 0.0f);

    s.stage(
        "gldm",
        [&] {
          GldmOptions go{cfg.gldm_epochs, static_cast<std::size_t>(cfg.gldm_batch), cfg.gldm_lr, cfg.gldm_wd, cfg.seed};
          s.denoiser.emplace(gldm_train(s.latents, cond, schedule, go));
          s.dir.put_tensors("denoiser", values_of(s.denoiser->parameters()));
          return std::vector<std::string>{"denoiser.f32"};
        },
        [&] {
          ad::Rng unused(0);
          Denoiser d = denoiser_init(latent_dim, unused);
          assign(d.parameters(), s.dir.get_tensors("denoiser"), "denoiser.f32");
          s.denoiser.emplace(std::move(d));
        });

    s.stage(
        "sample",
        [&] {
          const Tensor z = gldm_sample(*s.denoiser, cond, schedule, static_cast<std::size_t>(cfg.samples),
                                       derive_seed(cfg.seed, {0x5a3}));
          const auto vectors = pae_decode_batch(*s.pae, z);
          Json rows = Json::array();
          for (std::size_t i = 0; i < vectors.size(); ++i) {
            bool finite = std::all_of(vectors[i].values.begin(), vectors[i].values.end(),
                                      [](float v) { return std::isfinite(v); });
            double val = 0.0, test = 0.0;
            if (finite) {
              const Model m = devectorize(vectors[i], set.layout, set.base);
              const Tensor y = evaluate_output(m, s.data);
              val = s.data.metric(y, Split::Val);
              test = s.data.metric(y, Split::Test);
            }
            rows.push_back({{"index", i}, {"val", val}, {"test", test}});
          }
          s.dir.put_tensor("samples", z);
          s.dir.put_text("samples.json", rows.dump(2) + "\n");
          return std::vector<std::string>{"samples.f32", "samples.json"};
        },
        [] {});

    std::vector<std::pair<double, double>> pairs;
    for (const auto& r : Json::parse(s.dir.get_text("samples.json"))) {
      rep.samples.push_back({r.at("index").get<std::size_t>(), r.at("val").get<double>(), r.at("test").get<double>()});
      pairs.emplace_back(rep.samples.back().val, rep.samples.back().test);
    }
    const auto chosen = select_and_report(pairs);
    rep.chosen_sample = chosen.index;
    rep.methods.push_back({"gnn-diff", chosen.test, 0.0, 1, s.configs_evaluated});
  }

  rep.seconds = s.seconds;
  s.dir.put_text("report.txt", rep.to_text());
  s.dir.put_text("report.jsonl", rep.to_jsonl());
  Json t = Json::object();
  for (const auto& [k, v] : rep.seconds) t[k] = v;
  s.dir.put_text("timings.json", t.dump(2) + "\n");
  return rep;
}

}  // namespace gnndiff
