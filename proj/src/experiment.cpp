#include "lpn/experiment.hpp"

#include "lpn/errors.hpp"
#include "lpn/io.hpp"
#include "lpn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>

namespace lpn {

using nlohmann::json;

namespace {

const std::vector<std::pair<ExperimentKind, std::string>> kKindNames = {
    {ExperimentKind::Boundary, "boundary"},
    {ExperimentKind::BayesDim, "bayes-dim"},
    {ExperimentKind::PSweep, "p-sweep"},
    {ExperimentKind::AlphaSweep, "alpha-sweep"},
    {ExperimentKind::ProbeSilhouette, "probe-silhouette"},
    {ExperimentKind::Projection, "projection"},
};

const std::vector<std::string> kAllSettings = {"none", "1", "2", "inf", "learnable"};

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames) {
    if (name == text) return k;
  }
  throw ConfigError("experiment", "unknown experiment kind '" + text +
                                      "' (expected boundary, bayes-dim, p-sweep, alpha-sweep, probe-silhouette or projection)");
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.train.epochs = 500;
  cfg.train.batch_size = 32;
  cfg.train.eval_epochs = {100, 250, 500};
  cfg.settings = kAllSettings;
  switch (kind) {
    case ExperimentKind::ProbeSilhouette:
      cfg.train.epochs = 50;
      cfg.train.eval_epochs = {50};
      break;
    case ExperimentKind::Projection:
      cfg.settings = {"1", "2", "inf"};
      break;
    default:
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void reject_unknown(const json& obj, const std::string& prefix, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(prefix, "expected an object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return item.key() == a; });
    if (!known) throw ConfigError(join_key(prefix, item.key()), "unknown key");
  }
}

long long get_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
  return v.get<long long>();
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

/// Strings pass through; numbers are rendered so "2" and 2 mean the same.
std::string get_token(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number()) return format_double(v.get<double>());
  throw ConfigError(key, "expected a string or a number");
}

std::vector<int> get_int_list(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(static_cast<int>(get_int(v[i], key + "[" + std::to_string(i) + "]")));
  }
  return out;
}

std::vector<std::string> get_token_list(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(key, "expected an array");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(get_token(v[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

template <typename F>
auto wrap_domain(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const DomainError& e) {
    throw ConfigError(key, e.what());
  }
}

std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.string();
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("syntax error: ") + e.what());
  }
  reject_unknown(root, "", {"experiment", "seed", "trials", "output_dir", "data", "model", "norm", "train", "eval"});
  if (!root.contains("experiment")) throw ConfigError("experiment", "missing required key");
  ExperimentConfig cfg = default_config(parse_experiment_kind(get_string(root["experiment"], "experiment")));

  if (root.contains("seed")) {
    const auto& s = root["seed"];
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      throw ConfigError("seed", "expected a nonnegative integer");
    }
    cfg.seed = s.get<std::uint64_t>();
  }
  if (root.contains("trials")) cfg.trials = static_cast<int>(get_int(root["trials"], "trials"));
  if (root.contains("output_dir")) cfg.output_dir = get_string(root["output_dir"], "output_dir");

  if (root.contains("data")) {
    const json& d = root["data"];
    reject_unknown(d, "data", {"train_per_class", "val_per_class", "train_csv", "val_csv"});
    if (d.contains("train_per_class")) cfg.train_per_class = static_cast<int>(get_int(d["train_per_class"], "data.train_per_class"));
    if (d.contains("val_per_class")) cfg.val_per_class = static_cast<int>(get_int(d["val_per_class"], "data.val_per_class"));
    if (d.contains("train_csv")) cfg.train_csv = resolve_path(get_string(d["train_csv"], "data.train_csv"), base_dir);
    if (d.contains("val_csv")) cfg.val_csv = resolve_path(get_string(d["val_csv"], "data.val_csv"), base_dir);
  }

  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown(m, "model", {"hidden_width", "penultimate_dim", "dims", "probe_hidden"});
    if (m.contains("hidden_width")) cfg.hidden_width = static_cast<int>(get_int(m["hidden_width"], "model.hidden_width"));
    if (m.contains("penultimate_dim")) cfg.penultimate_dim = static_cast<int>(get_int(m["penultimate_dim"], "model.penultimate_dim"));
    if (m.contains("dims")) cfg.dims = get_int_list(m["dims"], "model.dims");
    if (m.contains("probe_hidden")) cfg.probe_hidden = get_int_list(m["probe_hidden"], "model.probe_hidden");
  }

  bool settings_given = false;
  if (root.contains("norm")) {
    const json& n = root["norm"];
    reject_unknown(n, "norm", {"enabled", "p", "alpha", "epsilon", "settings", "alphas"});
    if (n.contains("enabled")) cfg.norm_enabled = get_bool(n["enabled"], "norm.enabled");
    if (n.contains("p")) {
      const std::string tok = get_token(n["p"], "norm.p");
      cfg.p = wrap_domain("norm.p", [&] { return NormOrder::parse(tok); });
    }
    if (n.contains("alpha")) {
      const std::string tok = get_token(n["alpha"], "norm.alpha");
      cfg.alpha = wrap_domain("norm.alpha", [&] { return RadiusParam::parse(tok); });
    }
    if (n.contains("epsilon")) cfg.epsilon = get_number(n["epsilon"], "norm.epsilon");
    if (n.contains("settings")) {
      cfg.settings = get_token_list(n["settings"], "norm.settings");
      settings_given = true;
      for (std::size_t i = 0; i < cfg.settings.size(); ++i) {
        if (cfg.settings[i] != "none") {
          const std::string key = "norm.settings[" + std::to_string(i) + "]";
          cfg.settings[i] = wrap_domain(key, [&] { return NormOrder::parse(cfg.settings[i]).to_string(); });
        }
      }
    }
    if (n.contains("alphas")) {
      cfg.alphas.clear();
      const auto toks = get_token_list(n["alphas"], "norm.alphas");
      for (std::size_t i = 0; i < toks.size(); ++i) {
        const std::string key = "norm.alphas[" + std::to_string(i) + "]";
        cfg.alphas.push_back(wrap_domain(key, [&] { return RadiusParam::parse(toks[i]); }));
      }
    }
  }
  if (!cfg.norm_enabled) {
    if (settings_given && std::any_of(cfg.settings.begin(), cfg.settings.end(), [](const auto& s) { return s != "none"; })) {
      throw ConfigError("norm.settings", "normalized settings listed while norm.enabled is false");
    }
    cfg.settings = {"none"};
  }

  bool eval_given = false;
  if (root.contains("train")) {
    const json& t = root["train"];
    reject_unknown(t, "train", {"epochs", "batch_size", "optimizer", "lr", "beta1", "beta2", "eps", "eval_epochs", "shuffle"});
    if (t.contains("epochs")) cfg.train.epochs = static_cast<int>(get_int(t["epochs"], "train.epochs"));
    if (t.contains("batch_size")) cfg.train.batch_size = static_cast<int>(get_int(t["batch_size"], "train.batch_size"));
    if (t.contains("optimizer")) {
      const std::string opt = get_string(t["optimizer"], "train.optimizer");
      if (opt == "adam") {
        cfg.train.optimizer.kind = OptimizerConfig::Kind::Adam;
      } else if (opt == "sgd") {
        cfg.train.optimizer.kind = OptimizerConfig::Kind::Sgd;
      } else {
        throw ConfigError("train.optimizer", "expected adam or sgd, got '" + opt + "'");
      }
    }
    if (t.contains("lr")) cfg.train.optimizer.lr = get_number(t["lr"], "train.lr");
    if (t.contains("beta1")) cfg.train.optimizer.beta1 = get_number(t["beta1"], "train.beta1");
    if (t.contains("beta2")) cfg.train.optimizer.beta2 = get_number(t["beta2"], "train.beta2");
    if (t.contains("eps")) cfg.train.optimizer.eps = get_number(t["eps"], "train.eps");
    if (t.contains("eval_epochs")) {
      cfg.train.eval_epochs = get_int_list(t["eval_epochs"], "train.eval_epochs");
      eval_given = true;
    }
    if (t.contains("shuffle")) cfg.train.shuffle = get_bool(t["shuffle"], "train.shuffle");
  }
  if (!eval_given) {
    std::vector<int> kept;
    for (int e : cfg.train.eval_epochs) {
      if (e < cfg.train.epochs) kept.push_back(e);
    }
    kept.push_back(cfg.train.epochs);
    cfg.train.eval_epochs = kept;
  }

  if (root.contains("eval")) {
    const json& e = root["eval"];
    reject_unknown(e, "eval", {"bayes_samples", "curve_stride", "curve_samples", "grid_resolution", "bounds"});
    if (e.contains("bayes_samples")) cfg.bayes_samples = get_int(e["bayes_samples"], "eval.bayes_samples");
    if (e.contains("curve_stride")) cfg.curve_stride = static_cast<int>(get_int(e["curve_stride"], "eval.curve_stride"));
    if (e.contains("curve_samples")) cfg.curve_samples = get_int(e["curve_samples"], "eval.curve_samples");
    if (e.contains("grid_resolution")) cfg.grid_resolution = static_cast<int>(get_int(e["grid_resolution"], "eval.grid_resolution"));
    if (e.contains("bounds")) {
      const json& b = e["bounds"];
      if (!b.is_array() || b.size() != 4) throw ConfigError("eval.bounds", "expected [xmin, xmax, ymin, ymax]");
      cfg.bounds = {get_number(b[0], "eval.bounds[0]"), get_number(b[1], "eval.bounds[1]"),
                    get_number(b[2], "eval.bounds[2]"), get_number(b[3], "eval.bounds[3]")};
    }
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("", "config file '" + path.string() + "' does not exist");
  return parse_config_json(read_file(path), path.parent_path());
}

void ExperimentConfig::validate() const {
  if (trials < 1) throw ConfigError("trials", "must be >= 1");
  if (train_per_class < 1) throw ConfigError("data.train_per_class", "must be >= 1");
  if (val_per_class < 1) throw ConfigError("data.val_per_class", "must be >= 1");
  if (!val_csv.empty() && train_csv.empty()) throw ConfigError("data.val_csv", "requires data.train_csv");
  if (hidden_width < 1) throw ConfigError("model.hidden_width", "must be >= 1");
  if (penultimate_dim < 1) throw ConfigError("model.penultimate_dim", "must be >= 1");
  if (dims.empty()) throw ConfigError("model.dims", "must not be empty");
  for (int d : dims) {
    if (d < 1) throw ConfigError("model.dims", "entries must be >= 1");
  }
  if (probe_hidden.empty()) throw ConfigError("model.probe_hidden", "must not be empty");
  for (int h : probe_hidden) {
    if (h < 0) throw ConfigError("model.probe_hidden", "entries must be >= 0");
  }
  if (!(epsilon > 0.0)) throw ConfigError("norm.epsilon", "must be positive");
  if (settings.empty()) throw ConfigError("norm.settings", "must not be empty");
  if (alphas.empty()) throw ConfigError("norm.alphas", "must not be empty");
  try {
    train.validate();
  } catch (const DomainError& e) {
    throw ConfigError("train", e.what());
  }
  if (train.batch_size < 0) throw ConfigError("train.batch_size", "must be >= 0");
  if (bayes_samples < 1000) throw ConfigError("eval.bayes_samples", "must be >= 1000");
  if (curve_stride < 1) throw ConfigError("eval.curve_stride", "must be >= 1");
  if (curve_samples < 1000) throw ConfigError("eval.curve_samples", "must be >= 1000");
  if (grid_resolution < 2) throw ConfigError("eval.grid_resolution", "must be >= 2");
  if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin)) throw ConfigError("eval.bounds", "empty box");

  const bool synthetic = train_csv.empty();
  switch (kind) {
    case ExperimentKind::Boundary:
    case ExperimentKind::BayesDim:
      if (!synthetic) throw ConfigError("data.train_csv", to_string(kind) + " needs the synthetic mixture (Bayes reference)");
      break;
    case ExperimentKind::AlphaSweep:
    case ExperimentKind::ProbeSilhouette:
      if (!norm_enabled) throw ConfigError("norm.enabled", to_string(kind) + " requires normalization");
      break;
    case ExperimentKind::Projection:
      if (!norm_enabled) throw ConfigError("norm.enabled", "projection requires normalization");
      if (penultimate_dim != 2) throw ConfigError("model.penultimate_dim", "projection scatter plots need a 2-D representation");
      if (std::find(settings.begin(), settings.end(), "none") != settings.end()) {
        throw ConfigError("norm.settings", "projection has no meaning without normalization");
      }
      break;
    case ExperimentKind::PSweep:
      break;
  }
}

json ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = to_string(kind);
  j["seed"] = seed;
  j["trials"] = trials;
  j["output_dir"] = output_dir;
  j["data"] = {{"train_per_class", train_per_class}, {"val_per_class", val_per_class}, {"train_csv", train_csv},
               {"val_csv", val_csv}};
  j["model"] = {{"hidden_width", hidden_width}, {"penultimate_dim", penultimate_dim}, {"dims", dims},
                {"probe_hidden", probe_hidden}};
  std::vector<std::string> alpha_names;
  for (const auto& a : alphas) alpha_names.push_back(a.to_string());
  j["norm"] = {{"enabled", norm_enabled}, {"p", p.to_string()},     {"alpha", alpha.to_string()},
               {"epsilon", epsilon},      {"settings", settings}, {"alphas", alpha_names}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"optimizer", train.optimizer.kind == OptimizerConfig::Kind::Adam ? "adam" : "sgd"},
                {"lr", train.optimizer.lr},
                {"beta1", train.optimizer.beta1},
                {"beta2", train.optimizer.beta2},
                {"eps", train.optimizer.eps},
                {"eval_epochs", train.eval_epochs},
                {"shuffle", train.shuffle}};
  j["eval"] = {{"bayes_samples", bayes_samples},
               {"curve_stride", curve_stride},
               {"curve_samples", curve_samples},
               {"grid_resolution", grid_resolution},
               {"bounds", {bounds.xmin, bounds.xmax, bounds.ymin, bounds.ymax}}};
  return j;
}

std::uint64_t trial_seed(std::uint64_t master, int trial) { return derive_seed(master, static_cast<std::uint64_t>(trial)); }

SummaryStat summarize(const std::vector<double>& values) {
  SummaryStat s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  double total = 0.0;
  for (double v : values) total += v;
  s.mean = total / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.ci95 = 1.96 * std::sqrt(ss / (s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

json Manifest::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["seeds"] = seeds;
  j["files"] = files;
  json summ = json::object();
  for (const auto& [key, stat] : summary) summ[key] = {{"mean", stat.mean}, {"ci95", stat.ci95}, {"n", stat.n}};
  j["summary"] = summ;
  return j;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

/// Records every file written below the output root.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {}

  void write(const std::string& rel, std::string_view bytes) {
    write_file_atomic(root_ / rel, bytes);
    remember(rel);
  }
  void write_checkpoint(const std::string& rel, const Classifier& model) {
    save_checkpoint(model, root_ / rel);
    remember(rel);
  }
  /// Registers a file written by some other writer.
  void adopt(const std::string& rel) { remember(rel); }
  std::vector<std::string> files() const {
    std::lock_guard lock(mu_);
    return {files_.begin(), files_.end()};
  }
  const std::filesystem::path& root() const { return root_; }

 private:
  void remember(const std::string& rel) {
    std::lock_guard lock(mu_);
    files_.insert(rel);
  }
  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::set<std::string> files_;
};

struct TrialData {
  std::uint64_t seed = 0;
  Dataset train;
  std::optional<Dataset> val;
};

struct Context {
  ExperimentConfig cfg;
  std::filesystem::path out;
  int jobs = 1;
  std::vector<TrialData> trials;
  bool synthetic = true;
  GmmSpec mixture = poc_spec();
  std::function<void(const std::string&)> log;
  std::mutex log_mu;

  void say(const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mu);
    log(msg);
  }
  const GmmSpec* bayes() const { return synthetic ? &mixture : nullptr; }
};

std::string setting_tag(const std::string& setting) { return setting == "none" ? "none" : "p" + setting; }

std::optional<NormConfig> norm_for(const Context& ctx, const std::string& setting, const RadiusParam& alpha) {
  if (setting == "none") return std::nullopt;
  return NormConfig{NormOrder::parse(setting), alpha, ctx.cfg.epsilon};
}

void prepare(Context& ctx, const ExperimentConfig& cfg, const RunOptions& opts, OutputDir*& out_holder,
             std::unique_ptr<OutputDir>& out_owner) {
  ctx.cfg = cfg;
  if (opts.seed) ctx.cfg.seed = *opts.seed;
  ctx.out = opts.out_dir.empty() ? std::filesystem::path(cfg.output_dir) : opts.out_dir;
  ctx.cfg.output_dir = ctx.out.string();
  ctx.jobs = std::max(1, opts.jobs);
  ctx.log = opts.log;
  ctx.cfg.validate();

  namespace fs = std::filesystem;
  if (fs::exists(ctx.out) && !fs::is_empty(ctx.out)) {
    if (!opts.overwrite) {
      throw ConfigError("output_dir", "'" + ctx.out.string() + "' is not empty (use --overwrite to replace it)");
    }
    fs::remove_all(ctx.out);
  }
  fs::create_directories(ctx.out);
  out_owner = std::make_unique<OutputDir>(ctx.out);
  out_holder = out_owner.get();

  ctx.synthetic = ctx.cfg.train_csv.empty();
  std::optional<Dataset> csv_train;
  std::optional<Dataset> csv_val;
  if (!ctx.synthetic) {
    try {
      csv_train = read_dataset_csv(ctx.cfg.train_csv);
      if (!ctx.cfg.val_csv.empty()) csv_val = read_dataset_csv(ctx.cfg.val_csv);
    } catch (const std::exception& e) {
      throw ConfigError("data", e.what());
    }
  }
  for (int t = 0; t < ctx.cfg.trials; ++t) {
    TrialData td;
    td.seed = trial_seed(ctx.cfg.seed, t);
    if (ctx.synthetic) {
      td.train = sample(ctx.mixture, ctx.cfg.train_per_class, derive_seed(td.seed, 1));
      td.val = sample(ctx.mixture, ctx.cfg.val_per_class, derive_seed(td.seed, 2));
      const std::string stem = "data/trial" + std::to_string(t);
      write_dataset_csv(td.train, ctx.out / (stem + "_train.csv"));
      write_dataset_csv(*td.val, ctx.out / (stem + "_val.csv"));
      out_holder->adopt(stem + "_train.csv");
      out_holder->adopt(stem + "_val.csv");
    } else {
      td.train = *csv_train;
      td.val = csv_val;
    }
    ctx.trials.push_back(std::move(td));
  }
}

TrainConfig cell_train_config(const Context& ctx, const TrialData& td) {
  TrainConfig tc = ctx.cfg.train;
  tc.seed = derive_seed(td.seed, 4);
  return tc;
}

std::uint64_t init_seed(const TrialData& td) { return derive_seed(td.seed, 3); }
std::uint64_t deviation_seed(const TrialData& td) { return derive_seed(td.seed, 5); }

/// Trains one model, writes its run CSV and fills the common metrics.
struct TrainedCell {
  CellResult result;
  std::optional<Classifier> model;
};

TrainedCell train_cell(Context& ctx, OutputDir& out, const TrialData& td, int trial, const std::string& setting,
                       int dim, const std::string& tag, ClassifierSpec spec, std::int64_t deviation_samples,
                       std::vector<int> extra_deviation_epochs,
                       const std::function<void(int, const Classifier&, CellResult&)>& on_checkpoint = {}) {
  TrainedCell cell;
  cell.result.trial = trial;
  cell.result.setting = setting;
  cell.result.dim = dim;
  cell.model.emplace(std::move(spec));

  TrainObservers obs;
  obs.validation = td.val ? &*td.val : nullptr;
  obs.bayes_reference = ctx.bayes();
  obs.deviation_samples = deviation_samples;
  obs.deviation_seed = deviation_seed(td);
  obs.extra_deviation_epochs = std::move(extra_deviation_epochs);
  if (on_checkpoint) {
    obs.on_checkpoint = [&](int epoch, const Classifier& m) { on_checkpoint(epoch, m, cell.result); };
  }
  cell.result.record = train(*cell.model, td.train, cell_train_config(ctx, td), obs);
  out.write("runs/" + tag + ".csv", cell.result.record.to_csv());

  const EpochLog& last = cell.result.record.epochs.back();
  cell.result.metrics["final_train_loss"] = last.train_loss;
  cell.result.metrics["final_train_acc"] = last.train_acc;
  if (last.val_acc) cell.result.metrics["final_val_acc"] = *last.val_acc;
  if (last.bayes_dev) cell.result.metrics["bayes_dev"] = *last.bayes_dev;
  if (last.p_decoded) cell.result.metrics["p_decoded"] = *last.p_decoded;
  if (last.alpha_decoded) cell.result.metrics["alpha_decoded"] = *last.alpha_decoded;
  for (const auto& e : cell.result.record.epochs) {
    if (e.bayes_dev) cell.result.deviation[e.epoch] = *e.bayes_dev;
  }
  ctx.say("trained " + tag + " (" + format_double(cell.result.record.wall_seconds) + " s)");
  return cell;
}

std::string opt_field(const std::map<std::string, double>& m, const std::string& key) {
  auto it = m.find(key);
  return it == m.end() ? std::string() : format_double(it->second);
}

ExperimentResult finish(Context& ctx, OutputDir& out, std::vector<CellResult> cells,
                        const std::map<std::string, std::vector<double>>& groups) {
  ExperimentResult result;
  Manifest& m = result.manifest;
  m.config = ctx.cfg.to_json();
  json hashed = m.config;
  hashed.erase("output_dir");
  m.config_hash = fnv1a_hex(hashed.dump());
  for (const auto& td : ctx.trials) m.seeds.push_back(td.seed);
  for (const auto& [key, values] : groups) m.summary[key] = summarize(values);
  m.files = out.files();
  write_file_atomic(ctx.out / "manifest.json", m.to_json().dump(2) + "\n");
  result.cells = std::move(cells);
  return result;
}

/// Runs `plans` cells on the worker pool and returns results in plan order.
template <typename Plan, typename Fn>
std::vector<CellResult> run_cells(Context& ctx, const std::vector<Plan>& plans, Fn&& fn) {
  std::vector<CellResult> results(plans.size());
  parallel_for(plans.size(), ctx.jobs, [&](std::size_t i) { results[i] = fn(plans[i]); });
  return results;
}

struct SettingPlan {
  int trial;
  std::string setting;
  int dim;
};

std::vector<SettingPlan> setting_plans(const Context& ctx, const std::vector<int>& dims) {
  std::vector<SettingPlan> plans;
  for (int t = 0; t < ctx.cfg.trials; ++t) {
    for (int d : dims) {
      for (const auto& s : ctx.cfg.settings) plans.push_back({t, s, d});
    }
  }
  return plans;
}

std::string trial_tag(const std::string& base, int trial) { return base + "_trial" + std::to_string(trial); }

}  // namespace

ExperimentResult run_boundary_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  Context ctx;
  OutputDir* out = nullptr;
  std::unique_ptr<OutputDir> owner;
  prepare(ctx, cfg_in, opts, out, owner);
  const auto& cfg = ctx.cfg;

  const ClassGrid bayes_grid = decision_grid(bayes_predictor(ctx.mixture), cfg.bounds, cfg.grid_resolution);
  out->write("grids/bayes.pgm", pgm_bytes(bayes_grid, 2));

  const auto plans = setting_plans(ctx, {cfg.penultimate_dim});
  auto cells = run_cells(ctx, plans, [&](const SettingPlan& plan) {
    const TrialData& td = ctx.trials[static_cast<std::size_t>(plan.trial)];
    const std::string tag = trial_tag(setting_tag(plan.setting), plan.trial);
    auto spec = poc_classifier_spec(plan.dim, norm_for(ctx, plan.setting, cfg.alpha), init_seed(td), cfg.hidden_width);
    auto on_ckpt = [&](int epoch, const Classifier& model, CellResult& r) {
      const std::string name = tag + "_epoch" + std::to_string(epoch);
      const ClassGrid grid = decision_grid(model, cfg.bounds, cfg.grid_resolution);
      out->write("grids/" + name + ".pgm", pgm_bytes(grid, model.spec().num_classes));
      out->write_checkpoint("checkpoints/" + name + ".lpn", model);
      r.grid_disagreement[epoch] = grid_disagreement(grid, bayes_grid);
    };
    return train_cell(ctx, *out, td, plan.trial, plan.setting, plan.dim, tag, spec, cfg.bayes_samples, {}, on_ckpt)
        .result;
  });

  std::ostringstream csv;
  csv << "trial,setting,epoch,bayes_dev,grid_disagreement\n";
  std::map<std::string, std::vector<double>> groups;
  for (const auto& c : cells) {
    for (int e : cfg.train.eval_epochs) {
      const double dev = c.deviation.at(e);
      const double gd = c.grid_disagreement.at(e);
      csv << c.trial << ',' << c.setting << ',' << e << ',' << format_double(dev) << ',' << format_double(gd) << '\n';
      const std::string key = c.setting + "/epoch" + std::to_string(e);
      groups[key + "/bayes_dev"].push_back(dev);
      groups[key + "/grid_disagreement"].push_back(gd);
    }
  }
  out->write("boundary.csv", csv.str());
  return finish(ctx, *out, std::move(cells), groups);
}

ExperimentResult run_bayes_dim_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  Context ctx;
  OutputDir* out = nullptr;
  std::unique_ptr<OutputDir> owner;
  prepare(ctx, cfg_in, opts, out, owner);
  const auto& cfg = ctx.cfg;

  std::vector<int> curve_epochs;
  for (int e = cfg.curve_stride; e <= cfg.train.epochs; e += cfg.curve_stride) curve_epochs.push_back(e);

  const auto plans = setting_plans(ctx, cfg.dims);
  auto cells = run_cells(ctx, plans, [&](const SettingPlan& plan) {
    const TrialData& td = ctx.trials[static_cast<std::size_t>(plan.trial)];
    const std::string tag = trial_tag("d" + std::to_string(plan.dim) + "_" + setting_tag(plan.setting), plan.trial);
    auto spec = poc_classifier_spec(plan.dim, norm_for(ctx, plan.setting, cfg.alpha), init_seed(td), cfg.hidden_width);
    return train_cell(ctx, *out, td, plan.trial, plan.setting, plan.dim, tag, spec, cfg.curve_samples, curve_epochs)
        .result;
  });

  std::ostringstream csv;
  csv << "trial,dim,setting,epoch,bayes_dev\n";
  std::map<std::string, std::vector<double>> groups;
  for (const auto& c : cells) {
    for (const auto& [epoch, dev] : c.deviation) {
      csv << c.trial << ',' << c.dim << ',' << c.setting << ',' << epoch << ',' << format_double(dev) << '\n';
      if (std::find(cfg.train.eval_epochs.begin(), cfg.train.eval_epochs.end(), epoch) != cfg.train.eval_epochs.end()) {
        groups["d" + std::to_string(c.dim) + "/" + c.setting + "/epoch" + std::to_string(epoch) + "/bayes_dev"].push_back(dev);
      }
    }
  }
  out->write("bayes_dim.csv", csv.str());
  return finish(ctx, *out, std::move(cells), groups);
}

namespace {

void add_silhouettes(const Classifier& model, const Dataset& data, CellResult& r) {
  const auto snap = representation_snapshot(model, data);
  r.metrics["silhouette_norm"] = silhouette(snap.normalized, snap.labels).overall;
  r.metrics["silhouette_raw"] = silhouette(snap.raw, snap.labels).overall;
}

const std::vector<std::string> kSweepMetrics = {"final_train_loss", "final_train_acc", "final_val_acc", "bayes_dev",
                                                "silhouette_norm",  "silhouette_raw",  "p_decoded",     "alpha_decoded"};

std::string sweep_csv(const std::vector<CellResult>& cells, std::map<std::string, std::vector<double>>& groups) {
  std::ostringstream csv;
  csv << "trial,setting";
  for (const auto& m : kSweepMetrics) csv << ',' << m;
  csv << '\n';
  for (const auto& c : cells) {
    csv << c.trial << ',' << c.setting;
    for (const auto& m : kSweepMetrics) {
      csv << ',' << opt_field(c.metrics, m);
      if (auto it = c.metrics.find(m); it != c.metrics.end()) groups[c.setting + "/" + m].push_back(it->second);
    }
    csv << '\n';
  }
  return csv.str();
}

}  // namespace

ExperimentResult run_sweep(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  if (cfg_in.kind == ExperimentKind::Boundary || cfg_in.kind == ExperimentKind::BayesDim) {
    throw ConfigError("experiment", "run_sweep does not handle " + to_string(cfg_in.kind));
  }
  Context ctx;
  OutputDir* out = nullptr;
  std::unique_ptr<OutputDir> owner;
  prepare(ctx, cfg_in, opts, out, owner);
  const auto& cfg = ctx.cfg;
  const int input_dim = static_cast<int>(ctx.trials.front().train.dim());
  const int num_classes = std::max(2, ctx.trials.front().train.num_classes());

  auto generic_spec = [&](int dim, std::optional<NormConfig> norm, const TrialData& td) {
    ClassifierSpec spec = poc_classifier_spec(dim, std::move(norm), init_seed(td), cfg.hidden_width);
    spec.input_dim = input_dim;
    spec.num_classes = num_classes;
    return spec;
  };
  auto eval_data = [](const TrialData& td) -> const Dataset& { return td.val ? *td.val : td.train; };

  std::map<std::string, std::vector<double>> groups;
  std::vector<CellResult> cells;

  switch (cfg.kind) {
    case ExperimentKind::PSweep: {
      const auto plans = setting_plans(ctx, {cfg.penultimate_dim});
      cells = run_cells(ctx, plans, [&](const SettingPlan& plan) {
        const TrialData& td = ctx.trials[static_cast<std::size_t>(plan.trial)];
        const std::string tag = trial_tag(setting_tag(plan.setting), plan.trial);
        auto cell = train_cell(ctx, *out, td, plan.trial, plan.setting, plan.dim, tag,
                               generic_spec(plan.dim, norm_for(ctx, plan.setting, cfg.alpha), td), cfg.bayes_samples, {});
        add_silhouettes(*cell.model, eval_data(td), cell.result);
        return cell.result;
      });
      out->write("p_sweep.csv", sweep_csv(cells, groups));
      break;
    }
    case ExperimentKind::AlphaSweep: {
      struct Plan {
        int trial;
        RadiusParam alpha;
      };
      std::vector<Plan> plans;
      for (int t = 0; t < cfg.trials; ++t) {
        for (const auto& a : cfg.alphas) plans.push_back({t, a});
      }
      cells = run_cells(ctx, plans, [&](const Plan& plan) {
        const TrialData& td = ctx.trials[static_cast<std::size_t>(plan.trial)];
        const std::string setting = "alpha=" + plan.alpha.to_string();
        const std::string tag = trial_tag("alpha" + plan.alpha.to_string(), plan.trial);
        NormConfig norm{cfg.p, plan.alpha, cfg.epsilon};
        auto cell = train_cell(ctx, *out, td, plan.trial, setting, cfg.penultimate_dim, tag,
                               generic_spec(cfg.penultimate_dim, norm, td), cfg.bayes_samples, {});
        add_silhouettes(*cell.model, eval_data(td), cell.result);
        return cell.result;
      });
      out->write("alpha_sweep.csv", sweep_csv(cells, groups));
      break;
    }
    case ExperimentKind::ProbeSilhouette: {
      struct Plan {
        int trial;
        int hidden;
      };
      std::vector<Plan> plans;
      for (int t = 0; t < cfg.trials; ++t) {
        for (int h : cfg.probe_hidden) plans.push_back({t, h});
      }
      cells = run_cells(ctx, plans, [&](const Plan& plan) {
        const TrialData& td = ctx.trials[static_cast<std::size_t>(plan.trial)];
        const std::string tag = trial_tag("hidden" + std::to_string(plan.hidden), plan.trial);
        NormConfig norm{cfg.p, cfg.alpha, cfg.epsilon};
        ClassifierSpec spec = probe_classifier_spec(plan.hidden, input_dim, norm, init_seed(td), num_classes);
        auto cell = train_cell(ctx, *out, td, plan.trial, "hidden=" + std::to_string(plan.hidden), plan.hidden, tag,
                               spec, cfg.bayes_samples, {});
        add_silhouettes(*cell.model, eval_data(td), cell.result);
        return cell.result;
      });
      std::ostringstream csv;
      csv << "trial,hidden,silhouette_norm,silhouette_raw,final_val_acc,final_train_loss\n";
      for (const auto& c : cells) {
        csv << c.trial << ',' << c.dim << ',' << opt_field(c.metrics, "silhouette_norm") << ','
            << opt_field(c.metrics, "silhouette_raw") << ',' << opt_field(c.metrics, "final_val_acc") << ','
            << opt_field(c.metrics, "final_train_loss") << '\n';
        for (const char* m : {"silhouette_norm", "silhouette_raw", "final_val_acc", "final_train_loss"}) {
          if (auto it = c.metrics.find(m); it != c.metrics.end()) {
            groups["hidden" + std::to_string(c.dim) + "/" + m].push_back(it->second);
          }
        }
      }
      out->write("probe_silhouette.csv", csv.str());
      break;
    }
    case ExperimentKind::Projection: {
      const auto plans = setting_plans(ctx, {cfg.penultimate_dim});
      cells = run_cells(ctx, plans, [&](const SettingPlan& plan) {
        const TrialData& td = ctx.trials[static_cast<std::size_t>(plan.trial)];
        const std::string tag = trial_tag(setting_tag(plan.setting), plan.trial);
        auto cell = train_cell(ctx, *out, td, plan.trial, plan.setting, plan.dim, tag,
                               generic_spec(plan.dim, norm_for(ctx, plan.setting, cfg.alpha), td), cfg.bayes_samples, {});
        const Classifier& model = *cell.model;
        const auto snap = representation_snapshot(model, td.train);
        out->write("projection/" + tag + ".csv", snapshot_csv(snap));
        const double extent = 1.1 * std::max(1.0, model.norm()->alpha());
        const Bounds box{-extent, extent, -extent, extent};
        out->write("projection/" + tag + "_raw.ppm", scatter_ppm_bytes(snap.raw, snap.labels, box));
        out->write("projection/" + tag + "_norm.ppm", scatter_ppm_bytes(snap.normalized, snap.labels, box));

        const double p = model.norm()->p();
        const double alpha = model.norm()->alpha();
        double radius_err = 0.0;
        double l2_err = 0.0;
        for (Eigen::Index i = 0; i < snap.normalized.rows(); ++i) {
          const Eigen::VectorXd row = snap.normalized.row(i).transpose();
          radius_err = std::max(radius_err, std::abs(lp_norm(row, p) - alpha));
          l2_err = std::max(l2_err, std::abs(row.norm() - alpha));
        }
        cell.result.metrics["max_radius_error"] = radius_err;
        cell.result.metrics["max_l2_radius_error"] = l2_err;
        add_silhouettes(model, td.train, cell.result);
        return cell.result;
      });
      std::ostringstream csv;
      csv << "trial,setting,final_val_acc,silhouette_norm,silhouette_raw,max_radius_error,max_l2_radius_error\n";
      for (const auto& c : cells) {
        csv << c.trial << ',' << c.setting;
        for (const char* m : {"final_val_acc", "silhouette_norm", "silhouette_raw", "max_radius_error", "max_l2_radius_error"}) {
          csv << ',' << opt_field(c.metrics, m);
          if (auto it = c.metrics.find(m); it != c.metrics.end()) groups[c.setting + "/" + m].push_back(it->second);
        }
        csv << '\n';
      }
      out->write("projection.csv", csv.str());
      break;
    }
    default:
      break;
  }
  return finish(ctx, *out, std::move(cells), groups);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  switch (cfg.kind) {
    case ExperimentKind::Boundary:
      return run_boundary_experiment(cfg, opts);
    case ExperimentKind::BayesDim:
      return run_bayes_dim_experiment(cfg, opts);
    default:
      return run_sweep(cfg, opts);
  }
}

}  // namespace lpn
