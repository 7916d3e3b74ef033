#include "daash/config.hpp"

#include "daash/error.hpp"
#include "daash/io.hpp"
#include "daash/rng.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

namespace daash {
namespace {

using KeyValues = std::map<std::string, std::string>;

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  const long long v = parse_int(s, what);
  if (v < 0) throw ConfigError(what + " must be non-negative");
  return static_cast<std::uint64_t>(v);
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(what + ": expected a boolean, got '" + s + "'");
}

// Flattens "[section] key = value" into "section.key" and rejects unknown keys.
class Reader {
 public:
  explicit Reader(const std::string& text) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [name, node] : tree) {
      if (node.empty()) {
        kv_[name] = trim(node.data());
        continue;
      }
      for (const auto& [key, leaf] : node) {
        if (!leaf.empty()) throw ConfigError("config: nested key '" + name + "." + key + "'");
        kv_[name + "." + key] = trim(leaf.data());
      }
    }
  }

  const std::string* find(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  void number(const std::string& key, double& out) {
    if (auto* v = find(key)) out = parse_double(*v, key);
  }
  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (auto* v = find(key)) out = static_cast<Int>(parse_int(*v, key));
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (auto* v = find(key)) out = parse_u64(*v, key);
  }
  void boolean(const std::string& key, bool& out) {
    if (auto* v = find(key)) out = parse_bool(*v, key);
  }

  /// Keys under "prefix." not yet consumed, with the prefix stripped.
  KeyValues section(const std::string& prefix) {
    KeyValues out;
    for (const auto& [k, v] : kv_) {
      if (k.starts_with(prefix + ".")) {
        out[k.substr(prefix.size() + 1)] = v;
        used_.insert(k);
      }
    }
    return out;
  }

  std::set<std::string> sections_with_prefix(const std::string& prefix) const {
    std::set<std::string> out;
    for (const auto& [k, v] : kv_) {
      if (!k.starts_with(prefix)) continue;
      const auto dot = k.find('.', prefix.size());
      if (dot != std::string::npos) out.insert(k.substr(prefix.size(), dot - prefix.size()));
    }
    return out;
  }

  void reject_unused() const {
    for (const auto& [k, v] : kv_) {
      if (!used_.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
    }
  }

 private:
  KeyValues kv_;
  std::set<std::string> used_;
};

const std::set<std::string> kAttackKeys{"eps",  "steps", "step_size", "decay",    "diversity_prob", "resize_min",
                                        "kernel", "cw_c", "cw_kappa", "cw_lr"};

AttackSpec pool_attack(Reader& r, const std::string& name, const std::string* shared_eps) {
  const AttackKind kind = parse_attack_kind(name);
  KeyValues kv{{"kind", name}};
  if (shared_eps && is_linf(kind)) kv["eps"] = *shared_eps;
  for (const auto& [k, v] : r.section("attack." + name)) {
    if (!kAttackKeys.contains(k)) throw ConfigError("config: unknown key 'attack." + name + "." + k + "'");
    kv[k] = v;
  }
  if (kind == AttackKind::Fgsm && kv.contains("eps") && !kv.contains("step_size")) kv["step_size"] = kv["eps"];
  return parse_attack_spec(kv, "");
}

std::uint64_t model_seed_of(const std::string& id) {
  const auto dash = id.find('-');
  if (dash == std::string::npos) throw ConfigError("malformed model id '" + id + "'");
  return parse_u64(id.substr(dash + 1), "model id '" + id + "'");
}

}  // namespace

AttackSpec ExperimentConfig::at_default_pgd() {
  AttackSpec s = default_attack(AttackKind::Pgd);
  s.steps = 7;
  return s;
}

ExperimentConfig::ExperimentConfig() {
  for (DefenseKind k : {DefenseKind::Jpeg, DefenseKind::Tvm, DefenseKind::Ensemble}) {
    DefenseSpec d;
    d.kind = k;
    defenses.push_back(d);
  }
}

void ExperimentConfig::validate() const {
  if (dataset.classes < 2) throw ConfigError("dataset.classes must be at least 2");
  if (dataset.train_size < 1 || dataset.test_size < 1) throw ConfigError("dataset split sizes must be positive");
  if (dataset.kind == DatasetKind::Cifar10Binary) {
    if (dataset.path.empty()) throw ConfigError("dataset.path is required for cifar10");
    if (!std::filesystem::exists(dataset.path)) throw ConfigError("dataset file not found: " + dataset.path.string());
    if (!dataset.test_path.empty() && !std::filesystem::exists(dataset.test_path)) {
      throw ConfigError("dataset file not found: " + dataset.test_path.string());
    }
  }
  model.validate();
  if (model.classes != dataset.classes || model.channels != dataset.channels || model.height != dataset.height ||
      model.width != dataset.width) {
    throw ConfigError("model input shape or class count does not match the dataset");
  }
  if (train.epochs < 0 || train.batch_size < 1 || !(train.lr > 0.0)) {
    throw ConfigError("model: epochs >= 0, batch_size >= 1 and lr > 0 required");
  }
  if (model_seeds.empty()) throw ConfigError("model.seeds is empty");
  if (std::set(model_seeds.begin(), model_seeds.end()).size() != model_seeds.size()) {
    throw ConfigError("model.seeds has duplicates");
  }
  if (!train_standard && !train_adversarial) throw ConfigError("no model kind enabled");
  if (adversarial_pgd.kind != AttackKind::Pgd) throw ConfigError("adversarial training needs a pgd attack");
  adversarial_pgd.validate();
  search_config().validate();
  const auto ids = model_ids();
  auto known = [&](const std::string& id) { return std::find(ids.begin(), ids.end(), id) != ids.end(); };
  if (!known(search_model)) throw ConfigError("search.model '" + search_model + "' is not a configured model");
  for (const auto& id : transfer_models) {
    if (!known(id)) throw ConfigError("ablate.transfer_models: '" + id + "' is not a configured model");
  }
  if (search_samples < 1 || eval_samples < 1) throw ConfigError("sample counts must be positive");
  for (const auto& d : defenses) d.validate();
  if (ablate_stages.empty()) throw ConfigError("ablate.stages is empty");
  for (int n : ablate_stages) {
    if (n < 1) throw ConfigError("ablate.stages entries must be >= 1");
  }
  if (random_draws < 1) throw ConfigError("ablate.random_draws must be positive");
  if (!(random_lo <= random_hi)) throw ConfigError("ablate.random_lo must not exceed random_hi");
  if (out_dir.empty()) throw ConfigError("output.dir is empty");
}

std::vector<std::string> ExperimentConfig::model_ids() const {
  std::vector<std::string> ids;
  for (auto s : model_seeds) {
    if (train_standard) ids.push_back("std-" + std::to_string(s));
    if (train_adversarial) ids.push_back("at-" + std::to_string(s));
  }
  return ids;
}

DatasetSource ExperimentConfig::dataset_source() const {
  DatasetSource d = dataset;
  d.seed = mix_seed(seed, "dataset");
  return d;
}

TrainConfig ExperimentConfig::train_config(const std::string& model_id) const {
  TrainConfig t = train;
  t.seed = mix_seed(mix_seed(seed, "model"), model_seed_of(model_id));
  return t;
}

SearchConfig ExperimentConfig::search_config() const {
  SearchConfig s = search;
  s.seed = mix_seed(seed, "search");
  return s;
}

SearchConfig ExperimentConfig::search_config(int stages) const {
  SearchConfig s = search_config();
  s.stages = stages;
  return s;
}

std::uint64_t ExperimentConfig::baseline_salt() const { return mix_seed(seed, "baseline"); }

ExperimentConfig parse_experiment_config(const std::string& text) {
  Reader r(text);
  ExperimentConfig c;
  r.u64("seed", c.seed);

  if (auto* kind = r.find("dataset.kind")) {
    if (*kind == "synthetic") c.dataset.kind = DatasetKind::Synthetic;
    else if (*kind == "cifar10") c.dataset.kind = DatasetKind::Cifar10Binary;
    else throw ConfigError("dataset.kind: unknown '" + *kind + "'");
  }
  if (auto* p = r.find("dataset.path")) c.dataset.path = *p;
  if (auto* p = r.find("dataset.test_path")) c.dataset.test_path = *p;
  r.integer("dataset.classes", c.dataset.classes);
  r.integer("dataset.channels", c.dataset.channels);
  r.integer("dataset.height", c.dataset.height);
  r.integer("dataset.width", c.dataset.width);
  r.integer("dataset.train_size", c.dataset.train_size);
  r.integer("dataset.test_size", c.dataset.test_size);

  if (auto* arch = r.find("model.arch")) {
    if (*arch == "small-cnn") c.model.arch = Arch::SmallCnn;
    else if (*arch == "mlp") c.model.arch = Arch::Mlp;
    else throw ConfigError("model.arch: unknown '" + *arch + "'");
  }
  if (auto* h = r.find("model.hidden")) {
    c.model.hidden.clear();
    for (const auto& item : split_list(*h)) c.model.hidden.push_back(parse_int(item, "model.hidden"));
  }
  r.integer("model.conv1", c.model.conv1);
  r.integer("model.conv2", c.model.conv2);
  r.integer("model.kernel", c.model.kernel);
  c.model.classes = c.dataset.classes;
  c.model.channels = c.dataset.channels;
  c.model.height = c.dataset.height;
  c.model.width = c.dataset.width;
  r.integer("model.epochs", c.train.epochs);
  r.number("model.lr", c.train.lr);
  r.integer("model.batch_size", c.train.batch_size);
  if (auto* s = r.find("model.seeds")) {
    c.model_seeds.clear();
    for (const auto& item : split_list(*s)) c.model_seeds.push_back(parse_u64(item, "model.seeds"));
  }
  r.boolean("model.standard", c.train_standard);
  r.boolean("model.adversarial", c.train_adversarial);

  {
    KeyValues kv = r.section("adversarial");
    for (const auto& [k, v] : kv) {
      if (!kAttackKeys.contains(k)) throw ConfigError("config: unknown key 'adversarial." + k + "'");
    }
    kv["kind"] = "pgd";
    AttackSpec base = ExperimentConfig::at_default_pgd();
    if (!kv.contains("steps")) kv["steps"] = std::to_string(base.steps);
    c.adversarial_pgd = parse_attack_spec(kv, "");
  }

  const std::string* shared_eps = r.find("pool.eps");
  if (auto* names = r.find("pool.attacks")) {
    c.search.pool.clear();
    for (const auto& n : split_list(*names)) c.search.pool.push_back(pool_attack(r, n, shared_eps));
  } else {
    std::vector<AttackSpec> pool;
    for (const auto& a : c.search.pool) pool.push_back(pool_attack(r, attack_name(a.kind), shared_eps));
    c.search.pool = pool;
  }
  for (const auto& name : r.sections_with_prefix("attack.")) {
    const bool in_pool = std::any_of(c.search.pool.begin(), c.search.pool.end(),
                                     [&](const AttackSpec& a) { return attack_name(a.kind) == name; });
    if (!in_pool) throw ConfigError("config: [attack." + name + "] names an attack outside the pool");
  }

  r.integer("search.stages", c.search.stages);
  r.integer("search.epochs", c.search.epochs);
  r.number("search.lr", c.search.lr);
  r.number("search.lambda_asr", c.search.lambda_asr);
  r.number("search.lambda_ssim", c.search.lambda_ssim);
  r.integer("search.batch_size", c.search.batch_size);
  r.integer("search.samples", c.search_samples);
  if (auto* m = r.find("search.model")) c.search_model = *m;
  if (auto* w = r.find("search.ssim_window")) {
    if (*w == "sliding") c.search.ssim.window = SsimWindow::Sliding;
    else if (*w == "global") c.search.ssim.window = SsimWindow::Global;
    else throw ConfigError("search.ssim_window: unknown '" + *w + "'");
  }
  r.integer("search.ssim_size", c.search.ssim.size);

  r.integer("evaluate.samples", c.eval_samples);
  {
    KeyValues defense_kv = r.section("defense");
    std::vector<DefenseKind> kinds;
    if (auto* list = r.find("evaluate.defenses")) {
      for (const auto& n : split_list(*list)) kinds.push_back(parse_defense_kind(n));
    } else {
      for (const auto& d : c.defenses) kinds.push_back(d.kind);
    }
    static const std::set<std::string> known{"jpeg_quality", "tv_weight", "tv_iterations", "bits",
                                             "nlm_h",        "nlm_patch", "nlm_search"};
    for (const auto& [k, v] : defense_kv) {
      if (!known.contains(k)) throw ConfigError("config: unknown key 'defense." + k + "'");
    }
    c.defenses.clear();
    for (DefenseKind k : kinds) c.defenses.push_back(parse_defense_spec(defense_kv, "", k));
  }

  if (auto* s = r.find("ablate.stages")) {
    c.ablate_stages.clear();
    for (const auto& item : split_list(*s)) c.ablate_stages.push_back(static_cast<int>(parse_int(item, "ablate.stages")));
  }
  r.integer("ablate.random_draws", c.random_draws);
  r.number("ablate.random_lo", c.random_lo);
  r.number("ablate.random_hi", c.random_hi);
  if (auto* t = r.find("ablate.transfer_models")) c.transfer_models = split_list(*t);

  if (auto* d = r.find("output.dir")) c.out_dir = *d;
  r.reject_unused();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_experiment_config(read_file(path));
}

}  // namespace daash
