#include "steal_lab/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "steal_lab/errors.hpp"

namespace steal_lab {
namespace {

[[noreturn]] void fail(const YAML::Node& node, const std::string& key, const std::string& what) {
  std::string msg = "config key '" + key + "'";
  if (node.Mark().line >= 0) msg += " (line " + std::to_string(node.Mark().line + 1) + ")";
  throw ConfigError(msg + ": " + what);
}

std::string join(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

void check_map(const YAML::Node& node, const std::string& key) {
  if (!node.IsMap()) fail(node, key, "expected a mapping");
}

void reject_unknown(const YAML::Node& map, const std::string& parent,
                    const std::set<std::string>& allowed) {
  for (const auto& kv : map) {
    const std::string k = kv.first.as<std::string>();
    if (!allowed.count(k)) fail(kv.first, join(parent, k), "unknown key");
  }
}

std::string as_string(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) fail(n, key, "expected a string");
  return n.Scalar();
}

double as_double(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) fail(n, key, "expected a number");
  try {
    return n.as<double>();
  } catch (const YAML::Exception&) {
    fail(n, key, "expected a number, got '" + n.Scalar() + "'");
  }
}

std::uint64_t as_count(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) fail(n, key, "expected a non-negative integer");
  const std::string& s = n.Scalar();
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    fail(n, key, "expected a non-negative integer, got '" + s + "'");
  }
  try {
    return n.as<std::uint64_t>();
  } catch (const YAML::Exception&) {
    fail(n, key, "integer out of range: '" + s + "'");
  }
}

template <class T, class F>
std::vector<T> as_list(const YAML::Node& n, const std::string& key, F convert) {
  if (!n.IsSequence()) fail(n, key, "expected a list");
  std::vector<T> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    out.push_back(convert(n[i], key + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::vector<std::size_t> as_widths(const YAML::Node& n, const std::string& key) {
  auto v = as_list<std::size_t>(n, key, [](const YAML::Node& e, const std::string& k) {
    const auto w = static_cast<std::size_t>(as_count(e, k));
    if (w == 0) fail(e, k, "widths must be positive");
    return w;
  });
  return v;
}

DatasetSpec parse_dataset(const YAML::Node& n) {
  const std::string key = "dataset";
  check_map(n, key);
  reject_unknown(n, key, {"kind", "classes", "dims", "train_size", "test_size", "spread",
                          "train_path", "test_path"});
  DatasetSpec d;
  if (n["kind"]) d.kind = as_string(n["kind"], "dataset.kind");
  if (n["classes"]) d.classes = as_count(n["classes"], "dataset.classes");
  if (n["dims"]) d.dims = as_count(n["dims"], "dataset.dims");
  if (n["train_size"]) d.train_size = as_count(n["train_size"], "dataset.train_size");
  if (n["test_size"]) d.test_size = as_count(n["test_size"], "dataset.test_size");
  if (n["spread"]) d.spread = as_double(n["spread"], "dataset.spread");
  if (n["train_path"]) d.train_path = as_string(n["train_path"], "dataset.train_path");
  if (n["test_path"]) d.test_path = as_string(n["test_path"], "dataset.test_path");
  try {
    d.validate();
  } catch (const ConfigError& e) {
    fail(n, key, e.what());
  }
  return d;
}

std::vector<TargetSpec> parse_targets(const YAML::Node& n) {
  if (!n.IsSequence()) fail(n, "targets", "expected a list");
  std::vector<TargetSpec> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const YAML::Node t = n[i];
    const std::string key = "targets[" + std::to_string(i) + "]";
    check_map(t, key);
    reject_unknown(t, key, {"size", "hidden", "epochs", "lr", "batch_size"});
    if (!t["size"]) fail(t, join(key, "size"), "missing required key");
    TargetSpec spec;
    try {
      spec = default_target_spec(target_size_from_string(as_string(t["size"], join(key, "size"))));
    } catch (const ConfigError& e) {
      fail(t["size"], join(key, "size"), e.what());
    }
    if (t["hidden"]) spec.hidden = as_widths(t["hidden"], join(key, "hidden"));
    if (t["epochs"]) spec.epochs = as_count(t["epochs"], join(key, "epochs"));
    if (t["lr"]) spec.lr = as_double(t["lr"], join(key, "lr"));
    if (t["batch_size"]) spec.batch_size = as_count(t["batch_size"], join(key, "batch_size"));
    try {
      spec.validate();
    } catch (const ConfigError& e) {
      fail(t, key, e.what());
    }
    out.push_back(spec);
  }
  return out;
}

Activation parse_activation(const YAML::Node& n, const std::string& key) {
  const std::string s = as_string(n, key);
  try {
    return activation_from_string(s);
  } catch (const Error&) {
    fail(n, key, "unknown activation '" + s + "'");
  }
}

// A trunk is either a width list or {widths: [...], activation: relu|tanh|identity}.
TrunkSpec parse_trunk(const std::string& name, const YAML::Node& n, const std::string& key) {
  TrunkSpec t{name, {}, Activation::relu};
  if (n.IsSequence()) {
    t.widths = as_widths(n, key);
    return t;
  }
  check_map(n, key);
  reject_unknown(n, key, {"widths", "activation"});
  if (!n["widths"]) fail(n, join(key, "widths"), "missing required key");
  t.widths = as_widths(n["widths"], join(key, "widths"));
  if (n["activation"]) t.activation = parse_activation(n["activation"], join(key, "activation"));
  return t;
}

std::vector<TrunkSpec> parse_trunks(const YAML::Node& n) {
  check_map(n, "trunks");
  std::vector<TrunkSpec> out;
  for (const auto& kv : n) {
    const std::string name = kv.first.as<std::string>();
    out.push_back(parse_trunk(name, kv.second, join("trunks", name)));
  }
  if (out.empty()) fail(n, "trunks", "needs at least one trunk");
  return out;
}

std::vector<SurrogateSpec> parse_surrogates(const YAML::Node& n,
                                            const std::vector<TrunkSpec>& trunks,
                                            std::size_t probe_m) {
  const std::string key = "surrogates";
  std::vector<Family> families{Family::baseline, Family::mcd, Family::cd, Family::bnn,
                               Family::deep_ensemble, Family::het_ensemble};
  std::vector<TrunkSpec> use = trunks;
  SurrogateSpec base;
  base.forward_passes = probe_m;
  std::size_t epochs = 30, bnn_epochs = 50, members = 6;
  std::vector<TrunkSpec> het = heterogeneous_trunks();

  if (n) {
    check_map(n, key);
    reject_unknown(n, key,
                   {"families", "trunks", "epochs", "bnn_epochs", "members", "head_width", "lr",
                    "batch_size", "dropout_rate", "kl_weight", "prior_std", "probe_forward_passes",
                    "het_trunks"});
    if (n["families"]) {
      families = as_list<Family>(n["families"], join(key, "families"),
                                 [](const YAML::Node& e, const std::string& k) {
                                   try {
                                     return family_from_string(as_string(e, k));
                                   } catch (const ConfigError& err) {
                                     fail(e, k, err.what());
                                   }
                                 });
      if (families.empty()) fail(n["families"], join(key, "families"), "needs a family");
    }
    if (n["trunks"]) {
      const auto names = as_list<std::string>(n["trunks"], join(key, "trunks"), as_string);
      use.clear();
      for (std::size_t i = 0; i < names.size(); ++i) {
        auto it = std::find_if(trunks.begin(), trunks.end(),
                               [&](const TrunkSpec& t) { return t.name == names[i]; });
        if (it == trunks.end()) {
          fail(n["trunks"][i], join(key, "trunks"), "no trunk named '" + names[i] + "'");
        }
        use.push_back(*it);
      }
    }
    if (n["epochs"]) epochs = as_count(n["epochs"], join(key, "epochs"));
    if (n["bnn_epochs"]) bnn_epochs = as_count(n["bnn_epochs"], join(key, "bnn_epochs"));
    if (n["members"]) members = as_count(n["members"], join(key, "members"));
    if (n["head_width"]) base.head_width = as_count(n["head_width"], join(key, "head_width"));
    if (n["lr"]) base.lr = as_double(n["lr"], join(key, "lr"));
    if (n["batch_size"]) base.batch_size = as_count(n["batch_size"], join(key, "batch_size"));
    if (n["dropout_rate"]) {
      base.dropout_rate = as_double(n["dropout_rate"], join(key, "dropout_rate"));
    }
    if (n["kl_weight"]) base.kl_weight = as_double(n["kl_weight"], join(key, "kl_weight"));
    if (n["prior_std"]) base.prior_std = as_double(n["prior_std"], join(key, "prior_std"));
    if (n["probe_forward_passes"]) {
      base.forward_passes = as_count(n["probe_forward_passes"], join(key, "probe_forward_passes"));
    }
    if (n["het_trunks"]) {
      const YAML::Node h = n["het_trunks"];
      if (!h.IsSequence() || h.size() == 0) {
        fail(h, join(key, "het_trunks"), "expected a non-empty list");
      }
      het.clear();
      for (std::size_t i = 0; i < h.size(); ++i) {
        het.push_back(parse_trunk("he" + std::to_string(i), h[i],
                                  join(key, "het_trunks[" + std::to_string(i) + "]")));
      }
    }
  }

  std::vector<SurrogateSpec> out;
  for (Family f : families) {
    SurrogateSpec s = base;
    s.family = f;
    s.epochs = f == Family::bnn ? bnn_epochs : epochs;
    s.members = members;
    if (f == Family::het_ensemble) {
      s.member_trunks = het;
      s.members = het.size();
      out.push_back(s);
      continue;
    }
    for (const auto& t : use) {
      s.trunk = t;
      out.push_back(s);
    }
  }
  for (const auto& s : out) {
    try {
      s.validate();
    } catch (const ConfigError& e) {
      fail(n ? n : YAML::Node(), key, e.what());
    }
  }
  return out;
}

ExperimentConfig parse_root(const YAML::Node& root) {
  if (!root.IsMap()) throw ConfigError("config must be a YAML mapping");
  reject_unknown(root, "", {"out", "seeds", "jobs", "forward_passes", "oracle", "dataset",
                            "targets", "trunks", "surrogates"});
  if (!root["dataset"]) throw ConfigError("config key 'dataset': missing required key");

  ExperimentConfig cfg;
  ExperimentPlan& plan = cfg.plan;
  plan.dataset = parse_dataset(root["dataset"]);
  if (root["out"]) cfg.out = as_string(root["out"], "out");
  if (root["oracle"]) cfg.oracle = as_string(root["oracle"], "oracle");
  if (root["jobs"]) {
    plan.jobs = as_count(root["jobs"], "jobs");
    if (plan.jobs == 0) fail(root["jobs"], "jobs", "must be at least 1");
  }
  if (root["seeds"]) {
    plan.seeds = as_list<std::uint64_t>(root["seeds"], "seeds", as_count);
    if (plan.seeds.empty()) fail(root["seeds"], "seeds", "needs at least one seed");
  }
  if (root["forward_passes"]) {
    plan.forward_passes = as_list<std::size_t>(
        root["forward_passes"], "forward_passes", [](const YAML::Node& e, const std::string& k) {
          const auto m = static_cast<std::size_t>(as_count(e, k));
          if (m == 0) fail(e, k, "M must be at least 1");
          return m;
        });
    if (plan.forward_passes.empty()) {
      fail(root["forward_passes"], "forward_passes", "needs at least one M");
    }
  }

  if (root["targets"]) {
    plan.targets = parse_targets(root["targets"]);
    if (plan.targets.empty()) fail(root["targets"], "targets", "needs at least one target");
  } else {
    for (auto s : {TargetSize::small, TargetSize::medium, TargetSize::large}) {
      plan.targets.push_back(default_target_spec(s));
    }
  }

  std::vector<TrunkSpec> trunks;
  if (root["trunks"]) {
    trunks = parse_trunks(root["trunks"]);
  } else {
    trunks = {{"arch_A", default_target_spec(TargetSize::large).hidden, Activation::relu},
              {"arch_B", {48}, Activation::relu}};
  }
  plan.surrogates = parse_surrogates(root["surrogates"], trunks, plan.forward_passes.front());
  plan.validate();
  return cfg;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.mark.line + 1) + ": " +
                      e.msg);
  }
  return parse_root(root);
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = parse_config_text(buf.str());
  // Relative csv paths resolve against the config file's directory.
  if (cfg.plan.dataset.kind == "csv") {
    const auto base = path.parent_path();
    for (std::string* p : {&cfg.plan.dataset.train_path, &cfg.plan.dataset.test_path}) {
      if (std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
    }
  }
  return cfg;
}

}  // namespace steal_lab
