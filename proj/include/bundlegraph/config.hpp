#ifndef BUNDLEGRAPH_CONFIG_HPP
#define BUNDLEGRAPH_CONFIG_HPP

// Flat `section.key = value` run configuration. Sources are layered as
// defaults < config file < BUNDLEGRAPH_* environment < command-line flags.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bundlegraph/objective.hpp"

namespace bundlegraph {

using KeyValues = std::map<std::string, std::string>;

struct RunConfig {
  std::string data_path;
  std::string output_dir = "out";
  unsigned threads = 0;  // 0 = all cores
  bool high_precision = false;
  TrainConfig train;
  std::vector<std::size_t> eval_ks{20, 40};
  bool mask_valid = false;
};

inline KeyValues default_config() {
  return {
      {"data.path", ""},
      {"run.output_dir", "out"},
      {"run.threads", "0"},
      {"run.high_precision", "false"},
      {"model.dim", "64"},
      {"model.layers", "2"},
      {"model.lambda1", "0.3333333333333333"},
      {"model.lambda2", "0.3333333333333333"},
      {"model.lambda3", "0.3333333333333334"},
      {"model.views", "UB,UI,BI"},
      {"model.scoring_mode", "auto"},
      {"model.pool_divisor", "k_plus_one"},
      {"train.lr", "0.001"},
      {"train.batch_size", "2048"},
      {"train.epochs", "100"},
      {"train.negatives_per_positive", "1"},
      {"train.tau", "0.2"},
      {"train.beta1", "0.1"},
      {"train.beta2", "1e-6"},
      {"train.contrast_mode", "fused_self"},
      {"train.bpr_reduction", "mean"},
      {"train.seed", "2023"},
      {"train.eval_every", "1"},
      {"train.patience", "0"},
      {"aug.kind", "noise"},
      {"aug.edge_drop_rate", "0.2"},
      {"aug.message_drop_rate", "0.2"},
      {"aug.noise_eps", "0.1"},
      {"aug.resample", "per_batch"},
      {"eval.ks", "20,40"},
      {"eval.mask_valid", "false"},
  };
}

/// Environment variable consulted for `key`: BUNDLEGRAPH_ + upper-cased key with
/// '.' replaced by '_' (model.lambda1 -> BUNDLEGRAPH_MODEL_LAMBDA1).
inline std::string env_name(const std::string& key) {
  std::string s = "BUNDLEGRAPH_";
  for (char c : key) s += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

/// Reads an INI/TOML-style file: `[section]` headers and `key = value` lines.
/// Surrounding double quotes on values are stripped.
inline KeyValues read_config_file(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.message());
  }
  KeyValues kv;
  auto clean = [](std::string v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
    return v;
  };
  for (const auto& [section, node] : tree) {
    if (node.empty()) {
      kv[section] = clean(node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) kv[section + "." + key] = clean(leaf.data());
  }
  return kv;
}

inline void apply_env_overrides(KeyValues& kv,
                                const std::function<const char*(const char*)>& getenv_fn =
                                    [](const char* n) { return std::getenv(n); }) {
  for (const auto& [key, _] : default_config()) {
    if (const char* v = getenv_fn(env_name(key).c_str())) kv[key] = v;
  }
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}
  std::vector<std::string> errors;

  const std::string& raw(const std::string& key) const { return kv_.at(key); }

  double real(const std::string& key, double fallback) {
    const auto& s = raw(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') {
      errors.push_back(key + ": expected a number, got '" + s + "'");
      return fallback;
    }
    return v;
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
    const auto& s = raw(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || p != s.data() + s.size()) {
      errors.push_back(key + ": expected a non-negative integer, got '" + s + "'");
      return fallback;
    }
    return v;
  }

  bool boolean(const std::string& key) {
    const auto& s = raw(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    errors.push_back(key + ": expected true/false, got '" + s + "'");
    return false;
  }

  template <class E>
  E choice(const std::string& key, std::initializer_list<std::pair<const char*, E>> opts, E fallback) {
    const auto& s = raw(key);
    std::string names;
    for (const auto& [n, e] : opts) {
      if (s == n) return e;
      names += names.empty() ? n : std::string("|") + n;
    }
    errors.push_back(key + ": expected one of " + names + ", got '" + s + "'");
    return fallback;
  }

 private:
  const KeyValues& kv_;
};

}  // namespace detail

/// Validates every key and reports all problems in one ConfigError.
inline RunConfig parse_run_config(const KeyValues& overrides) {
  KeyValues kv = default_config();
  std::vector<std::string> unknown;
  for (const auto& [k, v] : overrides) {
    if (!kv.count(k)) unknown.push_back("unknown config key '" + k + "'");
    else kv[k] = v;
  }
  detail::Reader r(kv);
  r.errors = unknown;
  RunConfig rc;
  TrainConfig& t = rc.train;
  rc.data_path = kv["data.path"];
  rc.output_dir = kv["run.output_dir"];
  rc.threads = static_cast<unsigned>(r.integer("run.threads", 0));
  rc.high_precision = r.boolean("run.high_precision");

  t.dim = r.integer("model.dim", 64);
  t.layers = r.integer("model.layers", 2);
  std::array<double, 3> raw_lambda{r.real("model.lambda1", 1.0 / 3), r.real("model.lambda2", 1.0 / 3),
                                   r.real("model.lambda3", 1.0 / 3)};
  ViewSet views{false, false, false};
  for (const auto& name : detail::split_list(kv["model.views"])) {
    if (name == "UB") views.ub = true;
    else if (name == "UI") views.ui = true;
    else if (name == "BI") views.bi = true;
    else r.errors.push_back("model.views: unknown view '" + name + "' (expected UB, UI, BI)");
  }
  if (views.count() == 0) r.errors.push_back("model.views: at least one view must be enabled");
  t.views = views;
  {
    FusionCoefficients raw;
    raw.lambda = raw_lambda;
    for (auto& e : raw.validate()) r.errors.push_back(e);
    t.lambda = FusionCoefficients::for_views(raw_lambda, views);
    double enabled_sum = 0;
    for (View v : views.enabled()) enabled_sum += raw_lambda[static_cast<int>(v)];
    if (views.count() > 0 && !(enabled_sum > 0))
      r.errors.push_back("model.lambda: enabled views have zero total weight");
  }
  t.pool = r.choice<PoolDivisor>("model.pool_divisor",
                                 {{"k_plus_one", PoolDivisor::k_plus_one}, {"k", PoolDivisor::k}},
                                 PoolDivisor::k_plus_one);
  t.lr = r.real("train.lr", 1e-3);
  t.batch_size = r.integer("train.batch_size", 2048);
  t.epochs = r.integer("train.epochs", 100);
  t.negatives_per_positive = r.integer("train.negatives_per_positive", 1);
  t.tau = r.real("train.tau", 0.2);
  t.beta1 = r.real("train.beta1", 0.1);
  t.beta2 = r.real("train.beta2", 1e-6);
  t.contrast = r.choice<ContrastMode>("train.contrast_mode",
                                      {{"fused_self", ContrastMode::fused_self},
                                       {"pairwise_cross", ContrastMode::pairwise_cross},
                                       {"off", ContrastMode::off}},
                                      ContrastMode::fused_self);
  t.bpr_reduction = r.choice<BprReduction>(
      "train.bpr_reduction", {{"mean", BprReduction::mean}, {"sum", BprReduction::sum}},
      BprReduction::mean);
  t.seed = r.integer("train.seed", 2023);
  t.eval_every = r.integer("train.eval_every", 1);
  t.patience = r.integer("train.patience", 0);
  // "auto" pairs fused scoring with fused_self/off and late fusion with pairwise_cross.
  if (kv["model.scoring_mode"] == "auto") {
    t.scoring = t.contrast == ContrastMode::pairwise_cross ? ScoringMode::per_view_sum
                                                           : ScoringMode::fused;
  } else {
    t.scoring = r.choice<ScoringMode>(
        "model.scoring_mode",
        {{"fused", ScoringMode::fused}, {"per_view_sum", ScoringMode::per_view_sum}},
        ScoringMode::fused);
  }
  t.aug.kind = r.choice<AugmentationKind>("aug.kind",
                                          {{"none", AugmentationKind::none},
                                           {"edge_dropout", AugmentationKind::edge_dropout},
                                           {"message_dropout", AugmentationKind::message_dropout},
                                           {"noise", AugmentationKind::noise}},
                                          AugmentationKind::noise);
  t.aug.edge_drop_rate = r.real("aug.edge_drop_rate", 0.2);
  t.aug.message_drop_rate = r.real("aug.message_drop_rate", 0.2);
  t.aug.noise_eps = r.real("aug.noise_eps", 0.1);
  t.aug.resample = r.choice<ResamplePolicy>(
      "aug.resample",
      {{"per_batch", ResamplePolicy::per_batch}, {"per_epoch", ResamplePolicy::per_epoch}},
      ResamplePolicy::per_batch);

  rc.eval_ks.clear();
  for (const auto& k : detail::split_list(kv["eval.ks"])) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(k.data(), k.data() + k.size(), v);
    if (k.empty() || ec != std::errc() || p != k.data() + k.size() || v == 0)
      r.errors.push_back("eval.ks: '" + k + "' is not a positive integer");
    else
      rc.eval_ks.push_back(v);
  }
  if (rc.eval_ks.empty()) r.errors.push_back("eval.ks: at least one K is required");
  rc.mask_valid = r.boolean("eval.mask_valid");

  // Views and lambdas were checked above in their raw form.
  for (auto& e : t.validate()) {
    if (e.starts_with("model.views") || e.starts_with("model.lambda") || e.starts_with("lambda for")) continue;
    if (std::find(r.errors.begin(), r.errors.end(), e) == r.errors.end()) r.errors.push_back(e);
  }
  if (!r.errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ConfigError(msg, r.errors);
  }
  return rc;
}

/// Fully resolved configuration, readable by read_config_file().
inline std::string to_ini(const RunConfig& rc) {
  const auto& t = rc.train;
  std::ostringstream os;
  os.precision(17);
  os << "[data]\npath = " << rc.data_path << "\n\n";
  os << "[run]\noutput_dir = " << rc.output_dir << "\nthreads = " << rc.threads
     << "\nhigh_precision = " << (rc.high_precision ? "true" : "false") << "\n\n";
  os << "[model]\ndim = " << t.dim << "\nlayers = " << t.layers << "\nlambda1 = " << t.lambda.lambda[0]
     << "\nlambda2 = " << t.lambda.lambda[1] << "\nlambda3 = " << t.lambda.lambda[2]
     << "\nviews = " << t.views.to_string() << "\nscoring_mode = " << to_string(t.scoring)
     << "\npool_divisor = " << (t.pool == PoolDivisor::k ? "k" : "k_plus_one") << "\n\n";
  os << "[train]\nlr = " << t.lr << "\nbatch_size = " << t.batch_size << "\nepochs = " << t.epochs
     << "\nnegatives_per_positive = " << t.negatives_per_positive << "\ntau = " << t.tau
     << "\nbeta1 = " << t.beta1 << "\nbeta2 = " << t.beta2
     << "\ncontrast_mode = " << to_string(t.contrast)
     << "\nbpr_reduction = " << to_string(t.bpr_reduction) << "\nseed = " << t.seed
     << "\neval_every = " << t.eval_every << "\npatience = " << t.patience << "\n\n";
  os << "[aug]\nkind = " << to_string(t.aug.kind) << "\nedge_drop_rate = " << t.aug.edge_drop_rate
     << "\nmessage_drop_rate = " << t.aug.message_drop_rate << "\nnoise_eps = " << t.aug.noise_eps
     << "\nresample = " << to_string(t.aug.resample) << "\n\n";
  os << "[eval]\nks = ";
  for (std::size_t i = 0; i < rc.eval_ks.size(); ++i) os << (i ? "," : "") << rc.eval_ks[i];
  os << "\nmask_valid = " << (rc.mask_valid ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_CONFIG_HPP
