// bundlegraph: train, evaluate, sparsify and inspect bundle-recommendation
// datasets from the command line.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bundlegraph/bundlegraph.hpp"

namespace bg = bundlegraph;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

/// Command-line flags that map one-to-one onto config keys.
struct FlagOverrides {
  std::vector<std::pair<std::string, std::string>> flag_to_key = {
      {"data", "data.path"},
      {"out", "run.output_dir"},
      {"threads", "run.threads"},
      {"dim", "model.dim"},
      {"layers", "model.layers"},
      {"lambda1", "model.lambda1"},
      {"lambda2", "model.lambda2"},
      {"lambda3", "model.lambda3"},
      {"views", "model.views"},
      {"scoring-mode", "model.scoring_mode"},
      {"pool-divisor", "model.pool_divisor"},
      {"lr", "train.lr"},
      {"batch-size", "train.batch_size"},
      {"epochs", "train.epochs"},
      {"negatives", "train.negatives_per_positive"},
      {"tau", "train.tau"},
      {"beta1", "train.beta1"},
      {"beta2", "train.beta2"},
      {"contrast-mode", "train.contrast_mode"},
      {"bpr-reduction", "train.bpr_reduction"},
      {"seed", "train.seed"},
      {"eval-every", "train.eval_every"},
      {"patience", "train.patience"},
      {"aug", "aug.kind"},
      {"edge-drop-rate", "aug.edge_drop_rate"},
      {"message-drop-rate", "aug.message_drop_rate"},
      {"noise-eps", "aug.noise_eps"},
      {"resample", "aug.resample"},
      {"ks", "eval.ks"},
  };
  std::map<std::string, std::string> values;
  std::string config_file;
  std::vector<std::string> sets;
  bool high_precision = false;
  bool mask_valid = false;

  void attach(CLI::App* app, bool all_flags) {
    app->add_option("-c,--config", config_file, "INI/TOML-style config file");
    app->add_option("--set", sets, "Override any config key: --set train.tau=0.1");
    for (const auto& [flag, key] : flag_to_key) {
      if (!all_flags && flag != "data" && flag != "threads" && flag != "ks") continue;
      app->add_option("--" + flag, values[flag], "Sets " + key);
    }
    app->add_flag("--high-precision", high_precision, "Run in double precision");
    app->add_flag("--mask-valid", mask_valid, "Also mask validation bundles when ranking");
  }

  bg::RunConfig resolve() const {
    bg::KeyValues kv;
    if (!config_file.empty()) kv = bg::read_config_file(config_file);
    bg::apply_env_overrides(kv);
    for (const auto& s : sets) {
      auto eq = s.find('=');
      if (eq == std::string::npos) throw bg::ConfigError("--set expects key=value, got '" + s + "'");
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    for (const auto& [flag, key] : flag_to_key) {
      auto it = values.find(flag);
      if (it != values.end() && !it->second.empty()) kv[key] = it->second;
    }
    if (high_precision) kv["run.high_precision"] = "true";
    if (mask_valid) kv["eval.mask_valid"] = "true";
    return bg::parse_run_config(kv);
  }
};

void print_config_error(const bg::ConfigError& e) {
  std::cerr << "config error: " << e.what() << '\n';
}

std::vector<double> parse_group_edges(const std::string& s) {
  std::vector<double> edges;
  for (const auto& tok : bg::detail::split_list(s)) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || *end != '\0') throw bg::ConfigError("--groups: bad edge '" + tok + "'");
    edges.push_back(v);
  }
  return edges;
}

bg::Dataset load_for(const bg::RunConfig& rc) {
  if (rc.data_path.empty()) throw bg::ConfigError("data.path is required (--data DIR)");
  return bg::load_dataset(rc.data_path);
}

template <class T>
bg::MetricsReport final_report(const bg::EmbeddingTable<T>& theta, const bg::ModelGraphs<T>& g,
                               const bg::RunConfig& rc, const bg::Dataset& d) {
  const auto mask = rc.mask_valid ? bg::MaskPolicy::train_and_valid : bg::MaskPolicy::train;
  return bg::evaluate_model(theta, g, rc.train, d, rc.eval_ks, bg::Split::test, mask);
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw bg::DataError("cannot write " + p.string());
  out << body;
}

template <class T>
int run_train(const bg::RunConfig& rc, const bg::Dataset& d) {
  bg::TrainHooks hooks;
  hooks.on_epoch = [](const bg::EpochRecord& e) {
    std::fprintf(stderr, "epoch %zu  loss %.6f  bpr %.6f  cl %.4f/%.4f", e.epoch, e.loss.total,
                 e.loss.bpr, e.loss.contrast_user, e.loss.contrast_bundle);
    if (e.evaluated) std::fprintf(stderr, "  val R@20 %.4f N@20 %.4f", e.val_recall20, e.val_ndcg20);
    if (e.skipped_negatives) std::fprintf(stderr, "  (skipped %zu negatives)", e.skipped_negatives);
    std::fputc('\n', stderr);
  };
  auto result = bg::train<T>(d, rc.train, hooks);
  const auto graphs = bg::ModelGraphs<T>::build(d);
  const auto report = final_report(result.best, graphs, rc, d);

  const fs::path out = rc.output_dir;
  fs::create_directories(out);
  bg::write_checkpoint(out / "checkpoint.txt", result.best, rc.train.seed);
  {
    std::ofstream log(out / "train_log.tsv", std::ios::binary);
    result.log.write_tsv(log);
  }
  write_text(out / "config.ini", bg::to_ini(rc));
  {
    std::ofstream m(out / "metrics.txt", std::ios::binary);
    bg::write_report(m, report);
    std::ofstream t(out / "metrics.tsv", std::ios::binary);
    bg::write_report_tsv(t, report);
  }
  std::cout << "best_epoch=" << result.log.best_epoch << '\n';
  bg::write_report(std::cout, report);
  return 0;
}

struct EvaluateOptions {
  std::string checkpoint;
  bool decompose = false;
  std::string groups;
  std::size_t alignment_pairs = 0;
  std::string split = "test";
  std::string report;
};

template <class T>
int run_evaluate(const bg::RunConfig& rc, const bg::Dataset& d, const EvaluateOptions& opt) {
  bg::CheckpointHeader h;
  auto theta = bg::read_checkpoint<T>(opt.checkpoint, &h);
  if (h.users != d.num_users || h.bundles != d.num_bundles || h.items != d.num_items) {
    throw bg::DataError("checkpoint shape " + std::to_string(h.users) + "x" +
                        std::to_string(h.bundles) + "x" + std::to_string(h.items) +
                        " does not match dataset shape " + std::to_string(d.num_users) + "x" +
                        std::to_string(d.num_bundles) + "x" + std::to_string(d.num_items));
  }
  bg::TrainConfig cfg = rc.train;
  cfg.dim = h.dim;
  const auto split = opt.split == "valid" ? bg::Split::valid : bg::Split::test;
  const auto mask = rc.mask_valid ? bg::MaskPolicy::train_and_valid : bg::MaskPolicy::train;
  const auto graphs = bg::ModelGraphs<T>::build(d);
  const std::size_t kmax = *std::max_element(rc.eval_ks.begin(), rc.eval_ks.end());
  bg::RankingResult ranking;
  auto report = bg::evaluate_model(theta, graphs, cfg, d, rc.eval_ks, split, mask, &ranking);

  const auto views =
      bg::compute_views(theta, graphs, bg::PassPlan<T>::clean(graphs), cfg.view_options());
  if (opt.decompose) report.decomposition = bg::decomposed_eval(views, cfg.lambda, d, rc.eval_ks, mask, split);
  if (!opt.groups.empty()) {
    const auto edges = parse_group_edges(opt.groups);
    const std::size_t gk = std::min<std::size_t>(20, kmax);
    const auto rates = bg::biu_sparsity_rates(d);
    report.group_k = gk;
    try {
      report.groups = bg::group_hit_analysis(ranking, bg::split_matrix(d, split), rates, gk, edges);
    } catch (const std::invalid_argument& e) {
      throw bg::ConfigError(std::string("--groups: ") + e.what());
    }
  }
  if (opt.alignment_pairs > 0) {
    bg::Rng rng = bg::make_stream(cfg.seed, "diagnostics");
    const auto fused = bg::fuse(views, cfg.lambda);
    report.diagnostics = bg::alignment_dispersion(views, fused, cfg.views, opt.alignment_pairs, rng);
  }
  bg::write_report(std::cout, report);
  if (!opt.report.empty()) {
    std::ofstream kv(opt.report, std::ios::binary);
    bg::write_report(kv, report);
    std::ofstream tsv(opt.report + ".tsv", std::ios::binary);
    bg::write_report_tsv(tsv, report);
  }
  return 0;
}

std::string rate_suffix(double rate, std::uint64_t seed) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), rate);
  return "_bi_drop" + std::string(buf, p) + "_s" + std::to_string(seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view graph bundle recommendation"};
  app.require_subcommand(1);

  FlagOverrides train_flags, eval_flags, stats_flags, sparsify_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, log and report");
  train_flags.attach(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  eval_flags.attach(eval_cmd, true);
  EvaluateOptions eval_opt;
  eval_cmd->add_option("--checkpoint", eval_opt.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_flag("--decompose", eval_opt.decompose, "Also rank by total, ego and cross scores");
  eval_cmd->add_option("--groups", eval_opt.groups, "B-I-U sparsity bucket edges, e.g. 0,0.2,0.4,0.6,0.8,1");
  eval_cmd->add_option("--alignment", eval_opt.alignment_pairs,
                       "Report alignment/dispersion using this many sampled pairs");
  eval_cmd->add_option("--split", eval_opt.split, "test or valid")->check(CLI::IsMember({"test", "valid"}));
  eval_cmd->add_option("--report", eval_opt.report, "Also write key=value report here (+ .tsv)");

  auto* sparsify_cmd = app.add_subcommand("sparsify", "Write a copy of a dataset with BI edges dropped");
  sparsify_flags.attach(sparsify_cmd, false);
  double drop_rate = 0;
  std::uint64_t drop_seed = 0;
  std::string sparsify_out;
  bool force = false;
  sparsify_cmd->add_option("--rate", drop_rate, "Fraction of BI edges to drop, in [0,1)")->required();
  sparsify_cmd->add_option("--seed", drop_seed, "Seed for edge selection");
  sparsify_cmd->add_option("--output", sparsify_out, "Output directory (default <data>_bi_drop<rate>_s<seed>)");
  sparsify_cmd->add_flag("--force", force, "Overwrite an existing output directory");

  auto* stats_cmd = app.add_subcommand("stats", "Print dataset statistics");
  stats_flags.attach(stats_cmd, false);
  std::string stats_report;
  stats_cmd->add_option("--report", stats_report, "Write a per-bundle report file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) {
      const auto rc = train_flags.resolve();
      const auto d = load_for(rc);
      bg::set_num_threads(rc.threads);
      return rc.high_precision ? run_train<double>(rc, d) : run_train<float>(rc, d);
    }
    if (*eval_cmd) {
      const auto rc = eval_flags.resolve();
      const auto d = load_for(rc);
      bg::set_num_threads(rc.threads);
      return rc.high_precision ? run_evaluate<double>(rc, d, eval_opt)
                               : run_evaluate<float>(rc, d, eval_opt);
    }
    if (*sparsify_cmd) {
      const auto rc = sparsify_flags.resolve();
      if (!(drop_rate >= 0 && drop_rate < 1)) throw bg::ConfigError("--rate must lie in [0,1)");
      fs::path src = rc.data_path;
      if (src.empty()) throw bg::ConfigError("data.path is required (--data DIR)");
      while (!src.empty() && src.filename().empty()) src = src.parent_path();
      const fs::path dst = sparsify_out.empty()
                               ? fs::path(src.string() + rate_suffix(drop_rate, drop_seed))
                               : fs::path(sparsify_out);
      if (fs::exists(dst) && !force) {
        std::cerr << "error: " << dst << " exists (use --force to overwrite)\n";
        return kExitConfig;
      }
      const auto d = bg::load_dataset(src);
      const auto sparse = bg::sparsify_bi(d, drop_rate, drop_seed);
      bg::write_dataset(sparse, dst);
      std::cout << "output=" << dst.string() << "\nbi_before=" << d.bi.nnz()
                << "\nbi_after=" << sparse.bi.nnz() << '\n';
      return 0;
    }
    if (*stats_cmd) {
      const auto rc = stats_flags.resolve();
      const auto d = load_for(rc);
      const auto s = bg::dataset_stats(d);
      bg::write_stats(std::cout, s);
      if (!stats_report.empty()) {
        std::ofstream out(stats_report, std::ios::binary);
        if (!out) throw bg::DataError("cannot write " + stats_report);
        bg::write_stats_report(out, s);
      }
      return 0;
    }
  } catch (const bg::ConfigError& e) {
    print_config_error(e);
    return kExitConfig;
  } catch (const bg::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const bg::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "argument error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
