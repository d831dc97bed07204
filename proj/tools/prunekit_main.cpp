#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "prunekit/checkpoint.hpp"
#include "prunekit/cost.hpp"
#include "prunekit/data.hpp"
#include "prunekit/eval.hpp"
#include "prunekit/evosearch.hpp"
#include "prunekit/netdef.hpp"
#include "prunekit/pruningnet.hpp"

using nlohmann::json;
using namespace prunekit;

namespace {

constexpr uint64_t kDefaultSplitSeed = 9001;
constexpr uint64_t kDefaultCalibSeed = 7777;

// "blobs:classes=8,per_class=250,hw=16,noise=0.35,seed=1,salt=0" or
// "cifar:<file1>,<file2>,..."
Dataset load_data_spec(const std::string& spec, const json& cfg) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon == std::string::npos ? spec.size() : colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "cifar") {
    if (rest.empty()) throw std::invalid_argument("cifar data spec needs file paths");
    std::vector<std::string> paths;
    std::istringstream is(rest);
    std::string p;
    while (std::getline(is, p, ',')) paths.push_back(p);
    NormalizeConfig norm = cifar10_normalization();
    if (cfg.contains("cifar_mean")) norm.mean = cfg.at("cifar_mean").get<std::vector<double>>();
    if (cfg.contains("cifar_std")) norm.stddev = cfg.at("cifar_std").get<std::vector<double>>();
    return load_cifar_binary(paths, norm);
  }
  if (kind == "blobs") {
    int classes = 8, per_class = 250, hw = 16, channels = 3;
    double noise = 0.35;
    uint64_t seed = 1, salt = 0;
    std::istringstream is(rest);
    std::string kv;
    while (std::getline(is, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("bad blobs parameter '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "classes") classes = std::stoi(val);
      else if (key == "per_class") per_class = std::stoi(val);
      else if (key == "hw") hw = std::stoi(val);
      else if (key == "channels") channels = std::stoi(val);
      else if (key == "noise") noise = std::stod(val);
      else if (key == "seed") seed = std::stoull(val);
      else if (key == "salt") salt = std::stoull(val);
      else throw std::invalid_argument("unknown blobs parameter '" + key + "'");
    }
    return synth_blobs(classes, per_class, channels, hw, hw, seed, noise, salt);
  }
  throw std::invalid_argument("unknown data spec '" + spec + "' (expected blobs:... or cifar:...)");
}

// "flops:<budget>" or "latency:<table.csv>:<budget_us>"
Constraint parse_constraint(const std::string& text, const NetworkTemplate& tmpl) {
  if (text.rfind("flops:", 0) == 0) {
    const double budget = std::stod(text.substr(6));
    return flops_constraint(budget);
  }
  if (text.rfind("latency:", 0) == 0) {
    const std::string rest = text.substr(8);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("latency constraint needs latency:<file>:<budget_us>");
    auto table = std::make_shared<LatencyTable>(load_latency_csv(rest.substr(0, colon)));
    validate_table(tmpl, *table);
    return latency_constraint(std::stod(rest.substr(colon + 1)), std::move(table));
  }
  throw std::invalid_argument("unknown constraint '" + text +
                              "' (expected flops:<N> or latency:<file>:<us>)");
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
}

template <typename T>
void cfg_override(const CLI::App& sub, const std::string& flag, const json& cfg,
                  const std::string& key, T& target) {
  if (sub.count(flag) == 0 && cfg.contains(key)) target = cfg.at(key).get<T>();
}

struct CommonTrainFlags {
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string augment = "none";
  bool no_cosine = false;
};

void add_train_flags(CLI::App* sub, CommonTrainFlags& f) {
  sub->add_option("--batch-size", f.batch_size, "mini-batch size");
  sub->add_option("--lr", f.lr, "peak learning rate");
  sub->add_option("--momentum", f.momentum, "SGD momentum");
  sub->add_option("--weight-decay", f.weight_decay, "L2 penalty");
  sub->add_option("--augment", f.augment, "none|flip|pad4crop|flip+pad4crop");
  sub->add_flag("--no-cosine", f.no_cosine, "constant learning rate");
}

void apply_train_cfg(const CLI::App& sub, const json& cfg, CommonTrainFlags& f) {
  cfg_override(sub, "--batch-size", cfg, "batch_size", f.batch_size);
  cfg_override(sub, "--lr", cfg, "lr", f.lr);
  cfg_override(sub, "--momentum", cfg, "momentum", f.momentum);
  cfg_override(sub, "--weight-decay", cfg, "weight_decay", f.weight_decay);
  cfg_override(sub, "--augment", cfg, "augment", f.augment);
}

int fail_setup(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return 2;
}

int fail_run(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  return 1;
}

json read_results_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) return json::object();
  try {
    return json::parse(is);
  } catch (const json::parse_error&) {
    return json::object();
  }
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << doc.dump(2) << "\n";
  if (!os.good()) throw std::runtime_error("write failed: " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned channel pruning: weight-generating meta network, "
               "cost models, and evolutionary structure search"};
  app.require_subcommand(1);

  // ---- train-meta ----
  auto* tm = app.add_subcommand("train-meta", "train the weight-generating meta network");
  std::string tm_template, tm_data, tm_out, tm_metrics, tm_config;
  int tm_epochs = -1, tm_baseline = 40, tm_holdout = 50;
  uint64_t tm_seed = 0, tm_split_seed = kDefaultSplitSeed;
  bool tm_direct = false;
  CommonTrainFlags tm_flags;
  tm->add_option("--template", tm_template, "builtin name or template JSON path")->required();
  tm->add_option("--data", tm_data, "training data spec")->required();
  tm->add_option("--out", tm_out, "checkpoint output path")->required();
  tm->add_option("--epochs", tm_epochs, "meta epochs (-1: baseline/4)");
  tm->add_option("--baseline-epochs", tm_baseline, "baseline full-training epochs");
  tm->add_option("--holdout", tm_holdout, "sub-validation images per class");
  tm->add_option("--seed", tm_seed, "master seed");
  tm->add_option("--split-seed", tm_split_seed, "sub-train/sub-val split seed");
  tm->add_option("--metrics", tm_metrics, "write per-epoch loss CSV here");
  tm->add_option("--config", tm_config, "JSON config overriding defaults");
  tm->add_flag("--direct", tm_direct, "ablation: crop a shared max-width weight, no prediction");
  add_train_flags(tm, tm_flags);

  // ---- search ----
  auto* se = app.add_subcommand("search", "evolutionary search for the best pruned structure");
  std::string se_template, se_data, se_ckpt, se_constraint, se_out, se_history, se_config;
  int se_pop = 128, se_topk = 32, se_mut = 64, se_cross = 64, se_iters = 20;
  int se_holdout = 50, se_calib_images = -1, se_batch = 64, se_workers = 1;
  double se_pmut = 0.1;
  uint64_t se_seed = 0, se_split_seed = kDefaultSplitSeed, se_calib_seed = kDefaultCalibSeed;
  se->add_option("--template", se_template)->required();
  se->add_option("--ckpt", se_ckpt, "meta-network checkpoint")->required();
  se->add_option("--data", se_data, "data spec; split must match train-meta")->required();
  se->add_option("--constraint", se_constraint, "flops:<N> or latency:<file>:<us>")->required();
  se->add_option("--out", se_out, "results JSON path")->required();
  se->add_option("--pop", se_pop, "population size");
  se->add_option("--topk", se_topk, "survivors per generation");
  se->add_option("--mutations", se_mut, "mutants per generation");
  se->add_option("--crossovers", se_cross, "crossover children per generation");
  se->add_option("--iters", se_iters, "generations");
  se->add_option("--p-mut", se_pmut, "per-axis mutation probability");
  se->add_option("--holdout", se_holdout, "sub-validation images per class");
  se->add_option("--calib-images", se_calib_images, "BN recalibration images (-1: min(20000, n))");
  se->add_option("--batch-size", se_batch, "evaluation batch size");
  se->add_option("--workers", se_workers, "parallel candidate evaluations");
  se->add_option("--seed", se_seed, "search seed");
  se->add_option("--split-seed", se_split_seed);
  se->add_option("--calib-seed", se_calib_seed);
  se->add_option("--history", se_history, "write per-iteration CSV here");
  se->add_option("--config", se_config, "JSON config overriding defaults");

  // ---- flops ----
  auto* fl = app.add_subcommand("flops", "multiply-add count of a gene");
  std::string fl_template, fl_gene;
  fl->add_option("--template", fl_template)->required();
  fl->add_option("--gene", fl_gene, "c1/c2/.../cl, full, or uniform:<ratio>")->required();

  // ---- latency-gen ----
  auto* lg = app.add_subcommand("latency-gen", "synthesize a latency lookup table");
  std::string lg_template, lg_out;
  double lg_a = 0.0, lg_b = 1e-6, lg_noise = 0.0;
  uint64_t lg_seed = 0;
  lg->add_option("--template", lg_template)->required();
  lg->add_option("--out", lg_out, "CSV output path")->required();
  lg->add_option("--a", lg_a, "fixed microseconds per layer");
  lg->add_option("--b", lg_b, "microseconds per multiply-add");
  lg->add_option("--noise", lg_noise, "uniform noise amplitude");
  lg->add_option("--seed", lg_seed, "noise seed");

  // ---- train-final ----
  auto* tf = app.add_subcommand("train-final", "train a pruned structure from scratch");
  std::string tf_template, tf_gene, tf_data, tf_test, tf_out, tf_results, tf_config;
  int tf_epochs = 40;
  uint64_t tf_seed = 0;
  CommonTrainFlags tf_flags;
  tf->add_option("--template", tf_template)->required();
  tf->add_option("--gene", tf_gene)->required();
  tf->add_option("--data", tf_data, "training data spec")->required();
  tf->add_option("--test-data", tf_test, "held-out test data spec")->required();
  tf->add_option("--epochs", tf_epochs, "training epochs");
  tf->add_option("--seed", tf_seed);
  tf->add_option("--out", tf_out, "trained-network checkpoint path");
  tf->add_option("--results", tf_results, "results JSON to create or update");
  tf->add_option("--config", tf_config, "JSON config overriding defaults");
  add_train_flags(tf, tf_flags);

  // ---- visualize ----
  auto* vz = app.add_subcommand("visualize", "per-layer channel CSV for a results file");
  std::string vz_results, vz_out;
  vz->add_option("--results", vz_results, "results JSON from search")->required();
  vz->add_option("--out", vz_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (tm->parsed()) {
    NetworkTemplate tmpl;
    Dataset sub_train, sub_val;
    json cfg;
    MetaTrainConfig mc;
    try {
      cfg = load_config(tm_config);
      cfg_override(*tm, "--epochs", cfg, "epochs", tm_epochs);
      cfg_override(*tm, "--baseline-epochs", cfg, "baseline_epochs", tm_baseline);
      cfg_override(*tm, "--holdout", cfg, "holdout", tm_holdout);
      apply_train_cfg(*tm, cfg, tm_flags);
      tmpl = load_template(tm_template);
      Dataset full = load_data_spec(tm_data, cfg);
      std::tie(sub_train, sub_val) = split_holdout(full, tm_holdout, tm_split_seed);
      mc.epochs = tm_epochs;
      mc.baseline_epochs = tm_baseline;
      mc.batch_size = tm_flags.batch_size;
      mc.lr = tm_flags.lr;
      mc.momentum = tm_flags.momentum;
      mc.weight_decay = tm_flags.weight_decay;
      mc.cosine = !tm_flags.no_cosine;
      mc.augment = parse_augment(tm_flags.augment);
      mc.seed = tm_seed;
    } catch (const std::exception& e) {
      return fail_setup(e);
    }
    try {
      Rng init_rng(tm_seed);
      PruningNet pnet = tm_direct ? make_direct_variant(tmpl, init_rng)
                                  : make_pruning_net(tmpl, init_rng);
      const auto log = train_meta(pnet, tmpl, sub_train, mc);
      save_pruning_net(tm_out, pnet);
      if (!tm_metrics.empty()) save_metrics_csv(tm_metrics, log);
      std::cout << "checkpoint " << tm_out << "\n";
      if (!log.empty())
        std::cout << "final_epoch_loss " << log.back().mean_loss << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail_run(e);
    }
  }

  if (se->parsed()) {
    NetworkTemplate tmpl;
    Dataset sub_train, sub_val;
    PruningNet pnet;
    Constraint constraint;
    SearchConfig sc;
    EvalConfig ec;
    try {
      const json cfg = load_config(se_config);
      cfg_override(*se, "--pop", cfg, "pop", se_pop);
      cfg_override(*se, "--topk", cfg, "topk", se_topk);
      cfg_override(*se, "--mutations", cfg, "mutations", se_mut);
      cfg_override(*se, "--crossovers", cfg, "crossovers", se_cross);
      cfg_override(*se, "--iters", cfg, "iters", se_iters);
      cfg_override(*se, "--p-mut", cfg, "p_mut", se_pmut);
      cfg_override(*se, "--holdout", cfg, "holdout", se_holdout);
      cfg_override(*se, "--calib-images", cfg, "calib_images", se_calib_images);
      cfg_override(*se, "--batch-size", cfg, "batch_size", se_batch);
      cfg_override(*se, "--workers", cfg, "workers", se_workers);
      tmpl = load_template(se_template);
      pnet = load_pruning_net(se_ckpt, tmpl);
      Dataset full = load_data_spec(se_data, cfg);
      std::tie(sub_train, sub_val) = split_holdout(full, se_holdout, se_split_seed);
      constraint = parse_constraint(se_constraint, tmpl);
      sc.population = se_pop;
      sc.topk = se_topk;
      sc.mutations = se_mut;
      sc.crossovers = se_cross;
      sc.iterations = se_iters;
      sc.p_mut = se_pmut;
      sc.seed = se_seed;
      sc.workers = se_workers;
      ec.batch_size = se_batch;
      ec.calib_images = se_calib_images;
      ec.calib_seed = se_calib_seed;
    } catch (const std::exception& e) {
      return fail_setup(e);
    }
    try {
      const Evaluator evaluator = make_search_evaluator(pnet, tmpl, sub_train, sub_val, ec);
      const SearchResult result = search(tmpl, constraint, evaluator, sc);
      if (!satisfies(tmpl, result.best.gene, constraint))
        throw std::runtime_error("internal error: best gene violates the constraint");
      json doc;
      doc["template"] = tmpl.name;
      doc["constraint"] = {{"kind", constraint.kind == ConstraintKind::Flops ? "flops" : "latency"},
                           {"budget", constraint.budget}};
      doc["gene"] = serialize_gene(result.best.gene);
      doc["flops"] = flops(tmpl, result.best.gene);
      if (constraint.kind == ConstraintKind::Latency)
        doc["latency_us"] = latency_us(tmpl, result.best.gene, *constraint.table);
      doc["subval_accuracy"] = result.best.fitness;
      doc["evaluations"] = result.evaluations;
      doc["seed"] = se_seed;
      write_json(se_out, doc);
      if (!se_history.empty()) save_history_csv(se_history, result.history);
      std::cout << "best_gene " << serialize_gene(result.best.gene) << "\n";
      std::cout << "subval_accuracy " << result.best.fitness << "\n";
      std::cout << "cost " << result.best.cost << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail_run(e);
    }
  }

  if (fl->parsed()) {
    try {
      const NetworkTemplate tmpl = load_template(fl_template);
      const Gene gene = parse_gene(fl_gene, tmpl);
      std::cout << flops(tmpl, gene) << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail_setup(e);
    }
  }

  if (lg->parsed()) {
    NetworkTemplate tmpl;
    try {
      tmpl = load_template(lg_template);
    } catch (const std::exception& e) {
      return fail_setup(e);
    }
    try {
      save_latency_csv(lg_out, synth_table(tmpl, lg_a, lg_b, lg_noise, lg_seed));
      std::cout << "table " << lg_out << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail_run(e);
    }
  }

  if (tf->parsed()) {
    NetworkTemplate tmpl;
    Gene gene;
    Dataset train, test;
    TrainConfig tc;
    try {
      const json cfg = load_config(tf_config);
      cfg_override(*tf, "--epochs", cfg, "epochs", tf_epochs);
      apply_train_cfg(*tf, cfg, tf_flags);
      tmpl = load_template(tf_template);
      gene = parse_gene(tf_gene, tmpl);
      train = load_data_spec(tf_data, cfg);
      test = load_data_spec(tf_test, cfg);
      tc.epochs = tf_epochs;
      tc.batch_size = tf_flags.batch_size;
      tc.lr = tf_flags.lr;
      tc.momentum = tf_flags.momentum;
      tc.weight_decay = tf_flags.weight_decay;
      tc.cosine = !tf_flags.no_cosine;
      tc.augment = parse_augment(tf_flags.augment);
      tc.seed = tf_seed;
    } catch (const std::exception& e) {
      return fail_setup(e);
    }
    try {
      ScratchResult result = train_from_scratch(tmpl, gene, train, test, tc);
      if (!tf_out.empty()) save_net_instance(tf_out, result.net);
      if (!tf_results.empty()) {
        json doc = read_results_file(tf_results);
        doc["template"] = tmpl.name;
        doc["gene"] = serialize_gene(gene);
        doc["flops"] = flops(tmpl, gene);
        doc["final_test_accuracy"] = result.test_accuracy;
        write_json(tf_results, doc);
      }
      std::cout << "test_accuracy " << result.test_accuracy << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail_run(e);
    }
  }

  if (vz->parsed()) {
    NetworkTemplate tmpl;
    Gene gene;
    try {
      std::ifstream is(vz_results);
      if (!is) throw std::invalid_argument("cannot open results file: " + vz_results);
      const json doc = json::parse(is);
      tmpl = load_template(doc.at("template").get<std::string>());
      gene = parse_gene(doc.at("gene").get<std::string>(), tmpl);
    } catch (const std::exception& e) {
      return fail_setup(e);
    }
    try {
      const auto channels = resolve_channels(tmpl, gene);
      std::ofstream os(vz_out, std::ios::trunc);
      if (!os) throw std::runtime_error("cannot open for writing: " + vz_out);
      os << "layer_id,is_downsampling,channels,max_channels\n";
      for (size_t li = 0; li < tmpl.layers.size(); ++li) {
        const LayerSpec& l = tmpl.layers[li];
        os << li << ',' << (l.is_downsampling ? 1 : 0) << ',' << channels[li].second << ','
           << l.max_out << '\n';
      }
      if (!os.good()) throw std::runtime_error("write failed: " + vz_out);
      std::cout << "csv " << vz_out << "\n";
      return 0;
    } catch (const std::exception& e) {
      return fail_run(e);
    }
  }

  return 0;
}
