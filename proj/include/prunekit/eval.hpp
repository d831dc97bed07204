#pragma once

#include <string>
#include <vector>

#include "prunekit/data.hpp"
#include "prunekit/evosearch.hpp"
#include "prunekit/pruningnet.hpp"

namespace prunekit {

// Fresh BN running stats for this gene, accumulated over n_images forward
// passes in train mode. Works on a private instance; the shared PruningNet is
// never touched.
std::vector<BNState> recalibrate_bn(const PruningNet& pnet, const NetworkTemplate& tmpl,
                                    const Gene& gene, const Dataset& calib, int n_images,
                                    int batch_size = 64, uint64_t seed = 0);

// Top-1 accuracy on `subval` with generated weights. Uses the supplied
// recalibrated stats, or the PruningNet's stored (stale) stats when absent.
double evaluate(const PruningNet& pnet, const NetworkTemplate& tmpl, const Gene& gene,
                const Dataset& subval, const std::vector<BNState>* stats = nullptr,
                int batch_size = 64);

struct EvalConfig {
  int batch_size = 64;
  int calib_images = -1;  // -1: min(20000, calibration set size)
  uint64_t calib_seed = 0;
};

int resolve_calib_images(const EvalConfig& config, const Dataset& calib);

// evaluate after recalibrate_bn with a fixed calibration seed; deterministic
// per gene and safe for concurrent use.
Evaluator make_search_evaluator(const PruningNet& pnet, const NetworkTemplate& tmpl,
                                const Dataset& sub_train, const Dataset& sub_val,
                                const EvalConfig& config = {});

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool cosine = true;
  Augment augment = Augment::None;
  uint64_t seed = 0;
};

struct ScratchResult {
  NetInstance net;
  double test_accuracy = 0.0;
  std::vector<EpochStats> log;
};

// Random init at the gene's widths, plain SGD training, test accuracy with
// the running stats gathered during training.
ScratchResult train_from_scratch(const NetworkTemplate& tmpl, const Gene& gene,
                                 const Dataset& train, const Dataset& test,
                                 const TrainConfig& config);

// Eval-mode top-1 accuracy of an instance over a dataset.
double dataset_accuracy(const NetworkTemplate& tmpl, NetInstance& net, const Dataset& data,
                        int batch_size = 64);

void save_net_instance(const std::string& path, const NetInstance& net);

}  // namespace prunekit
