#pragma once

#include <string>
#include <vector>

#include "prunekit/data.hpp"
#include "prunekit/netdef.hpp"
#include "prunekit/network.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class PNetMode { Predict, Direct };

// Two fully-connected layers mapping a layer's encoding ratios to its
// full-size weight matrix.
struct PruningBlock {
  Tensor fc1_w, fc1_b;  // [64, ratio_dim], [64]
  Tensor fc2_w, fc2_b;  // [w_numel, 64], [w_numel]
};

struct BnStore {
  Tensor gamma, beta;  // trainable, held at max width
  BNState state;       // running stats at max width
};

// The meta network. Predict mode owns one PruningBlock per generated conv
// layer; direct mode instead trains one max-width weight tensor per layer and
// crops it (the no-weight-prediction ablation). BN parameters and the
// classifier live at max width in both modes and are cropped per gene.
struct PruningNet {
  PNetMode mode = PNetMode::Predict;
  std::vector<PruningBlock> blocks;  // aligned with template layers
  std::vector<Tensor> direct_w;      // aligned with template layers (direct mode)
  std::vector<BnStore> bn;           // aligned with template layers
  Tensor fc_w, fc_b;

  std::vector<Tensor> parameters();
};

PruningNet make_pruning_net(const NetworkTemplate& tmpl, Rng& rng);
PruningNet make_direct_variant(const NetworkTemplate& tmpl, Rng& rng);

// Ratios -> fc1 -> relu -> fc2 -> reshape to the max-width weight -> crop to
// the gene's widths. BN parameters, running stats and classifier weights are
// cropped from their max-width stores. Differentiable back to the PruningNet
// parameters when a tape is active; pure function of (parameters, gene).
NetInstance generate_weights(const PruningNet& pnet, const NetworkTemplate& tmpl, const Gene& gene);

struct ForwardLossResult {
  Tensor loss;
  NetInstance net;
};

// Builds the pruned network for the gene and computes the batch
// cross-entropy with BN in train mode. Backward reaches PruningNet
// parameters only; the generated weights are intermediates.
ForwardLossResult forward_loss(const PruningNet& pnet, const NetworkTemplate& tmpl, const Gene& gene,
                               const Tensor& images, const std::vector<int>& labels);

// Copies the instance's (post-forward) BN running stats back into the
// leading entries of the max-width stores.
void absorb_bn_state(PruningNet& pnet, const NetInstance& net);

struct MetaTrainConfig {
  int epochs = -1;  // -1: baseline_epochs / 4
  int baseline_epochs = 40;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool cosine = true;
  Augment augment = Augment::None;
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

// Stochastic structure sampling: a fresh random gene per step, loss through
// the generated weights, SGD on the PruningNet parameters.
std::vector<EpochStats> train_meta(PruningNet& pnet, const NetworkTemplate& tmpl,
                                   const Dataset& train, const MetaTrainConfig& config);

void save_metrics_csv(const std::string& path, const std::vector<EpochStats>& log);

void save_pruning_net(const std::string& path, const PruningNet& pnet);
PruningNet load_pruning_net(const std::string& path, const NetworkTemplate& tmpl);

}  // namespace prunekit
