#pragma once

#include <utility>
#include <vector>

#include "prunekit/netdef.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

// A concrete network at specific widths: conv weights, BN parameters and
// running stats, classifier. Produced by the weight generator or by random
// init for from-scratch training.
struct NetInstance {
  Gene gene;
  std::vector<std::pair<int, int>> channels;  // per layer (c_in, c_out)
  std::vector<Tensor> conv_w;                 // aligned with template layers
  std::vector<Tensor> bn_gamma;
  std::vector<Tensor> bn_beta;
  std::vector<BNState> bn_state;
  Tensor fc_w, fc_b;
};

// Full forward pass: conv/BN/relu chain, residual adds inside blocks, global
// average pool, classifier. Train mode updates the instance's BN states.
Tensor net_forward(const NetworkTemplate& tmpl, NetInstance& net, const Tensor& images, BNMode mode,
                   double bn_momentum = 0.1);

// Fresh network at the gene's widths, Kaiming-style init.
NetInstance init_net(const NetworkTemplate& tmpl, const Gene& gene, Rng& rng);

std::vector<Tensor> net_parameters(NetInstance& net);

}  // namespace prunekit
