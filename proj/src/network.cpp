#include "prunekit/network.hpp"

#include <cmath>
#include <stdexcept>

namespace prunekit {

namespace {

Tensor apply_layer(const NetworkTemplate& tmpl, NetInstance& net, size_t li, const Tensor& x,
                   BNMode mode, double bn_momentum, bool allow_relu) {
  const LayerSpec& l = tmpl.layers[li];
  Tensor y = l.kind == LayerKind::Depthwise
                 ? depthwise_conv2d(x, net.conv_w[li], l.stride, l.pad)
                 : conv2d(x, net.conv_w[li], l.stride, l.pad);
  y = batchnorm(y, net.bn_gamma[li], net.bn_beta[li], net.bn_state[li], mode, bn_momentum);
  if (allow_relu && l.relu_after) y = relu(y);
  return y;
}

}  // namespace

Tensor net_forward(const NetworkTemplate& tmpl, NetInstance& net, const Tensor& images, BNMode mode,
                   double bn_momentum) {
  if (images.rank() != 4 || images.dim(1) != tmpl.in_channels)
    throw std::invalid_argument("input batch " + shape_str(images.shape()) +
                                " does not match template input of " +
                                std::to_string(tmpl.in_channels) + " channels");
  Tensor x = images;
  size_t li = 0;
  while (li < tmpl.layers.size()) {
    const LayerSpec& l = tmpl.layers[li];
    if (l.kind == LayerKind::Linear) {
      x = global_avg_pool(x);
      x = linear(x, net.fc_w, net.fc_b);
      ++li;
      continue;
    }
    if (l.block >= 0) {
      const BlockSpec& b = tmpl.blocks[static_cast<size_t>(l.block)];
      Tensor block_in = x;
      for (size_t k = 0; k < b.layers.size(); ++k) {
        const auto bl = static_cast<size_t>(b.layers[k]);
        const bool last = k + 1 == b.layers.size();
        x = apply_layer(tmpl, net, bl, x, mode, bn_momentum, /*allow_relu=*/!last);
      }
      if (b.has_shortcut) x = add(x, block_in);
      x = relu(x);
      li = static_cast<size_t>(b.layers.back()) + 1;
      continue;
    }
    x = apply_layer(tmpl, net, li, x, mode, bn_momentum, /*allow_relu=*/true);
    ++li;
  }
  return x;
}

NetInstance init_net(const NetworkTemplate& tmpl, const Gene& gene, Rng& rng) {
  validate_gene(tmpl, gene, GeneCheck::Structural);
  NetInstance net;
  net.gene = gene;
  net.channels = resolve_channels(tmpl, gene);
  net.conv_w.resize(tmpl.layers.size());
  net.bn_gamma.resize(tmpl.layers.size());
  net.bn_beta.resize(tmpl.layers.size());
  net.bn_state.resize(tmpl.layers.size());
  for (size_t li = 0; li < tmpl.layers.size(); ++li) {
    const LayerSpec& l = tmpl.layers[li];
    const auto [cin, cout] = net.channels[li];
    if (l.kind == LayerKind::Linear) {
      const double std = std::sqrt(1.0 / cin);
      net.fc_w = Tensor::randn({cout, cin}, rng, std).set_requires_grad(true);
      net.fc_b = Tensor::zeros({cout}).set_requires_grad(true);
      continue;
    }
    const int64_t fan_in =
        l.kind == LayerKind::Depthwise ? static_cast<int64_t>(l.kh) * l.kw
                                       : static_cast<int64_t>(cin) * l.kh * l.kw;
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    const Shape wshape = l.kind == LayerKind::Depthwise ? Shape{cout, 1, l.kh, l.kw}
                                                        : Shape{cout, cin, l.kh, l.kw};
    net.conv_w[li] = Tensor::randn(wshape, rng, std).set_requires_grad(true);
    net.bn_gamma[li] = Tensor::full({cout}, 1.0).set_requires_grad(true);
    net.bn_beta[li] = Tensor::zeros({cout}).set_requires_grad(true);
    net.bn_state[li] = BNState::init(cout);
  }
  return net;
}

std::vector<Tensor> net_parameters(NetInstance& net) {
  std::vector<Tensor> params;
  for (size_t i = 0; i < net.conv_w.size(); ++i) {
    if (!net.conv_w[i].defined()) continue;
    params.push_back(net.conv_w[i]);
    params.push_back(net.bn_gamma[i]);
    params.push_back(net.bn_beta[i]);
  }
  params.push_back(net.fc_w);
  params.push_back(net.fc_b);
  return params;
}

}  // namespace prunekit
