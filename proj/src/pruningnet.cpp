#include "prunekit/pruningnet.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "prunekit/checkpoint.hpp"

namespace prunekit {

namespace {

constexpr int kHidden = 64;

uint64_t mix(uint64_t seed, uint64_t salt) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x ^ (x >> 31);
}

int max_in_of(const NetworkTemplate& tmpl, const LayerSpec& l) {
  return l.in_axis >= 0 ? tmpl.axes[static_cast<size_t>(l.in_axis)].max_channels : l.fixed_in;
}

Shape full_weight_shape(const NetworkTemplate& tmpl, const LayerSpec& l) {
  if (l.kind == LayerKind::Depthwise) return {l.max_out, 1, l.kh, l.kw};
  return {l.max_out, max_in_of(tmpl, l), l.kh, l.kw};
}

double weight_target_std(const NetworkTemplate& tmpl, const LayerSpec& l) {
  const int64_t fan_in = l.kind == LayerKind::Depthwise
                             ? static_cast<int64_t>(l.kh) * l.kw
                             : static_cast<int64_t>(max_in_of(tmpl, l)) * l.kh * l.kw;
  return std::sqrt(2.0 / static_cast<double>(fan_in));
}

int ratio_dim_of(const LayerSpec& l) { return l.block >= 0 ? 3 : 2; }

const LayerSpec& classifier_of(const NetworkTemplate& tmpl) { return tmpl.layers.back(); }

PruningNet make_net(const NetworkTemplate& tmpl, Rng& rng, PNetMode mode) {
  PruningNet pnet;
  pnet.mode = mode;
  pnet.blocks.resize(tmpl.layers.size());
  pnet.direct_w.resize(tmpl.layers.size());
  pnet.bn.resize(tmpl.layers.size());
  for (size_t li = 0; li < tmpl.layers.size(); ++li) {
    const LayerSpec& l = tmpl.layers[li];
    if (l.kind == LayerKind::Linear) continue;
    const Shape wshape = full_weight_shape(tmpl, l);
    const double target = weight_target_std(tmpl, l);
    if (mode == PNetMode::Predict) {
      PruningBlock& b = pnet.blocks[li];
      const int dim = ratio_dim_of(l);
      const int64_t w_numel = shape_numel(wshape);
      b.fc1_w = Tensor::randn({kHidden, dim}, rng, std::sqrt(2.0 / dim)).set_requires_grad(true);
      b.fc1_b = Tensor::zeros({kHidden}).set_requires_grad(true);
      // fc2 bias carries the Kaiming-scale init of the generated weight; the
      // matrix path starts small and learns the encoding dependence.
      b.fc2_w = Tensor::randn({w_numel, kHidden}, rng, target / 8.0).set_requires_grad(true);
      b.fc2_b = Tensor::randn({w_numel}, rng, target).set_requires_grad(true);
    } else {
      pnet.direct_w[li] = Tensor::randn(wshape, rng, target).set_requires_grad(true);
    }
    BnStore& bn = pnet.bn[li];
    bn.gamma = Tensor::full({l.max_out}, 1.0).set_requires_grad(true);
    bn.beta = Tensor::zeros({l.max_out}).set_requires_grad(true);
    bn.state = BNState::init(l.max_out);
  }
  const LayerSpec& fc = classifier_of(tmpl);
  const int max_last = max_in_of(tmpl, fc);
  pnet.fc_w = Tensor::randn({fc.max_out, max_last}, rng, std::sqrt(1.0 / max_last))
                  .set_requires_grad(true);
  pnet.fc_b = Tensor::zeros({fc.max_out}).set_requires_grad(true);
  return pnet;
}

}  // namespace

std::vector<Tensor> PruningNet::parameters() {
  std::vector<Tensor> params;
  for (size_t li = 0; li < bn.size(); ++li) {
    if (!bn[li].gamma.defined()) continue;
    if (mode == PNetMode::Predict) {
      params.push_back(blocks[li].fc1_w);
      params.push_back(blocks[li].fc1_b);
      params.push_back(blocks[li].fc2_w);
      params.push_back(blocks[li].fc2_b);
    } else {
      params.push_back(direct_w[li]);
    }
    params.push_back(bn[li].gamma);
    params.push_back(bn[li].beta);
  }
  params.push_back(fc_w);
  params.push_back(fc_b);
  return params;
}

PruningNet make_pruning_net(const NetworkTemplate& tmpl, Rng& rng) {
  return make_net(tmpl, rng, PNetMode::Predict);
}

PruningNet make_direct_variant(const NetworkTemplate& tmpl, Rng& rng) {
  return make_net(tmpl, rng, PNetMode::Direct);
}

NetInstance generate_weights(const PruningNet& pnet, const NetworkTemplate& tmpl, const Gene& gene) {
  if (pnet.bn.size() != tmpl.layers.size())
    throw std::invalid_argument("PruningNet was built for a different template");
  const auto ratios = decode_ratios(tmpl, gene);
  NetInstance net;
  net.gene = gene;
  net.channels = resolve_channels(tmpl, gene);
  net.conv_w.resize(tmpl.layers.size());
  net.bn_gamma.resize(tmpl.layers.size());
  net.bn_beta.resize(tmpl.layers.size());
  net.bn_state.resize(tmpl.layers.size());
  for (size_t li = 0; li < tmpl.layers.size(); ++li) {
    const LayerSpec& l = tmpl.layers[li];
    if (l.kind == LayerKind::Linear) continue;
    const auto [cin, cout] = net.channels[li];
    const Shape full_shape = full_weight_shape(tmpl, l);
    const Shape crop_shape = l.kind == LayerKind::Depthwise ? Shape{cout, 1, l.kh, l.kw}
                                                            : Shape{cout, cin, l.kh, l.kw};
    if (pnet.mode == PNetMode::Predict) {
      const PruningBlock& b = pnet.blocks[li];
      Tensor r({1, static_cast<int64_t>(ratios[li].size())}, std::vector<double>(ratios[li]));
      Tensor hidden = relu(linear(r, b.fc1_w, b.fc1_b));
      Tensor flat = linear(hidden, b.fc2_w, b.fc2_b);
      net.conv_w[li] = crop(reshape(flat, full_shape), crop_shape);
    } else {
      net.conv_w[li] = crop(pnet.direct_w[li], crop_shape);
    }
    const BnStore& bn = pnet.bn[li];
    net.bn_gamma[li] = crop(bn.gamma, {cout});
    net.bn_beta[li] = crop(bn.beta, {cout});
    BNState s;
    s.running_mean.assign(bn.state.running_mean.begin(), bn.state.running_mean.begin() + cout);
    s.running_var.assign(bn.state.running_var.begin(), bn.state.running_var.begin() + cout);
    net.bn_state[li] = std::move(s);
  }
  const auto [c_last, classes] = net.channels.back();
  net.fc_w = crop(pnet.fc_w, {classes, c_last});
  net.fc_b = pnet.fc_b;
  return net;
}

ForwardLossResult forward_loss(const PruningNet& pnet, const NetworkTemplate& tmpl, const Gene& gene,
                               const Tensor& images, const std::vector<int>& labels) {
  NetInstance net = generate_weights(pnet, tmpl, gene);
  Tensor logits = net_forward(tmpl, net, images, BNMode::Train);
  Tensor loss = softmax_cross_entropy(logits, labels);
  return {loss, std::move(net)};
}

void absorb_bn_state(PruningNet& pnet, const NetInstance& net) {
  for (size_t li = 0; li < pnet.bn.size(); ++li) {
    if (!pnet.bn[li].gamma.defined() || net.bn_state[li].channels() == 0) continue;
    const BNState& s = net.bn_state[li];
    std::copy(s.running_mean.begin(), s.running_mean.end(), pnet.bn[li].state.running_mean.begin());
    std::copy(s.running_var.begin(), s.running_var.end(), pnet.bn[li].state.running_var.begin());
  }
}

std::vector<EpochStats> train_meta(PruningNet& pnet, const NetworkTemplate& tmpl,
                                   const Dataset& train, const MetaTrainConfig& config) {
  if (train.channels != tmpl.in_channels || train.height != tmpl.in_h || train.width != tmpl.in_w)
    throw std::invalid_argument("dataset geometry does not match template input " +
                                std::to_string(tmpl.in_channels) + "x" + std::to_string(tmpl.in_h) +
                                "x" + std::to_string(tmpl.in_w));
  if (train.num_classes != tmpl.num_classes)
    throw std::invalid_argument("dataset has " + std::to_string(train.num_classes) +
                                " classes but template expects " + std::to_string(tmpl.num_classes));
  const int epochs = config.epochs >= 0 ? config.epochs : config.baseline_epochs / 4;
  std::vector<EpochStats> log;
  if (epochs == 0) return log;

  std::vector<Tensor> params = pnet.parameters();
  Sgd opt(params, config.momentum, config.weight_decay);
  Rng gene_rng(mix(config.seed, 1));
  BatchStream stream(train, config.batch_size, config.augment, mix(config.seed, 2));
  const int64_t total_steps = static_cast<int64_t>(epochs) * stream.batches_per_epoch();
  int64_t step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    stream.start_epoch(epoch);
    double loss_sum = 0.0;
    int64_t batches = 0;
    double lr = config.lr;
    while (auto batch = stream.next()) {
      lr = config.cosine ? config.lr * 0.5 *
                               (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                               static_cast<double>(total_steps)))
                         : config.lr;
      const Gene gene = sample_gene(tmpl, gene_rng);
      Tape tape;
      ForwardLossResult result = forward_loss(pnet, tmpl, gene, batch->images, batch->labels);
      const double loss = result.loss.item();
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "meta training diverged: loss " << loss << " at epoch " << epoch << " step " << step
           << " (gene " << serialize_gene(gene) << ")";
        throw std::runtime_error(os.str());
      }
      tape.backward(result.loss);
      opt.step(lr);
      absorb_bn_state(pnet, result.net);
      loss_sum += loss;
      ++batches;
      ++step;
    }
    log.push_back(EpochStats{epoch, loss_sum / static_cast<double>(batches), lr});
  }
  return log;
}

void save_metrics_csv(const std::string& path, const std::vector<EpochStats>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open metrics csv for writing: " + path);
  os << "epoch,mean_loss,lr\n";
  os.precision(17);
  for (const EpochStats& e : log) os << e.epoch << ',' << e.mean_loss << ',' << e.lr << '\n';
  if (!os.good()) throw std::runtime_error("write failed for metrics csv: " + path);
}

// ---- checkpoint ----

namespace {

Tensor stats_tensor(const std::vector<double>& v) {
  return Tensor({static_cast<int64_t>(v.size())}, std::vector<double>(v));
}

std::string layer_prefix(size_t li) { return "layer" + std::to_string(li); }

}  // namespace

void save_pruning_net(const std::string& path, const PruningNet& pnet) {
  TensorMap map;
  map.emplace_back("meta.mode",
                   Tensor({1}, std::vector<double>{pnet.mode == PNetMode::Direct ? 1.0 : 0.0}));
  for (size_t li = 0; li < pnet.bn.size(); ++li) {
    if (!pnet.bn[li].gamma.defined()) continue;
    const std::string p = layer_prefix(li);
    if (pnet.mode == PNetMode::Predict) {
      map.emplace_back(p + ".fc1.w", pnet.blocks[li].fc1_w);
      map.emplace_back(p + ".fc1.b", pnet.blocks[li].fc1_b);
      map.emplace_back(p + ".fc2.w", pnet.blocks[li].fc2_w);
      map.emplace_back(p + ".fc2.b", pnet.blocks[li].fc2_b);
    } else {
      map.emplace_back(p + ".w", pnet.direct_w[li]);
    }
    map.emplace_back(p + ".bn.gamma", pnet.bn[li].gamma);
    map.emplace_back(p + ".bn.beta", pnet.bn[li].beta);
    map.emplace_back(p + ".bn.mean", stats_tensor(pnet.bn[li].state.running_mean));
    map.emplace_back(p + ".bn.var", stats_tensor(pnet.bn[li].state.running_var));
  }
  map.emplace_back("classifier.w", pnet.fc_w);
  map.emplace_back("classifier.b", pnet.fc_b);
  save_checkpoint(path, map);
}

PruningNet load_pruning_net(const std::string& path, const NetworkTemplate& tmpl) {
  const TensorMap map = load_checkpoint(path);
  const double mode_flag = find_tensor(map, "meta.mode").item();
  const PNetMode mode = mode_flag == 1.0 ? PNetMode::Direct : PNetMode::Predict;

  auto take = [&](const std::string& name, const Shape& want) {
    Tensor t = find_tensor(map, name).clone();
    if (t.shape() != want)
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) +
                               " but the template needs " + shape_str(want));
    return t.set_requires_grad(true);
  };

  PruningNet pnet;
  pnet.mode = mode;
  pnet.blocks.resize(tmpl.layers.size());
  pnet.direct_w.resize(tmpl.layers.size());
  pnet.bn.resize(tmpl.layers.size());
  for (size_t li = 0; li < tmpl.layers.size(); ++li) {
    const LayerSpec& l = tmpl.layers[li];
    if (l.kind == LayerKind::Linear) continue;
    const std::string p = layer_prefix(li);
    const Shape wshape = full_weight_shape(tmpl, l);
    if (mode == PNetMode::Predict) {
      PruningBlock& b = pnet.blocks[li];
      const int dim = ratio_dim_of(l);
      b.fc1_w = take(p + ".fc1.w", {kHidden, dim});
      b.fc1_b = take(p + ".fc1.b", {kHidden});
      b.fc2_w = take(p + ".fc2.w", {shape_numel(wshape), kHidden});
      b.fc2_b = take(p + ".fc2.b", {shape_numel(wshape)});
    } else {
      pnet.direct_w[li] = take(p + ".w", wshape);
    }
    BnStore& bn = pnet.bn[li];
    bn.gamma = take(p + ".bn.gamma", {l.max_out});
    bn.beta = take(p + ".bn.beta", {l.max_out});
    bn.state.running_mean = find_tensor(map, p + ".bn.mean").buffer();
    bn.state.running_var = find_tensor(map, p + ".bn.var").buffer();
    if (bn.state.channels() != l.max_out ||
        bn.state.running_var.size() != static_cast<size_t>(l.max_out))
      throw std::runtime_error("checkpoint BN stats for " + p + " have the wrong width");
  }
  const LayerSpec& fc = classifier_of(tmpl);
  pnet.fc_w = take("classifier.w", {fc.max_out, max_in_of(tmpl, fc)});
  pnet.fc_b = take("classifier.b", {fc.max_out});
  return pnet;
}

}  // namespace prunekit
