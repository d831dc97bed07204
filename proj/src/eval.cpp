#include "prunekit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "prunekit/checkpoint.hpp"

namespace prunekit {

namespace {

uint64_t mix(uint64_t seed, uint64_t salt) {
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x ^ (x >> 31);
}

void check_geometry(const NetworkTemplate& tmpl, const Dataset& data, const std::string& what) {
  if (data.channels != tmpl.in_channels || data.height != tmpl.in_h || data.width != tmpl.in_w)
    throw std::invalid_argument(what + " geometry does not match template input " +
                                std::to_string(tmpl.in_channels) + "x" + std::to_string(tmpl.in_h) +
                                "x" + std::to_string(tmpl.in_w));
}

}  // namespace

std::vector<BNState> recalibrate_bn(const PruningNet& pnet, const NetworkTemplate& tmpl,
                                    const Gene& gene, const Dataset& calib, int n_images,
                                    int batch_size, uint64_t seed) {
  if (n_images < 1) throw std::invalid_argument("recalibration needs n_images >= 1");
  check_geometry(tmpl, calib, "calibration set");
  NetInstance net = generate_weights(pnet, tmpl, gene);
  for (size_t li = 0; li < net.bn_state.size(); ++li)
    if (net.bn_state[li].channels() > 0) net.bn_state[li] = BNState::init(net.bn_state[li].channels());
  BatchStream stream(calib, batch_size, Augment::None, seed);
  int64_t remaining = n_images;
  int epoch = 0;
  int64_t batches_seen = 0;
  while (remaining > 0) {
    stream.start_epoch(epoch++);
    while (remaining > 0) {
      auto batch = stream.next();
      if (!batch) break;
      // Cumulative average of batch statistics: momentum 1/(i+1) makes the
      // running stats the exact mean over all calibration batches, however
      // few there are.
      const double momentum = 1.0 / static_cast<double>(batches_seen + 1);
      net_forward(tmpl, net, batch->images, BNMode::Train, momentum);
      remaining -= batch->images.dim(0);
      ++batches_seen;
    }
  }
  return std::move(net.bn_state);
}

double dataset_accuracy(const NetworkTemplate& tmpl, NetInstance& net, const Dataset& data,
                        int batch_size) {
  if (data.size() == 0) throw std::invalid_argument("cannot evaluate on an empty dataset");
  check_geometry(tmpl, data, "evaluation set");
  BatchStream stream(data, batch_size, Augment::None, /*seed=*/0, /*shuffle=*/false);
  int64_t correct = 0;
  while (auto batch = stream.next()) {
    Tensor logits = net_forward(tmpl, net, batch->images, BNMode::Eval);
    const std::vector<int> pred = argmax_rows(logits);
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == batch->labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate(const PruningNet& pnet, const NetworkTemplate& tmpl, const Gene& gene,
                const Dataset& subval, const std::vector<BNState>* stats, int batch_size) {
  NetInstance net = generate_weights(pnet, tmpl, gene);
  if (stats) {
    if (stats->size() != net.bn_state.size())
      throw std::invalid_argument("recalibrated stats do not match the template layer count");
    for (size_t li = 0; li < net.bn_state.size(); ++li) {
      if (net.bn_state[li].channels() != (*stats)[li].channels())
        throw std::invalid_argument("recalibrated stats at layer " + std::to_string(li) +
                                    " have the wrong width for this gene");
      net.bn_state[li] = (*stats)[li];
    }
  }
  return dataset_accuracy(tmpl, net, subval, batch_size);
}

int resolve_calib_images(const EvalConfig& config, const Dataset& calib) {
  if (config.calib_images >= 1) return config.calib_images;
  return static_cast<int>(std::min<int64_t>(20000, calib.size()));
}

Evaluator make_search_evaluator(const PruningNet& pnet, const NetworkTemplate& tmpl,
                                const Dataset& sub_train, const Dataset& sub_val,
                                const EvalConfig& config) {
  const int n_images = resolve_calib_images(config, sub_train);
  return [&pnet, &tmpl, &sub_train, &sub_val, config, n_images](const Gene& gene) {
    const std::vector<BNState> stats = recalibrate_bn(pnet, tmpl, gene, sub_train, n_images,
                                                      config.batch_size, config.calib_seed);
    return evaluate(pnet, tmpl, gene, sub_val, &stats, config.batch_size);
  };
}

ScratchResult train_from_scratch(const NetworkTemplate& tmpl, const Gene& gene,
                                 const Dataset& train, const Dataset& test,
                                 const TrainConfig& config) {
  if (config.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  check_geometry(tmpl, train, "training set");
  if (train.num_classes != tmpl.num_classes)
    throw std::invalid_argument("dataset has " + std::to_string(train.num_classes) +
                                " classes but template expects " + std::to_string(tmpl.num_classes));
  ScratchResult result;
  Rng init_rng(mix(config.seed, 11));
  result.net = init_net(tmpl, gene, init_rng);
  if (config.epochs > 0) {
    std::vector<Tensor> params = net_parameters(result.net);
    Sgd opt(params, config.momentum, config.weight_decay);
    BatchStream stream(train, config.batch_size, config.augment, mix(config.seed, 12));
    const int64_t total_steps = static_cast<int64_t>(config.epochs) * stream.batches_per_epoch();
    int64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      stream.start_epoch(epoch);
      double loss_sum = 0.0;
      int64_t batches = 0;
      double lr = config.lr;
      while (auto batch = stream.next()) {
        lr = config.cosine ? config.lr * 0.5 *
                                 (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                 static_cast<double>(total_steps)))
                           : config.lr;
        Tape tape;
        Tensor logits = net_forward(tmpl, result.net, batch->images, BNMode::Train);
        Tensor loss = softmax_cross_entropy(logits, batch->labels);
        const double loss_val = loss.item();
        if (!std::isfinite(loss_val)) {
          std::ostringstream os;
          os << "training diverged: loss " << loss_val << " at epoch " << epoch << " step " << step
             << " (gene " << serialize_gene(gene) << ")";
          throw std::runtime_error(os.str());
        }
        tape.backward(loss);
        opt.step(lr);
        loss_sum += loss_val;
        ++batches;
        ++step;
      }
      result.log.push_back(EpochStats{epoch, loss_sum / static_cast<double>(batches), lr});
    }
  }
  result.test_accuracy = dataset_accuracy(tmpl, result.net, test, 64);
  return result;
}

void save_net_instance(const std::string& path, const NetInstance& net) {
  TensorMap map;
  map.emplace_back("meta.gene", Tensor({static_cast<int64_t>(net.gene.channels.size())},
                                       std::vector<double>(net.gene.channels.begin(),
                                                           net.gene.channels.end())));
  for (size_t li = 0; li < net.conv_w.size(); ++li) {
    if (!net.conv_w[li].defined()) continue;
    const std::string p = "layer" + std::to_string(li);
    map.emplace_back(p + ".w", net.conv_w[li]);
    map.emplace_back(p + ".bn.gamma", net.bn_gamma[li]);
    map.emplace_back(p + ".bn.beta", net.bn_beta[li]);
    map.emplace_back(p + ".bn.mean", Tensor({static_cast<int64_t>(net.bn_state[li].channels())},
                                            std::vector<double>(net.bn_state[li].running_mean)));
    map.emplace_back(p + ".bn.var", Tensor({static_cast<int64_t>(net.bn_state[li].channels())},
                                           std::vector<double>(net.bn_state[li].running_var)));
  }
  map.emplace_back("classifier.w", net.fc_w);
  map.emplace_back("classifier.b", net.fc_b);
  save_checkpoint(path, map);
}

}  // namespace prunekit
