#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "prunekit/checkpoint.hpp"
#include "prunekit/eval.hpp"

using namespace prunekit;

namespace {

NetworkTemplate toy_chain3(int classes) {
  TemplateBuilder b("toy-chain3", 3, 8, 8, classes);
  const int a0 = b.add_axis("c0", 8, AxisKind::Chain);
  const int a1 = b.add_axis("c1", 12, AxisKind::Chain);
  const int a2 = b.add_axis("c2", 16, AxisKind::Chain);
  b.add_conv(a0, 3, 1, 1);
  b.add_separable(a1, 3, 2, 1, true);
  b.add_separable(a2, 3, 1, 1);
  b.add_classifier();
  return b.finalize();
}

double state_checksum(const PruningNet& pnet) {
  double acc = 0.0;
  int64_t i = 1;
  auto feed = [&](const Tensor& t) {
    if (!t.defined()) return;
    for (const double v : t.buffer()) acc += v * static_cast<double>(i++ % 89);
  };
  for (const auto& b : pnet.blocks) {
    feed(b.fc1_w);
    feed(b.fc1_b);
    feed(b.fc2_w);
    feed(b.fc2_b);
  }
  for (const auto& bn : pnet.bn) {
    feed(bn.gamma);
    feed(bn.beta);
    for (double v : bn.state.running_mean) acc += v * static_cast<double>(i++ % 89);
    for (double v : bn.state.running_var) acc += v * static_cast<double>(i++ % 89);
  }
  feed(pnet.fc_w);
  feed(pnet.fc_b);
  return acc;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("recalibration converges to the stream's batch statistics") {
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(1);
  const PruningNet pnet = make_pruning_net(tmpl, rng);
  const Gene g{{4, 6, 8}};

  // 32 identical images so every batch carries the same statistics
  Dataset ds = synth_blobs(4, 1, 3, 8, 8, 2, 0.0);
  Dataset repeated;
  repeated.channels = ds.channels;
  repeated.height = ds.height;
  repeated.width = ds.width;
  repeated.num_classes = 4;
  for (int i = 0; i < 32; ++i) {
    repeated.images.insert(repeated.images.end(), ds.images.begin(),
                           ds.images.begin() + ds.image_elems());
    repeated.labels.push_back(0);
  }

  const auto stats = recalibrate_bn(pnet, tmpl, g, repeated, 32 * 400, 32, 3);

  // expected layer-0 statistics: channel means/vars of conv(x) on that batch
  NetInstance net = generate_weights(pnet, tmpl, g);
  BatchStream stream(repeated, 32, Augment::None, 0, false);
  auto batch = stream.next();
  REQUIRE(batch);
  Tensor y = conv2d(batch->images, net.conv_w[0], tmpl.layers[0].stride, tmpl.layers[0].pad);
  const int64_t c = y.dim(1), plane = y.dim(2) * y.dim(3), n = y.dim(0);
  for (int64_t ci = 0; ci < c; ++ci) {
    double s = 0.0, sq = 0.0;
    for (int64_t bi = 0; bi < n; ++bi)
      for (int64_t p = 0; p < plane; ++p) {
        const double v = y.data()[(bi * c + ci) * plane + p];
        s += v;
        sq += v * v;
      }
    const double mean = s / static_cast<double>(n * plane);
    const double var = sq / static_cast<double>(n * plane) - mean * mean;
    CHECK(stats[0].running_mean[static_cast<size_t>(ci)] == doctest::Approx(mean).epsilon(1e-6));
    CHECK(stats[0].running_var[static_cast<size_t>(ci)] ==
          doctest::Approx(var).epsilon(1e-6).scale(1.0));
  }

  CHECK_THROWS_AS(recalibrate_bn(pnet, tmpl, g, repeated, 0), std::invalid_argument);
}

TEST_CASE("calibration image count defaults to min(20000, n)") {
  Dataset small;
  small.labels.assign(120, 0);
  EvalConfig config;
  CHECK(resolve_calib_images(config, small) == 120);
  Dataset big;
  big.labels.assign(60000, 0);
  CHECK(resolve_calib_images(config, big) == 20000);
  config.calib_images = 512;
  CHECK(resolve_calib_images(config, big) == 512);
}

TEST_CASE("evaluations never mutate the shared meta network") {
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(5);
  const PruningNet pnet = make_pruning_net(tmpl, rng);
  const Dataset calib = synth_blobs(4, 30, 3, 8, 8, 6, 0.3);
  const Dataset subval = synth_blobs(4, 10, 3, 8, 8, 7, 0.3, /*sample_salt=*/1);
  const double before = state_checksum(pnet);
  Rng genes(8);
  for (int i = 0; i < 2; ++i) {
    const Gene g = sample_gene(tmpl, genes);
    const auto stats = recalibrate_bn(pnet, tmpl, g, calib, 64, 16, 9);
    evaluate(pnet, tmpl, g, subval, &stats, 16);
    evaluate(pnet, tmpl, g, subval, nullptr, 16);
  }
  CHECK(state_checksum(pnet) == before);
}

TEST_CASE("an untrained network scores at chance level") {
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(10);
  const PruningNet pnet = make_pruning_net(tmpl, rng);
  const Dataset subval = synth_blobs(4, 50, 3, 8, 8, 11, 0.3);  // 200 balanced images
  const double acc = evaluate(pnet, tmpl, pnet.mode == PNetMode::Predict
                                              ? Gene{{4, 6, 8}}
                                              : Gene{{4, 6, 8}},
                              subval);
  const double sigma = std::sqrt(0.25 * 0.75 / 200.0);
  CHECK(std::fabs(acc - 0.25) < 3.0 * sigma);
}

TEST_CASE("evaluation is deterministic") {
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(12);
  const PruningNet pnet = make_pruning_net(tmpl, rng);
  const Dataset calib = synth_blobs(4, 20, 3, 8, 8, 13, 0.3);
  const Dataset subval = synth_blobs(4, 15, 3, 8, 8, 13, 0.3, 1);
  const Evaluator f = make_search_evaluator(pnet, tmpl, calib, subval, EvalConfig{16, -1, 14});
  const Gene g{{6, 9, 12}};
  CHECK(f(g) == f(g));
}

TEST_CASE("evaluate validates inputs") {
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(15);
  const PruningNet pnet = make_pruning_net(tmpl, rng);
  Dataset empty;
  empty.channels = 3;
  empty.height = 8;
  empty.width = 8;
  empty.num_classes = 4;
  CHECK_THROWS_AS(evaluate(pnet, tmpl, Gene{{4, 6, 8}}, empty), std::invalid_argument);

  // stats computed for a different gene do not fit
  const Dataset calib = synth_blobs(4, 10, 3, 8, 8, 16, 0.3);
  const auto stats = recalibrate_bn(pnet, tmpl, Gene{{8, 6, 8}}, calib, 16, 8, 1);
  CHECK_THROWS_AS(evaluate(pnet, tmpl, Gene{{4, 6, 8}}, calib, &stats), std::invalid_argument);
}

TEST_CASE("recalibrated stats beat stale stats after meta training") {
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(17);
  PruningNet pnet = make_pruning_net(tmpl, rng);
  const Dataset train = synth_blobs(4, 60, 3, 8, 8, 18, 0.4);
  const Dataset subval = synth_blobs(4, 25, 3, 8, 8, 18, 0.4, /*sample_salt=*/2);
  MetaTrainConfig mc;
  mc.epochs = 4;
  mc.batch_size = 16;
  mc.seed = 19;
  train_meta(pnet, tmpl, train, mc);

  std::vector<double> deltas;
  Rng genes(20);
  for (int i = 0; i < 10; ++i) {
    const Gene g = sample_gene(tmpl, genes);
    const auto stats = recalibrate_bn(pnet, tmpl, g, train, 128, 16, 21);
    const double recal = evaluate(pnet, tmpl, g, subval, &stats, 16);
    const double stale = evaluate(pnet, tmpl, g, subval, nullptr, 16);
    deltas.push_back(recal - stale);
  }
  std::sort(deltas.begin(), deltas.end());
  const double median = 0.5 * (deltas[4] + deltas[5]);
  CHECK(median >= 0.0);
}

TEST_CASE("from-scratch training reaches high accuracy on separable blobs") {
  const NetworkTemplate tmpl = toy_chain3(4);
  const Dataset train = synth_blobs(4, 40, 3, 8, 8, 22, 0.3);
  const Dataset test = synth_blobs(4, 20, 3, 8, 8, 22, 0.3, /*sample_salt=*/3);
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.lr = 0.05;
  tc.seed = 23;
  const ScratchResult trained = train_from_scratch(tmpl, full_gene(tmpl), train, test, tc);
  CHECK(trained.test_accuracy > 0.9);

  TrainConfig zero = tc;
  zero.epochs = 0;
  const ScratchResult untrained = train_from_scratch(tmpl, full_gene(tmpl), train, test, zero);
  const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(test.size()));
  CHECK(std::fabs(untrained.test_accuracy - 0.25) < 3.0 * sigma);

  const ScratchResult again = train_from_scratch(tmpl, full_gene(tmpl), train, test, tc);
  CHECK(again.test_accuracy == trained.test_accuracy);
}

TEST_CASE("trained instances serialize with their gene") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "pk_eval";
  fs::create_directories(dir);
  const NetworkTemplate tmpl = toy_chain3(4);
  Rng rng(25);
  const Gene g{{4, 6, 8}};
  NetInstance net = init_net(tmpl, g, rng);
  const std::string path = (dir / "final.ckpt").string();
  save_net_instance(path, net);
  const TensorMap map = load_checkpoint(path);
  const Tensor& gene_t = find_tensor(map, "meta.gene");
  REQUIRE(gene_t.numel() == 3);
  CHECK(gene_t.buffer() == std::vector<double>{4, 6, 8});
  CHECK(find_tensor(map, "layer0.w").shape() == Shape{4, 3, 3, 3});
}

}  // TEST_SUITE
