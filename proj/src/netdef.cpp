#include "prunekit/netdef.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace prunekit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace

AxisRange axis_range(int max_channels) {
  check(max_channels >= 1, "axis max_channels must be >= 1");
  AxisRange r;
  r.max = max_channels;
  r.min = std::max(1, static_cast<int>(std::floor(0.1 * max_channels)));
  r.step = std::max(1, static_cast<int>(std::floor(0.03 * max_channels)));
  return r;
}

std::vector<AxisRange> channel_space(const NetworkTemplate& tmpl) {
  std::vector<AxisRange> out;
  out.reserve(tmpl.axes.size());
  for (const AxisSpec& a : tmpl.axes) out.push_back(axis_range(a.max_channels));
  return out;
}

std::vector<int> axis_grid(const AxisRange& range) {
  std::vector<int> grid;
  for (int c = range.min; c <= range.max; c += range.step) grid.push_back(c);
  if (grid.back() != range.max) grid.push_back(range.max);
  return grid;
}

std::vector<int> invalid_axes(const NetworkTemplate& tmpl, const Gene& gene, GeneCheck level) {
  std::vector<int> bad;
  if (static_cast<int>(gene.channels.size()) != tmpl.gene_length()) {
    for (int i = 0; i < tmpl.gene_length(); ++i) bad.push_back(i);
    return bad;
  }
  for (int i = 0; i < tmpl.gene_length(); ++i) {
    const AxisRange r = axis_range(tmpl.axes[static_cast<size_t>(i)].max_channels);
    const int c = gene.channels[static_cast<size_t>(i)];
    if (c < 1 || c > r.max) {
      bad.push_back(i);
      continue;
    }
    if (level == GeneCheck::Grid) {
      const bool on_grid = c == r.max || (c >= r.min && (c - r.min) % r.step == 0);
      if (!on_grid) bad.push_back(i);
    }
  }
  return bad;
}

void validate_gene(const NetworkTemplate& tmpl, const Gene& gene, GeneCheck level) {
  if (static_cast<int>(gene.channels.size()) != tmpl.gene_length())
    fail("gene has " + std::to_string(gene.channels.size()) + " entries but template '" +
         tmpl.name + "' has " + std::to_string(tmpl.gene_length()) + " prunable axes");
  const std::vector<int> bad = invalid_axes(tmpl, gene, level);
  if (bad.empty()) return;
  std::ostringstream os;
  os << "invalid gene for template '" << tmpl.name << "', violating axes:";
  for (int i : bad)
    os << ' ' << tmpl.axes[static_cast<size_t>(i)].name << "(c=" << gene.channels[static_cast<size_t>(i)]
       << ")";
  fail(os.str());
}

Gene sample_gene(const NetworkTemplate& tmpl, Rng& rng) {
  Gene g;
  g.channels.reserve(tmpl.axes.size());
  for (const AxisSpec& a : tmpl.axes) {
    const std::vector<int> grid = axis_grid(axis_range(a.max_channels));
    g.channels.push_back(grid[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(grid.size()) - 1))]);
  }
  return g;
}

Gene full_gene(const NetworkTemplate& tmpl) {
  Gene g;
  for (const AxisSpec& a : tmpl.axes) g.channels.push_back(a.max_channels);
  return g;
}

Gene uniform_gene(const NetworkTemplate& tmpl, double ratio) {
  check(ratio > 0.0 && ratio <= 1.0, "uniform ratio must be in (0, 1]");
  Gene g;
  for (const AxisSpec& a : tmpl.axes) {
    int c = static_cast<int>(std::lround(ratio * a.max_channels));
    c = std::clamp(c, 1, a.max_channels);
    g.channels.push_back(c);
  }
  return g;
}

std::vector<std::pair<int, int>> resolve_channels(const NetworkTemplate& tmpl, const Gene& gene) {
  validate_gene(tmpl, gene, GeneCheck::Structural);
  std::vector<std::pair<int, int>> out;
  out.reserve(tmpl.layers.size());
  for (const LayerSpec& l : tmpl.layers) {
    const int cin = l.in_axis >= 0 ? gene.channels[static_cast<size_t>(l.in_axis)] : l.fixed_in;
    const int cout = l.out_axis >= 0 ? gene.channels[static_cast<size_t>(l.out_axis)] : l.max_out;
    out.emplace_back(cin, cout);
  }
  return out;
}

std::vector<std::vector<double>> decode_ratios(const NetworkTemplate& tmpl, const Gene& gene) {
  validate_gene(tmpl, gene, GeneCheck::Structural);
  auto ratio_of = [&](int axis) {
    return static_cast<double>(gene.channels[static_cast<size_t>(axis)]) /
           static_cast<double>(tmpl.axes[static_cast<size_t>(axis)].max_channels);
  };
  std::vector<std::vector<double>> out(tmpl.layers.size());
  for (size_t i = 0; i < tmpl.layers.size(); ++i) {
    const LayerSpec& l = tmpl.layers[i];
    if (l.kind == LayerKind::Linear) continue;
    if (l.block >= 0) {
      const BlockSpec& b = tmpl.blocks[static_cast<size_t>(l.block)];
      const double in_r = b.in_axis >= 0 ? ratio_of(b.in_axis) : 1.0;
      out[i] = {in_r, ratio_of(b.out_axis), ratio_of(b.mid_axis)};
    } else {
      const double in_r = l.in_axis >= 0 ? ratio_of(l.in_axis) : 1.0;
      const double out_r = l.out_axis >= 0 ? ratio_of(l.out_axis) : 1.0;
      out[i] = {in_r, out_r};
    }
  }
  return out;
}

std::string serialize_gene(const Gene& gene) {
  std::ostringstream os;
  for (size_t i = 0; i < gene.channels.size(); ++i) {
    if (i) os << '/';
    os << gene.channels[i];
  }
  return os.str();
}

Gene parse_gene(const std::string& text, const NetworkTemplate& tmpl) {
  if (text == "full") return full_gene(tmpl);
  if (text.rfind("uniform:", 0) == 0) {
    const std::string num = text.substr(8);
    size_t used = 0;
    double ratio = 0.0;
    try {
      ratio = std::stod(num, &used);
    } catch (const std::exception&) {
      fail("bad uniform gene ratio: '" + text + "'");
    }
    if (used != num.size()) fail("bad uniform gene ratio: '" + text + "'");
    return uniform_gene(tmpl, ratio);
  }
  Gene g;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, '/')) {
    size_t used = 0;
    int c = 0;
    try {
      c = std::stoi(part, &used);
    } catch (const std::exception&) {
      fail("bad gene entry '" + part + "' in '" + text + "'");
    }
    if (used != part.size()) fail("bad gene entry '" + part + "' in '" + text + "'");
    g.channels.push_back(c);
  }
  validate_gene(tmpl, g, GeneCheck::Structural);
  return g;
}

// ---- builder ----

TemplateBuilder::TemplateBuilder(std::string name, int in_channels, int in_h, int in_w, int classes) {
  check(in_channels >= 1 && in_h >= 1 && in_w >= 1 && classes >= 2, "bad template input geometry");
  t_.name = std::move(name);
  t_.in_channels = in_channels;
  t_.in_h = in_h;
  t_.in_w = in_w;
  t_.num_classes = classes;
}

int TemplateBuilder::add_axis(std::string name, int max_channels, AxisKind kind) {
  check(max_channels >= 1, "axis '" + name + "' needs max_channels >= 1");
  t_.axes.push_back(AxisSpec{std::move(name), max_channels, kind});
  return static_cast<int>(t_.axes.size()) - 1;
}

void TemplateBuilder::add_conv(int out_axis, int k, int stride, int pad, bool downsampling) {
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.kh = l.kw = k;
  l.stride = stride;
  l.pad = pad;
  l.in_axis = current_axis_;
  l.fixed_in = current_axis_ < 0 ? t_.in_channels : 0;
  l.out_axis = out_axis;
  l.max_out = t_.axes[static_cast<size_t>(out_axis)].max_channels;
  l.relu_after = true;
  l.is_downsampling = downsampling;
  t_.layers.push_back(l);
  current_axis_ = out_axis;
}

void TemplateBuilder::add_separable(int out_axis, int k, int stride, int pad, bool downsampling) {
  check(current_axis_ >= 0, "separable block needs a preceding feature axis");
  LayerSpec dw;
  dw.kind = LayerKind::Depthwise;
  dw.kh = dw.kw = k;
  dw.stride = stride;
  dw.pad = pad;
  dw.in_axis = current_axis_;
  dw.out_axis = current_axis_;
  dw.max_out = t_.axes[static_cast<size_t>(current_axis_)].max_channels;
  dw.relu_after = true;
  dw.is_downsampling = downsampling;
  t_.layers.push_back(dw);

  LayerSpec pw;
  pw.kind = LayerKind::Conv;
  pw.kh = pw.kw = 1;
  pw.stride = 1;
  pw.pad = 0;
  pw.in_axis = current_axis_;
  pw.out_axis = out_axis;
  pw.max_out = t_.axes[static_cast<size_t>(out_axis)].max_channels;
  pw.relu_after = true;
  pw.is_downsampling = downsampling;
  t_.layers.push_back(pw);
  current_axis_ = out_axis;
}

void TemplateBuilder::add_bottleneck(int stage_axis, int mid_axis, int mid_k, bool mid_depthwise,
                                     int stride, bool downsampling) {
  const int block_id = static_cast<int>(t_.blocks.size());
  BlockSpec b;
  b.in_axis = current_axis_;
  b.mid_axis = mid_axis;
  b.out_axis = stage_axis;
  b.has_shortcut = current_axis_ == stage_axis && stride == 1;

  auto push = [&](LayerKind kind, int k, int s, int pad, int in_axis, int out_axis, bool relu) {
    LayerSpec l;
    l.kind = kind;
    l.kh = l.kw = k;
    l.stride = s;
    l.pad = pad;
    l.in_axis = in_axis;
    l.fixed_in = in_axis < 0 ? t_.in_channels : 0;
    l.out_axis = out_axis;
    l.max_out = t_.axes[static_cast<size_t>(out_axis)].max_channels;
    l.block = block_id;
    l.relu_after = relu;
    l.is_downsampling = downsampling;
    b.layers.push_back(static_cast<int>(t_.layers.size()));
    t_.layers.push_back(l);
  };

  push(LayerKind::Conv, 1, 1, 0, current_axis_, mid_axis, true);
  push(mid_depthwise ? LayerKind::Depthwise : LayerKind::Conv, mid_k, stride, mid_k / 2, mid_axis,
       mid_axis, true);
  // No activation after the projection; the block applies relu after the
  // shortcut add.
  push(LayerKind::Conv, 1, 1, 0, mid_axis, stage_axis, false);

  t_.blocks.push_back(std::move(b));
  current_axis_ = stage_axis;
}

void TemplateBuilder::add_classifier() {
  check(current_axis_ >= 0, "classifier needs a preceding feature axis");
  check(!classifier_added_, "classifier already added");
  LayerSpec l;
  l.kind = LayerKind::Linear;
  l.in_axis = current_axis_;
  l.out_axis = -1;
  l.max_out = t_.num_classes;
  t_.layers.push_back(l);
  classifier_added_ = true;
}

namespace {

void finalize_template(NetworkTemplate& t) {
  check(!t.layers.empty(), "template '" + t.name + "' has no layers");
  check(t.layers.back().kind == LayerKind::Linear,
        "template '" + t.name + "' must end with a linear classifier");
  for (size_t i = 0; i + 1 < t.layers.size(); ++i)
    check(t.layers[i].kind != LayerKind::Linear,
          "template '" + t.name + "': only the final layer may be linear");

  // Derive block axis fields and check membership.
  for (size_t bi = 0; bi < t.blocks.size(); ++bi) {
    BlockSpec& b = t.blocks[bi];
    check(!b.layers.empty(), "block " + std::to_string(bi) + " has no layers");
    for (size_t k = 0; k < b.layers.size(); ++k) {
      const int li = b.layers[k];
      check(li >= 0 && li < static_cast<int>(t.layers.size()) &&
                t.layers[static_cast<size_t>(li)].block == static_cast<int>(bi),
            "block " + std::to_string(bi) + " membership inconsistent");
      check(k == 0 || li == b.layers[k - 1] + 1,
            "block " + std::to_string(bi) + " layers must be consecutive");
    }
    b.in_axis = t.layers[static_cast<size_t>(b.layers.front())].in_axis;
    b.out_axis = t.layers[static_cast<size_t>(b.layers.back())].out_axis;
    b.mid_axis = t.layers[static_cast<size_t>(b.layers.front())].out_axis;
    check(b.out_axis >= 0, "block " + std::to_string(bi) + " output must be a prunable axis");
    if (b.has_shortcut)
      check(b.in_axis == b.out_axis, "block " + std::to_string(bi) +
                                         " has a shortcut but input and output axes differ");
  }

  // Stage groups: one per stage-output axis.
  t.stages.clear();
  for (int ai = 0; ai < static_cast<int>(t.axes.size()); ++ai) {
    if (t.axes[static_cast<size_t>(ai)].kind != AxisKind::StageOut) continue;
    StageGroup g;
    g.axis = ai;
    for (int bi = 0; bi < static_cast<int>(t.blocks.size()); ++bi)
      if (t.blocks[static_cast<size_t>(bi)].out_axis == ai) g.blocks.push_back(bi);
    check(!g.blocks.empty(), "stage axis '" + t.axes[static_cast<size_t>(ai)].name +
                                 "' is not used by any block");
    for (int bi : g.blocks) t.blocks[static_cast<size_t>(bi)].stage = static_cast<int>(t.stages.size());
    t.stages.push_back(std::move(g));
  }

  // Spatial geometry with floor conv arithmetic; the classifier consumes the
  // globally pooled feature vector.
  int h = t.in_h, w = t.in_w;
  for (LayerSpec& l : t.layers) {
    if (l.kind == LayerKind::Linear) {
      l.in_h = l.in_w = 1;
      l.out_h = l.out_w = 1;
      continue;
    }
    l.in_h = h;
    l.in_w = w;
    const int eh = h + 2 * l.pad - l.kh;
    const int ew = w + 2 * l.pad - l.kw;
    check(eh >= 0 && ew >= 0, "template '" + t.name + "': kernel does not fit the " +
                                  std::to_string(h) + "x" + std::to_string(w) + " feature map");
    l.out_h = eh / l.stride + 1;
    l.out_w = ew / l.stride + 1;
    h = l.out_h;
    w = l.out_w;
  }

  // Axis sanity: depthwise ties, axis usage, channel agreement.
  std::vector<bool> used(t.axes.size(), false);
  for (const LayerSpec& l : t.layers) {
    if (l.in_axis >= 0) used[static_cast<size_t>(l.in_axis)] = true;
    if (l.out_axis >= 0) used[static_cast<size_t>(l.out_axis)] = true;
    if (l.kind == LayerKind::Depthwise)
      check(l.in_axis == l.out_axis, "depthwise layer must keep its channel axis");
    if (l.out_axis >= 0)
      check(t.axes[static_cast<size_t>(l.out_axis)].max_channels == l.max_out,
            "layer max_out disagrees with its output axis");
  }
  for (size_t i = 0; i < used.size(); ++i)
    check(used[i], "axis '" + t.axes[i].name + "' is not referenced by any layer");
}

}  // namespace

NetworkTemplate TemplateBuilder::finalize() {
  check(classifier_added_, "template '" + t_.name + "' needs a classifier");
  NetworkTemplate t = t_;
  finalize_template(t);
  return t;
}

// ---- builtins ----

namespace {

NetworkTemplate make_chain_small(const std::string& name, int hw, int classes) {
  TemplateBuilder b(name, 3, hw, hw, classes);
  const int widths[7] = {16, 24, 32, 48, 64, 96, 96};
  const int strides[7] = {1, 2, 1, 2, 1, 2, 1};
  std::vector<int> axes;
  for (int i = 0; i < 7; ++i)
    axes.push_back(b.add_axis("block" + std::to_string(i), widths[i], AxisKind::Chain));
  b.add_conv(axes[0], 3, strides[0], 1);
  for (int i = 1; i < 7; ++i) b.add_separable(axes[i], 3, strides[i], 1, strides[i] == 2);
  b.add_classifier();
  return b.finalize();
}

NetworkTemplate make_stage_small() {
  TemplateBuilder b("stage-small", 3, 16, 16, 8);
  const int stage_widths[3] = {24, 32, 48};
  const int mid_widths[3] = {12, 16, 24};
  const int strides[3] = {1, 2, 2};
  int stage_axes[3];
  for (int s = 0; s < 3; ++s)
    stage_axes[s] = b.add_axis("stage" + std::to_string(s), stage_widths[s], AxisKind::StageOut);
  for (int s = 0; s < 3; ++s) {
    for (int blk = 0; blk < 2; ++blk) {
      const int mid = b.add_axis("mid" + std::to_string(s) + "_" + std::to_string(blk),
                                 mid_widths[s], AxisKind::BlockMid);
      b.add_bottleneck(stage_axes[s], mid, 3, /*mid_depthwise=*/false,
                       blk == 0 ? strides[s] : 1, blk == 0 && strides[s] == 2);
    }
  }
  b.add_classifier();
  return b.finalize();
}

NetworkTemplate make_mobilenet_v1_224() {
  TemplateBuilder b("mobilenet-v1-224", 3, 224, 224, 1000);
  const int widths[14] = {32, 64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024};
  const int strides[14] = {2, 1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1};
  std::vector<int> axes;
  for (int i = 0; i < 14; ++i)
    axes.push_back(b.add_axis("block" + std::to_string(i), widths[i], AxisKind::Chain));
  b.add_conv(axes[0], 3, strides[0], 1, true);
  for (int i = 1; i < 14; ++i) b.add_separable(axes[i], 3, strides[i], 1, strides[i] == 2);
  b.add_classifier();
  return b.finalize();
}

NetworkTemplate make_mobilenet_v2_224() {
  TemplateBuilder b("mobilenet-v2-224", 3, 224, 224, 1000);
  const int stem = b.add_axis("stem", 32, AxisKind::Chain);
  b.add_conv(stem, 3, 2, 1, true);
  // First unit has no expansion: depthwise at the stem width, then project.
  const int first = b.add_axis("block0", 16, AxisKind::Chain);
  b.add_separable(first, 3, 1, 1);
  struct StageDef {
    int out, repeats, stride;
  };
  const StageDef stages[6] = {{24, 2, 2}, {32, 3, 2}, {64, 4, 2}, {96, 3, 1}, {160, 3, 2}, {320, 1, 1}};
  int in_width = 16;
  for (int s = 0; s < 6; ++s) {
    const int stage_axis =
        b.add_axis("stage" + std::to_string(s), stages[s].out, AxisKind::StageOut);
    for (int r = 0; r < stages[s].repeats; ++r) {
      const int mid_max = 6 * (r == 0 ? in_width : stages[s].out);
      const int mid = b.add_axis("mid" + std::to_string(s) + "_" + std::to_string(r), mid_max,
                                 AxisKind::BlockMid);
      b.add_bottleneck(stage_axis, mid, 3, /*mid_depthwise=*/true, r == 0 ? stages[s].stride : 1,
                       r == 0 && stages[s].stride == 2);
    }
    in_width = stages[s].out;
  }
  const int head = b.add_axis("head", 1280, AxisKind::Chain);
  b.add_conv(head, 1, 1, 0);
  b.add_classifier();
  return b.finalize();
}

}  // namespace

std::vector<std::string> builtin_template_names() {
  return {"chain-small", "chain-small-cifar", "stage-small", "mobilenet-v1-224",
          "mobilenet-v2-224"};
}

NetworkTemplate builtin_template(const std::string& name) {
  if (name == "chain-small") return make_chain_small("chain-small", 16, 8);
  if (name == "chain-small-cifar") return make_chain_small("chain-small-cifar", 32, 10);
  if (name == "stage-small") return make_stage_small();
  if (name == "mobilenet-v1-224") return make_mobilenet_v1_224();
  if (name == "mobilenet-v2-224") return make_mobilenet_v2_224();
  fail("unknown template '" + name + "'; builtins:"
       " chain-small, chain-small-cifar, stage-small, mobilenet-v1-224, mobilenet-v2-224");
}

// ---- JSON templates ----

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) fail("unknown field '" + it.key() + "' in " + where);
}

LayerKind parse_kind(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "depthwise") return LayerKind::Depthwise;
  if (s == "linear") return LayerKind::Linear;
  fail("unknown layer kind '" + s + "'");
}

AxisKind parse_axis_kind(const std::string& s) {
  if (s == "chain") return AxisKind::Chain;
  if (s == "stage_out") return AxisKind::StageOut;
  if (s == "block_mid") return AxisKind::BlockMid;
  fail("unknown axis kind '" + s + "'");
}

int axis_or_minus1(const json& v, const std::string& where) {
  if (v.is_null()) return -1;
  if (!v.is_number_integer()) fail(where + " must be an axis index or null");
  return v.get<int>();
}

}  // namespace

NetworkTemplate load_template_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open template file: " + path);
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("template JSON parse error in " + path + ": " + e.what());
  }
  reject_unknown(doc, {"name", "input", "classes", "axes", "layers", "blocks"}, "template");
  NetworkTemplate t;
  t.name = doc.at("name").get<std::string>();
  const json& input = doc.at("input");
  reject_unknown(input, {"channels", "height", "width"}, "input");
  t.in_channels = input.at("channels").get<int>();
  t.in_h = input.at("height").get<int>();
  t.in_w = input.at("width").get<int>();
  t.num_classes = doc.at("classes").get<int>();

  for (const json& a : doc.at("axes")) {
    reject_unknown(a, {"name", "max_channels", "kind"}, "axis");
    AxisSpec spec;
    spec.name = a.at("name").get<std::string>();
    spec.max_channels = a.at("max_channels").get<int>();
    spec.kind = parse_axis_kind(a.at("kind").get<std::string>());
    check(spec.max_channels >= 1, "axis '" + spec.name + "' needs max_channels >= 1");
    t.axes.push_back(std::move(spec));
  }
  const int n_axes = static_cast<int>(t.axes.size());

  for (const json& l : doc.at("layers")) {
    reject_unknown(l,
                   {"kind", "kernel", "stride", "pad", "max_out", "in_axis", "fixed_in", "out_axis",
                    "relu_after", "block", "downsampling"},
                   "layer");
    LayerSpec spec;
    spec.kind = parse_kind(l.at("kind").get<std::string>());
    if (l.contains("kernel")) {
      const auto k = l.at("kernel").get<std::vector<int>>();
      check(k.size() == 2, "layer kernel must be [Kh,Kw]");
      spec.kh = k[0];
      spec.kw = k[1];
    }
    spec.stride = l.value("stride", 1);
    spec.pad = l.value("pad", 0);
    spec.max_out = l.at("max_out").get<int>();
    spec.in_axis = axis_or_minus1(l.contains("in_axis") ? l.at("in_axis") : json(nullptr), "in_axis");
    spec.out_axis =
        axis_or_minus1(l.contains("out_axis") ? l.at("out_axis") : json(nullptr), "out_axis");
    spec.fixed_in = l.value("fixed_in", 0);
    spec.relu_after = l.value("relu_after", true);
    spec.block = l.contains("block") && !l.at("block").is_null() ? l.at("block").get<int>() : -1;
    spec.is_downsampling = l.value("downsampling", false);
    check(spec.in_axis < n_axes && spec.out_axis < n_axes, "layer references an unknown axis");
    check(spec.in_axis >= 0 || spec.fixed_in >= 1, "layer needs in_axis or fixed_in");
    t.layers.push_back(std::move(spec));
  }

  if (doc.contains("blocks")) {
    for (const json& bj : doc.at("blocks")) {
      reject_unknown(bj, {"layers", "shortcut"}, "block");
      BlockSpec b;
      b.layers = bj.at("layers").get<std::vector<int>>();
      b.has_shortcut = bj.value("shortcut", false);
      t.blocks.push_back(std::move(b));
    }
    // Cross-link layers to their blocks before finalize validates membership.
    for (size_t bi = 0; bi < t.blocks.size(); ++bi)
      for (int li : t.blocks[bi].layers) {
        check(li >= 0 && li < static_cast<int>(t.layers.size()),
              "block layer index out of range");
        t.layers[static_cast<size_t>(li)].block = static_cast<int>(bi);
      }
  }

  finalize_template(t);
  return t;
}

NetworkTemplate load_template(const std::string& name_or_path) {
  const auto names = builtin_template_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end())
    return builtin_template(name_or_path);
  return load_template_json(name_or_path);
}

}  // namespace prunekit
