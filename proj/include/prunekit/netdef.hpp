#pragma once

#include <string>
#include <utility>
#include <vector>

#include "prunekit/rng.hpp"

namespace prunekit {

enum class LayerKind { Conv, Depthwise, Linear };
enum class AxisKind { Chain, StageOut, BlockMid };

// One prunable channel axis; one gene slot.
struct AxisSpec {
  std::string name;
  int max_channels = 0;
  AxisKind kind = AxisKind::Chain;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int kh = 1, kw = 1;
  int stride = 1, pad = 0;
  int max_out = 0;   // output channels (linear: out features)
  int in_axis = -1;  // -1: fixed input width (fixed_in)
  int out_axis = -1;  // -1: fixed output width (max_out)
  int fixed_in = 0;
  int block = -1;  // owning residual block, -1 for chain layers
  bool relu_after = false;
  bool is_downsampling = false;
  // spatial geometry, resolved by finalize (floor conv arithmetic)
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

// A residual unit: 1x1 reduce, KxK mid, 1x1 expand, optional identity
// shortcut. Axis fields are derived from the member layers.
struct BlockSpec {
  std::vector<int> layers;
  bool has_shortcut = false;
  int stage = -1;
  int in_axis = -1;
  int mid_axis = -1;
  int out_axis = -1;
};

// Blocks whose in/out channels are tied through shortcuts onto one axis.
struct StageGroup {
  int axis = -1;
  std::vector<int> blocks;
};

struct NetworkTemplate {
  std::string name;
  int in_channels = 0, in_h = 0, in_w = 0;
  int num_classes = 0;
  std::vector<AxisSpec> axes;
  std::vector<LayerSpec> layers;  // execution order; classifier linear last
  std::vector<BlockSpec> blocks;
  std::vector<StageGroup> stages;

  int gene_length() const { return static_cast<int>(axes.size()); }
};

// Per-axis channel counts; the search genotype and the PruningNet input.
struct Gene {
  std::vector<int> channels;
  bool operator==(const Gene&) const = default;
};

struct AxisRange {
  int min = 0, max = 0, step = 0;
};

// min = floor(0.1*C) clamped to >= 1, step = max(1, floor(0.03*C)), max = C.
AxisRange axis_range(int max_channels);
std::vector<AxisRange> channel_space(const NetworkTemplate& tmpl);
// Sampled values: the arithmetic grid from min, plus max itself.
std::vector<int> axis_grid(const AxisRange& range);

// Structural: right length, 1 <= c_i <= max. Grid: structural and every c_i
// on the sampling grid. Cost queries accept structural genes (e.g. exact
// uniform-ratio widths); the search only ever produces grid genes.
enum class GeneCheck { Structural, Grid };
std::vector<int> invalid_axes(const NetworkTemplate& tmpl, const Gene& gene, GeneCheck level);
void validate_gene(const NetworkTemplate& tmpl, const Gene& gene, GeneCheck level);

Gene sample_gene(const NetworkTemplate& tmpl, Rng& rng);
Gene full_gene(const NetworkTemplate& tmpl);
// round(ratio * max) per axis, clamped to [1, max]; not snapped to the grid.
Gene uniform_gene(const NetworkTemplate& tmpl, double ratio);

// Resolved (c_in, c_out) per layer for a structural gene.
std::vector<std::pair<int, int>> resolve_channels(const NetworkTemplate& tmpl, const Gene& gene);
// Ratio vector per layer: [in, out] for chain layers, [block in, block out,
// mid] for layers inside residual blocks, empty for the classifier.
std::vector<std::vector<double>> decode_ratios(const NetworkTemplate& tmpl, const Gene& gene);

std::string serialize_gene(const Gene& gene);
// Accepts "c1/c2/.../cl", "full", or "uniform:<ratio>".
Gene parse_gene(const std::string& text, const NetworkTemplate& tmpl);

std::vector<std::string> builtin_template_names();
NetworkTemplate builtin_template(const std::string& name);
NetworkTemplate load_template_json(const std::string& path);
// Builtin name, else a path to a template JSON file.
NetworkTemplate load_template(const std::string& name_or_path);

// Programmatic construction; used by the builtins and by tests.
class TemplateBuilder {
 public:
  TemplateBuilder(std::string name, int in_channels, int in_h, int in_w, int classes);

  int add_axis(std::string name, int max_channels, AxisKind kind);
  // Plain conv from the current feature axis (or the image) to `out_axis`.
  void add_conv(int out_axis, int k, int stride, int pad, bool downsampling = false);
  // 3x3 depthwise at the current width followed by a 1x1 pointwise to `out_axis`.
  void add_separable(int out_axis, int k, int stride, int pad, bool downsampling = false);
  // 1x1 -> KxK mid (stride) -> 1x1 block; identity shortcut when the input
  // axis equals `stage_axis` and stride is 1.
  void add_bottleneck(int stage_axis, int mid_axis, int mid_k, bool mid_depthwise, int stride,
                      bool downsampling = false);
  void add_classifier();

  NetworkTemplate finalize();

 private:
  NetworkTemplate t_;
  int current_axis_ = -1;
  bool classifier_added_ = false;
};

}  // namespace prunekit
