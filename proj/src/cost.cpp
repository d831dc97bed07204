#include "prunekit/cost.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace prunekit {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string key_str(int layer, int c_in, int c_out) {
  std::ostringstream os;
  os << "(layer " << layer << ", c_in " << c_in << ", c_out " << c_out << ')';
  return os.str();
}

// Channel choices a layer endpoint can take: the axis grid, or the single
// fixed width.
std::vector<int> endpoint_grid(const NetworkTemplate& tmpl, int axis, int fixed) {
  if (axis < 0) return {fixed};
  return axis_grid(axis_range(tmpl.axes[static_cast<size_t>(axis)].max_channels));
}

}  // namespace

double LatencyTable::at(int layer, int c_in, int c_out) const {
  auto it = entries.find({layer, c_in, c_out});
  if (it == entries.end())
    throw std::runtime_error("latency table has no entry for " + key_str(layer, c_in, c_out));
  return it->second;
}

bool LatencyTable::has(int layer, int c_in, int c_out) const {
  return entries.count({layer, c_in, c_out}) != 0;
}

Constraint flops_constraint(double budget) {
  if (budget <= 0.0) fail("constraint budget must be positive");
  return Constraint{ConstraintKind::Flops, budget, nullptr};
}

Constraint latency_constraint(double budget_us, std::shared_ptr<const LatencyTable> table) {
  if (budget_us <= 0.0) fail("constraint budget must be positive");
  if (!table) fail("latency constraint needs a table");
  return Constraint{ConstraintKind::Latency, budget_us, std::move(table)};
}

uint64_t layer_flops(const LayerSpec& layer, int c_in, int c_out) {
  const auto out_plane = static_cast<uint64_t>(layer.out_h) * static_cast<uint64_t>(layer.out_w);
  switch (layer.kind) {
    case LayerKind::Conv:
      return static_cast<uint64_t>(c_out) * static_cast<uint64_t>(c_in) *
             static_cast<uint64_t>(layer.kh) * static_cast<uint64_t>(layer.kw) * out_plane;
    case LayerKind::Depthwise:
      return static_cast<uint64_t>(c_out) * static_cast<uint64_t>(layer.kh) *
             static_cast<uint64_t>(layer.kw) * out_plane;
    case LayerKind::Linear:
      return static_cast<uint64_t>(c_in) * static_cast<uint64_t>(c_out);
  }
  return 0;
}

uint64_t flops(const NetworkTemplate& tmpl, const Gene& gene) {
  const auto channels = resolve_channels(tmpl, gene);
  uint64_t total = 0;
  for (size_t i = 0; i < tmpl.layers.size(); ++i)
    total += layer_flops(tmpl.layers[i], channels[i].first, channels[i].second);
  return total;
}

double latency_us(const NetworkTemplate& tmpl, const Gene& gene, const LatencyTable& table) {
  const auto channels = resolve_channels(tmpl, gene);
  double total = 0.0;
  for (size_t i = 0; i < tmpl.layers.size(); ++i)
    total += table.at(static_cast<int>(i), channels[i].first, channels[i].second);
  return total;
}

LatencyTable synth_table(const NetworkTemplate& tmpl, double a, double b, double noise,
                         uint64_t seed) {
  if (a < 0.0 || b < 0.0 || noise < 0.0) fail("synth_table coefficients must be non-negative");
  LatencyTable table;
  Rng rng(seed);
  for (size_t li = 0; li < tmpl.layers.size(); ++li) {
    const LayerSpec& l = tmpl.layers[li];
    const auto in_grid = endpoint_grid(tmpl, l.in_axis, l.fixed_in);
    const auto out_grid = endpoint_grid(tmpl, l.out_axis, l.max_out);
    if (l.kind == LayerKind::Depthwise) {
      for (int c : in_grid) {
        double us = a + b * static_cast<double>(layer_flops(l, c, c));
        if (noise > 0.0) us += noise * rng.uniform();
        table.entries[{static_cast<int>(li), c, c}] = us;
      }
    } else {
      for (int ci : in_grid)
        for (int co : out_grid) {
          double us = a + b * static_cast<double>(layer_flops(l, ci, co));
          if (noise > 0.0) us += noise * rng.uniform();
          table.entries[{static_cast<int>(li), ci, co}] = us;
        }
    }
  }
  return table;
}

void validate_table(const NetworkTemplate& tmpl, const LatencyTable& table) {
  for (size_t li = 0; li < tmpl.layers.size(); ++li) {
    const LayerSpec& l = tmpl.layers[li];
    const auto in_grid = endpoint_grid(tmpl, l.in_axis, l.fixed_in);
    const auto out_grid = endpoint_grid(tmpl, l.out_axis, l.max_out);
    if (l.kind == LayerKind::Depthwise) {
      for (int c : in_grid)
        if (!table.has(static_cast<int>(li), c, c))
          throw std::runtime_error("latency table missing grid point " +
                                   key_str(static_cast<int>(li), c, c));
    } else {
      for (int ci : in_grid)
        for (int co : out_grid)
          if (!table.has(static_cast<int>(li), ci, co))
            throw std::runtime_error("latency table missing grid point " +
                                     key_str(static_cast<int>(li), ci, co));
    }
  }
}

bool satisfies(const NetworkTemplate& tmpl, const Gene& gene, const Constraint& constraint) {
  return cost_of(tmpl, gene, constraint) < constraint.budget;
}

double cost_of(const NetworkTemplate& tmpl, const Gene& gene, const Constraint& constraint) {
  if (constraint.kind == ConstraintKind::Flops)
    return static_cast<double>(flops(tmpl, gene));
  return latency_us(tmpl, gene, *constraint.table);
}

void save_latency_csv(const std::string& path, const LatencyTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open latency csv for writing: " + path);
  os << "layer_id,c_in,c_out,us\n";
  os.precision(17);
  for (const auto& [key, us] : table.entries) {
    const auto& [layer, ci, co] = key;
    os << layer << ',' << ci << ',' << co << ',' << us << '\n';
  }
  if (!os.good()) throw std::runtime_error("write failed for latency csv: " + path);
}

LatencyTable load_latency_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open latency csv: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "layer_id,c_in,c_out,us")
    throw std::runtime_error("latency csv " + path + " must start with header layer_id,c_in,c_out,us");
  LatencyTable table;
  size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    int vals[3];
    for (int i = 0; i < 3; ++i) {
      if (!std::getline(row, field, ','))
        throw std::runtime_error("latency csv " + path + " line " + std::to_string(line_no) +
                                 ": expected 4 fields");
      try {
        size_t used = 0;
        vals[i] = std::stoi(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw std::runtime_error("latency csv " + path + " line " + std::to_string(line_no) +
                                 ": bad integer '" + field + "'");
      }
    }
    if (!std::getline(row, field))
      throw std::runtime_error("latency csv " + path + " line " + std::to_string(line_no) +
                               ": expected 4 fields");
    double us = 0.0;
    try {
      size_t used = 0;
      us = std::stod(field, &used);
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::exception&) {
      throw std::runtime_error("latency csv " + path + " line " + std::to_string(line_no) +
                               ": bad value '" + field + "'");
    }
    if (us < 0.0)
      throw std::runtime_error("latency csv " + path + " line " + std::to_string(line_no) +
                               ": negative latency");
    table.entries[{vals[0], vals[1], vals[2]}] = us;
  }
  return table;
}

}  // namespace prunekit
