#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <tuple>

#include "prunekit/netdef.hpp"

namespace prunekit {

// Per-(layer, c_in, c_out) execution time in microseconds, defined on the
// template's channel grid. Whole-network latency is the plain sum of entries,
// assuming layer times are independent.
struct LatencyTable {
  std::map<std::tuple<int, int, int>, double> entries;

  double at(int layer, int c_in, int c_out) const;
  bool has(int layer, int c_in, int c_out) const;
  size_t size() const { return entries.size(); }
};

enum class ConstraintKind { Flops, Latency };

// The search budget: a strict upper bound on multiply-adds or microseconds.
struct Constraint {
  ConstraintKind kind = ConstraintKind::Flops;
  double budget = 0.0;
  std::shared_ptr<const LatencyTable> table;  // set when kind == Latency
};

Constraint flops_constraint(double budget);
Constraint latency_constraint(double budget_us, std::shared_ptr<const LatencyTable> table);

// Multiply-add count for one layer at the given widths.
uint64_t layer_flops(const LayerSpec& layer, int c_in, int c_out);
// Whole-network multiply-adds with channels resolved from the gene. BN, relu,
// pooling and biases count as zero.
uint64_t flops(const NetworkTemplate& tmpl, const Gene& gene);
double latency_us(const NetworkTemplate& tmpl, const Gene& gene, const LatencyTable& table);

// a + b * layer_flops per grid point, with optional uniform noise in
// [0, noise) drawn from the seed. Stands in for on-device measurement.
LatencyTable synth_table(const NetworkTemplate& tmpl, double a, double b, double noise = 0.0,
                         uint64_t seed = 0);

// Errors if any grid point of the template is missing from the table.
void validate_table(const NetworkTemplate& tmpl, const LatencyTable& table);

bool satisfies(const NetworkTemplate& tmpl, const Gene& gene, const Constraint& constraint);
// The gene's cost in the constraint's unit (multiply-adds or microseconds).
double cost_of(const NetworkTemplate& tmpl, const Gene& gene, const Constraint& constraint);

// CSV with header `layer_id,c_in,c_out,us`, one row per grid point.
void save_latency_csv(const std::string& path, const LatencyTable& table);
LatencyTable load_latency_csv(const std::string& path);

}  // namespace prunekit
