#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prunekit/cost.hpp"
#include "prunekit/netdef.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

struct SearchConfig {
  int population = 128;
  int topk = 32;
  int mutations = 64;   // mutants per generation
  int crossovers = 64;  // crossover children per generation
  int iterations = 20;
  double p_mut = 0.1;       // per-axis resample probability
  int max_attempts = 10000;  // rejection budget per candidate
  uint64_t seed = 0;
  int workers = 1;  // parallel evaluations; results are worker-count independent
};

struct Candidate {
  Gene gene;
  double fitness = 0.0;  // accuracy in [0,1]
  double cost = 0.0;     // in the constraint's unit, at evaluation time
};

struct IterationStats {
  int iteration = 0;
  double best_fitness = 0.0;
  double best_cost = 0.0;
  Gene best_gene;
};

struct SearchResult {
  Candidate best;  // best ever evaluated
  std::vector<IterationStats> history;
  int evaluations = 0;
};

using Evaluator = std::function<double(const Gene&)>;

// Candidate ordering: fitness desc, then cost asc, then gene lexicographic.
bool candidate_better(const Candidate& a, const Candidate& b);

// Constraint-satisfying genes via rejection sampling; errors with the
// minimum-width cost when the budget admits nothing.
std::vector<Gene> random_population(const NetworkTemplate& tmpl, const Constraint& constraint,
                                    int count, Rng& rng, int max_attempts = 10000);
// Each axis independently resampled from its grid with probability p_mut;
// rejection until feasible, then a fresh constrained random gene as fallback.
Gene mutate(const NetworkTemplate& tmpl, const Gene& parent, double p_mut, Rng& rng,
            const Constraint& constraint, int max_attempts = 10000);
// Uniform crossover with the same feasibility policy as mutate.
Gene crossover(const NetworkTemplate& tmpl, const Gene& a, const Gene& b, Rng& rng,
               const Constraint& constraint, int max_attempts = 10000);

// Constrained evolutionary search: evaluate, select top-k, refill with
// mutants and crossover children, iterate. The top-k survivors stay in the
// evaluated pool, so the best candidate is monotone across iterations.
SearchResult search(const NetworkTemplate& tmpl, const Constraint& constraint,
                    const Evaluator& evaluator, const SearchConfig& config);

// CSV: iter,best_acc,best_cost,gene with the gene as /-separated counts.
void save_history_csv(const std::string& path, const std::vector<IterationStats>& history);

}  // namespace prunekit
