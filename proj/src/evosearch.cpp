#include "prunekit/evosearch.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace prunekit {

namespace {

[[noreturn]] void infeasible(const NetworkTemplate& tmpl, const Constraint& constraint) {
  Gene min_gene;
  for (const AxisSpec& a : tmpl.axes) min_gene.channels.push_back(axis_range(a.max_channels).min);
  std::ostringstream os;
  os << "constraint infeasible: minimum-width gene costs " << cost_of(tmpl, min_gene, constraint)
     << " but the budget is " << constraint.budget;
  throw std::runtime_error(os.str());
}

Gene random_constrained(const NetworkTemplate& tmpl, const Constraint& constraint, Rng& rng,
                        int max_attempts) {
  for (int i = 0; i < max_attempts; ++i) {
    Gene g = sample_gene(tmpl, rng);
    if (satisfies(tmpl, g, constraint)) return g;
  }
  infeasible(tmpl, constraint);
}

// Evaluates genes into candidates; index-ordered results keep the outcome
// independent of worker count.
std::vector<Candidate> evaluate_all(const NetworkTemplate& tmpl, const Constraint& constraint,
                                    const Evaluator& evaluator, const std::vector<Gene>& genes,
                                    int workers) {
  for (const Gene& g : genes) {
    if (!satisfies(tmpl, g, constraint))
      throw std::logic_error("internal error: candidate violates the constraint");
  }
  std::vector<Candidate> out(genes.size());
  auto eval_one = [&](size_t i) {
    out[i].gene = genes[i];
    out[i].cost = cost_of(tmpl, genes[i], constraint);
    out[i].fitness = evaluator(genes[i]);
  };
  if (workers <= 1 || genes.size() <= 1) {
    for (size_t i = 0; i < genes.size(); ++i) {
      try {
        eval_one(i);
      } catch (const std::exception& e) {
        throw std::runtime_error("evaluator failed on gene " + serialize_gene(genes[i]) + ": " +
                                 e.what());
      }
    }
    return out;
  }
  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(genes.size());
  auto worker = [&] {
    for (size_t i = next.fetch_add(1); i < genes.size(); i = next.fetch_add(1)) {
      try {
        eval_one(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = std::min<int>(workers, static_cast<int>(genes.size()));
  pool.reserve(static_cast<size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (size_t i = 0; i < errors.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        throw std::runtime_error("evaluator failed on gene " + serialize_gene(genes[i]) + ": " +
                                 e.what());
      }
    }
  }
  return out;
}

}  // namespace

bool candidate_better(const Candidate& a, const Candidate& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  if (a.cost != b.cost) return a.cost < b.cost;
  return a.gene.channels < b.gene.channels;
}

std::vector<Gene> random_population(const NetworkTemplate& tmpl, const Constraint& constraint,
                                    int count, Rng& rng, int max_attempts) {
  std::vector<Gene> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(random_constrained(tmpl, constraint, rng, max_attempts));
  return out;
}

Gene mutate(const NetworkTemplate& tmpl, const Gene& parent, double p_mut, Rng& rng,
            const Constraint& constraint, int max_attempts) {
  if (p_mut < 0.0 || p_mut > 1.0) throw std::invalid_argument("p_mut must be in [0, 1]");
  if (p_mut == 0.0) return parent;
  const auto space = channel_space(tmpl);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Gene child = parent;
    for (size_t i = 0; i < child.channels.size(); ++i) {
      if (!rng.bernoulli(p_mut)) continue;
      const auto grid = axis_grid(space[i]);
      child.channels[i] = grid[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(grid.size()) - 1))];
    }
    if (satisfies(tmpl, child, constraint)) return child;
  }
  return random_constrained(tmpl, constraint, rng, max_attempts);
}

Gene crossover(const NetworkTemplate& tmpl, const Gene& a, const Gene& b, Rng& rng,
               const Constraint& constraint, int max_attempts) {
  if (a.channels.size() != b.channels.size())
    throw std::invalid_argument("crossover parents must come from the same template");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Gene child;
    child.channels.reserve(a.channels.size());
    for (size_t i = 0; i < a.channels.size(); ++i)
      child.channels.push_back(rng.bernoulli(0.5) ? a.channels[i] : b.channels[i]);
    if (satisfies(tmpl, child, constraint)) return child;
  }
  return random_constrained(tmpl, constraint, rng, max_attempts);
}

SearchResult search(const NetworkTemplate& tmpl, const Constraint& constraint,
                    const Evaluator& evaluator, const SearchConfig& config) {
  if (config.population < 1 || config.topk < 1 || config.mutations < 1 || config.crossovers < 1)
    throw std::invalid_argument("search counts must be >= 1");
  if (config.topk > config.population)
    throw std::invalid_argument("topk must not exceed the population size");
  if (config.p_mut <= 0.0 || config.p_mut > 1.0)
    throw std::invalid_argument("p_mut must be in (0, 1]");
  if (config.iterations < 0) throw std::invalid_argument("iterations must be >= 0");

  Rng rng(config.seed);
  SearchResult result;

  std::vector<Gene> genes =
      random_population(tmpl, constraint, config.population, rng, config.max_attempts);
  std::vector<Candidate> pool =
      evaluate_all(tmpl, constraint, evaluator, genes, config.workers);
  result.evaluations += static_cast<int>(genes.size());

  auto record = [&](int iteration) {
    const Candidate* best = &pool.front();
    for (const Candidate& c : pool)
      if (candidate_better(c, *best)) best = &c;
    if (result.history.empty() || candidate_better(*best, result.best)) result.best = *best;
    result.history.push_back(
        IterationStats{iteration, result.best.fitness, result.best.cost, result.best.gene});
  };
  record(0);

  for (int iter = 1; iter <= config.iterations; ++iter) {
    std::sort(pool.begin(), pool.end(), candidate_better);
    const size_t k = std::min<size_t>(static_cast<size_t>(config.topk), pool.size());
    std::vector<Candidate> parents(pool.begin(), pool.begin() + static_cast<long>(k));

    std::vector<Gene> offspring;
    offspring.reserve(static_cast<size_t>(config.mutations + config.crossovers));
    for (int m = 0; m < config.mutations; ++m) {
      const Gene& p = parents[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(k) - 1))].gene;
      offspring.push_back(mutate(tmpl, p, config.p_mut, rng, constraint, config.max_attempts));
    }
    for (int s = 0; s < config.crossovers; ++s) {
      const Gene& pa = parents[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(k) - 1))].gene;
      const Gene& pb = parents[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(k) - 1))].gene;
      offspring.push_back(crossover(tmpl, pa, pb, rng, constraint, config.max_attempts));
    }

    std::vector<Candidate> children =
        evaluate_all(tmpl, constraint, evaluator, offspring, config.workers);
    result.evaluations += static_cast<int>(offspring.size());

    // Survivors stay in the pool alongside their offspring.
    pool = std::move(parents);
    pool.insert(pool.end(), children.begin(), children.end());
    record(iter);
  }
  return result;
}

void save_history_csv(const std::string& path, const std::vector<IterationStats>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open history csv for writing: " + path);
  os << "iter,best_acc,best_cost,gene\n";
  os.precision(17);
  for (const IterationStats& s : history)
    os << s.iteration << ',' << s.best_fitness << ',' << s.best_cost << ','
       << serialize_gene(s.best_gene) << '\n';
  if (!os.good()) throw std::runtime_error("write failed for history csv: " + path);
}

}  // namespace prunekit
