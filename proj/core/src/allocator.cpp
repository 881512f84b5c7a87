#include "attnsched/allocator.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

namespace attnsched {

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::Latency: return "latency";
    case Objective::Energy: return "energy";
    case Objective::PeakMemory: return "peak_memory";
    case Objective::Weighted: return "weighted";
  }
  return "?";
}

Objective objective_from_string(std::string_view s) {
  for (auto o : {Objective::Latency, Objective::Energy, Objective::PeakMemory, Objective::Weighted}) {
    if (to_string(o) == s) return o;
  }
  throw std::invalid_argument("unknown objective '" + std::string(s) +
                              "' (latency, energy, peak_memory, weighted)");
}

void GAConfig::validate() const {
  if (population < 2) throw std::invalid_argument("GA population must be >= 2");
  if (mutation_rate < 0 || mutation_rate > 1) throw std::invalid_argument("mutation rate must lie in [0,1]");
  if (crossover_rate < 0 || crossover_rate > 1) throw std::invalid_argument("crossover rate must lie in [0,1]");
  if (weight < 0 || weight > 1) throw std::invalid_argument("objective weight must lie in [0,1]");
}

Metrics evaluate_allocation(const Allocation& a, const NodeGraph& ng, const CostModel& costs,
                            const SchedulePolicy& policy, const ScheduleTemplate* tmpl,
                            const ScheduleContext* ctx) {
  ScheduleResult r = schedule(ng, costs, a, policy, tmpl, ctx);
  return {r.makespan, r.energy, r.peak};
}

Allocation repair_allocation(const LayerGraph& graph, const HardwareSpec& hw, Allocation a) {
  a.resize(graph.size(), 0);
  for (const auto& l : graph.layers()) {
    if (l.kind == LayerKind::Transpose || hw.supports(a[l.id], l.kind)) continue;
    const auto from = static_cast<std::int64_t>(std::min(a[l.id], hw.resource_count()));
    std::optional<ResourceId> best;
    std::int64_t best_dist = 0;
    for (ResourceId r = 0; r < hw.resource_count(); ++r) {
      if (!hw.supports(r, l.kind)) continue;
      const std::int64_t d = std::abs(static_cast<std::int64_t>(r) - from);
      if (!best || d < best_dist) {
        best = r;
        best_dist = d;
      }
    }
    if (!best) throw std::invalid_argument("no resource supports layer " + l.name);
    a[l.id] = *best;
  }
  return complete_allocation(graph, hw, std::move(a));
}

namespace {

class Evaluator {
 public:
  Evaluator(const NodeGraph& ng, const CostModel& costs, const SchedulePolicy& policy,
            const ScheduleTemplate* tmpl, Objective objective, double weight, std::size_t threads)
      : ng_(ng), costs_(costs), policy_(policy), tmpl_(tmpl), objective_(objective), weight_(weight),
        threads_(std::max<std::size_t>(threads, 1)), ctx_(ng) {
    const Metrics ref = run(default_allocation(ng.layers(), costs.hardware()));
    ref_makespan_ = std::max(1.0, static_cast<double>(ref.makespan));
    ref_peak_ = std::max(1.0, static_cast<double>(ref.peak));
  }

  /// Evaluates every individual, filling the cache; parallel when allowed.
  std::vector<Metrics> evaluate(const std::vector<Allocation>& pop) {
    requests_ += pop.size();
    std::vector<const Allocation*> todo;
    for (const auto& a : pop) {
      if (!cache_.contains(a) && std::find_if(todo.begin(), todo.end(),
                                              [&](const Allocation* t) { return *t == a; }) == todo.end()) {
        todo.push_back(&a);
      }
    }
    std::vector<Metrics> fresh(todo.size());
    if (threads_ <= 1 || todo.size() <= 1) {
      for (std::size_t i = 0; i < todo.size(); ++i) fresh[i] = run(*todo[i]);
    } else {
      std::vector<std::thread> workers;
      const std::size_t k = std::min(threads_, todo.size());
      for (std::size_t w = 0; w < k; ++w) {
        workers.emplace_back([&, w] {
          for (std::size_t i = w; i < todo.size(); i += k) fresh[i] = run(*todo[i]);
        });
      }
      for (auto& t : workers) t.join();
    }
    for (std::size_t i = 0; i < todo.size(); ++i) cache_.emplace(*todo[i], fresh[i]);
    std::vector<Metrics> out;
    out.reserve(pop.size());
    for (const auto& a : pop) out.push_back(cache_.at(a));
    return out;
  }

  using Key = std::tuple<double, double, double>;
  Key key(const Metrics& m) const {
    const auto mk = static_cast<double>(m.makespan);
    const auto pk = static_cast<double>(m.peak);
    switch (objective_) {
      case Objective::Latency: return {mk, pk, m.energy};
      case Objective::Energy: return {m.energy, mk, pk};
      case Objective::PeakMemory: return {pk, mk, m.energy};
      case Objective::Weighted:
        return {weight_ * mk / ref_makespan_ + (1.0 - weight_) * pk / ref_peak_, mk, m.energy};
    }
    return {mk, pk, m.energy};
  }
  double fitness(const Metrics& m) const { return std::get<0>(key(m)); }

  std::size_t requests() const { return requests_; }
  std::size_t unique() const { return cache_.size(); }

 private:
  Metrics run(const Allocation& a) const { return evaluate_allocation(a, ng_, costs_, policy_, tmpl_, &ctx_); }

  const NodeGraph& ng_;
  const CostModel& costs_;
  const SchedulePolicy& policy_;
  const ScheduleTemplate* tmpl_;
  Objective objective_;
  double weight_;
  std::size_t threads_;
  ScheduleContext ctx_;
  double ref_makespan_ = 1.0;
  double ref_peak_ = 1.0;
  std::map<Allocation, Metrics> cache_;
  std::size_t requests_ = 0;
};

struct Genome {
  std::vector<LayerId> genes;                   // layers carrying a gene
  std::vector<std::vector<ResourceId>> options;  // supporting resources per gene

  Genome(const LayerGraph& g, const HardwareSpec& hw) {
    for (const auto& l : g.layers()) {
      if (l.kind == LayerKind::Transpose) continue;
      std::vector<ResourceId> opts;
      for (ResourceId r = 0; r < hw.resource_count(); ++r) {
        if (hw.supports(r, l.kind)) opts.push_back(r);
      }
      if (opts.empty()) throw std::invalid_argument("no resource supports layer " + l.name);
      genes.push_back(l.id);
      options.push_back(std::move(opts));
    }
  }

  ResourceId pick(std::size_t gene, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> d(0, options[gene].size() - 1);
    return options[gene][d(rng)];
  }
};

}  // namespace

SearchResult genetic_search(const NodeGraph& ng, const CostModel& costs, const SchedulePolicy& policy,
                            const GAConfig& cfg, const ScheduleTemplate* tmpl) {
  cfg.validate();
  const LayerGraph& g = ng.layers();
  const HardwareSpec& hw = costs.hardware();
  const Genome genome(g, hw);
  Evaluator eval(ng, costs, policy, tmpl, cfg.objective, cfg.weight, cfg.threads);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  auto random_individual = [&] {
    Allocation a(g.size(), 0);
    for (std::size_t i = 0; i < genome.genes.size(); ++i) a[genome.genes[i]] = genome.pick(i, rng);
    return complete_allocation(g, hw, a);
  };

  auto head_uniform = [&] {
    std::vector<std::size_t> core_of(g.head_count());
    std::uniform_int_distribution<std::size_t> pick_core(0, hw.cores.size() - 1);
    for (auto& c : core_of) c = pick_core(rng);
    Allocation a(g.size(), 0);
    for (std::size_t i = 0; i < genome.genes.size(); ++i) {
      const Layer& l = g.layer(genome.genes[i]);
      const std::size_t core = core_of[l.head % core_of.size()];
      ResourceId r = core;
      for (ResourceId s = hw.cores.size(); s < hw.resource_count(); ++s) {
        if (hw.home_core(s) == core && hw.supports(s, l.kind)) {
          r = s;
          break;
        }
      }
      a[l.id] = r;
    }
    return repair_allocation(g, hw, a);
  };

  std::vector<Allocation> pop;
  for (const auto& s : cfg.seeds) {
    if (pop.size() < cfg.population) pop.push_back(repair_allocation(g, hw, s));
  }
  const std::size_t uniform_quota = pop.size() + (cfg.population - pop.size()) / 2;
  while (pop.size() < uniform_quota) pop.push_back(head_uniform());
  while (pop.size() < cfg.population) pop.push_back(random_individual());

  SearchResult result;
  std::vector<Metrics> fit = eval.evaluate(pop);
  auto better = [&](const Metrics& a, const Metrics& b) { return eval.key(a) < eval.key(b); };
  auto track_best = [&](std::size_t generation) {
    for (std::size_t i = 0; i < pop.size(); ++i) {
      if (result.allocation.empty() || better(fit[i], result.metrics)) {
        result.allocation = pop[i];
        result.metrics = fit[i];
      }
    }
    result.log.push_back({generation, eval.fitness(result.metrics), result.metrics, eval.requests()});
  };
  track_best(0);

  const std::size_t immigrants = std::max<std::size_t>(1, cfg.population / 12);
  for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
    auto tournament = [&]() -> const Allocation& {
      std::uniform_int_distribution<std::size_t> d(0, pop.size() - 1);
      const std::size_t a = d(rng);
      const std::size_t b = d(rng);
      return better(fit[b], fit[a]) ? pop[b] : pop[a];
    };
    std::vector<Allocation> next;
    for (std::size_t k = 0; k < immigrants; ++k) next.push_back(head_uniform());
    while (next.size() < cfg.population) {
      Allocation a = tournament();
      Allocation b = tournament();
      if (genome.genes.size() > 1 && coin(rng) < cfg.crossover_rate) {
        std::uniform_int_distribution<std::size_t> cut(1, genome.genes.size() - 1);
        const std::size_t c = cut(rng);
        for (std::size_t i = c; i < genome.genes.size(); ++i) {
          std::swap(a[genome.genes[i]], b[genome.genes[i]]);
        }
      }
      for (Allocation* child : {&a, &b}) {
        for (std::size_t i = 0; i < genome.genes.size(); ++i) {
          if (coin(rng) < cfg.mutation_rate) (*child)[genome.genes[i]] = genome.pick(i, rng);
        }
        *child = complete_allocation(g, hw, *child);
        if (next.size() < cfg.population) next.push_back(*child);
      }
    }
    std::vector<Metrics> next_fit = eval.evaluate(next);
    // Survivors: the best distinct individuals of parents and offspring.
    std::vector<std::size_t> order(pop.size() + next.size());
    std::iota(order.begin(), order.end(), 0);
    auto ind = [&](std::size_t i) -> const Allocation& { return i < pop.size() ? pop[i] : next[i - pop.size()]; };
    auto met = [&](std::size_t i) -> const Metrics& { return i < pop.size() ? fit[i] : next_fit[i - pop.size()]; };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return better(met(a), met(b)); });
    std::vector<Allocation> survivors;
    std::vector<Metrics> survivor_fit;
    std::set<Allocation> seen;
    std::vector<std::size_t> repeats;
    for (std::size_t i : order) {
      if (survivors.size() == cfg.population) break;
      if (seen.insert(ind(i)).second) {
        survivors.push_back(ind(i));
        survivor_fit.push_back(met(i));
      } else {
        repeats.push_back(i);
      }
    }
    for (std::size_t k = 0; survivors.size() < cfg.population; ++k) {
      survivors.push_back(ind(repeats[k]));
      survivor_fit.push_back(met(repeats[k]));
    }
    pop = std::move(survivors);
    fit = std::move(survivor_fit);
    track_best(gen);
  }
  result.evaluations = eval.requests();
  result.unique_evaluations = eval.unique();
  return result;
}

SearchResult random_search(const NodeGraph& ng, const CostModel& costs, const SchedulePolicy& policy,
                           std::size_t budget, std::uint64_t seed, Objective objective,
                           const ScheduleTemplate* tmpl) {
  const LayerGraph& g = ng.layers();
  const HardwareSpec& hw = costs.hardware();
  const Genome genome(g, hw);
  Evaluator eval(ng, costs, policy, tmpl, objective, 0.5, 1);
  std::mt19937_64 rng(seed);
  SearchResult result;
  for (std::size_t i = 0; i < budget; ++i) {
    Allocation a(g.size(), 0);
    for (std::size_t k = 0; k < genome.genes.size(); ++k) a[genome.genes[k]] = genome.pick(k, rng);
    a = complete_allocation(g, hw, a);
    const Metrics m = eval.evaluate({a}).front();
    if (result.allocation.empty() || eval.key(m) < eval.key(result.metrics)) {
      result.allocation = a;
      result.metrics = m;
    }
    result.log.push_back({i, eval.fitness(result.metrics), result.metrics, eval.requests()});
  }
  result.evaluations = eval.requests();
  result.unique_evaluations = eval.unique();
  return result;
}

std::string ga_log_csv(const SearchResult& r) {
  std::ostringstream os;
  os << "generation,best_fitness,makespan,energy,peak_words,evaluations\n";
  for (const auto& l : r.log) {
    os << l.generation << "," << l.best_fitness << "," << l.best.makespan << "," << l.best.energy << ","
       << l.best.peak << "," << l.evaluations << "\n";
  }
  return os.str();
}

}  // namespace attnsched
