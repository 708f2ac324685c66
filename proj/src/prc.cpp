#include "l2r/prc.hpp"

#include <algorithm>
#include <exception>

#include "l2r/error.hpp"

namespace l2r {
namespace {

struct Segment {
  std::size_t path;   // index into the path list
  std::size_t begin;  // position of the start endpoint
  std::size_t end;    // position of the destination endpoint
};

double path_length(const Instance& instance, std::span<const int> nodes) {
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) s += instance.distance(nodes[i], nodes[i + 1]);
  return s;
}

// Greedy rebuild of nodes[1..size-2] between the fixed endpoints.
template <typename T>
std::vector<int> rebuild(const StepContext<T>& ctx, std::span<const int> nodes, double load_before) {
  const Instance& instance = *ctx.instance;
  const int start = nodes.front(), dest = nodes.back();
  std::vector<int> pool(nodes.begin() + 1, nodes.end() - 1);
  std::sort(pool.begin(), pool.end());
  const int scale = static_cast<int>(nodes.size());
  std::vector<int> out{start};
  double load = load_before;
  int last = start;
  while (!pool.empty()) {
    const double q = instance.is_cvrp() ? std::max(0.0, 1.0 - load / instance.capacity()) : 1.0;
    const CandidateSet cs = reduce(ctx, {dest, last, q, scale}, pool);
    std::vector<int> cands = cs.indices;
    std::sort(cands.begin(), cands.end());
    const SubGraph sg = normalize_subgraph(instance, dest, last, cands, q);
    const Choice ch = choose_next(*ctx.policy->params, sg, SelectMode::kGreedy);
    out.push_back(ch.node);
    if (instance.is_cvrp()) load += instance.demands()[ch.node];
    pool.erase(std::lower_bound(pool.begin(), pool.end(), ch.node));
    last = ch.node;
  }
  out.push_back(dest);
  return out;
}

}  // namespace

template <typename T>
PrcResult improve(const Instance& instance, std::span<const int> sequence, const Policy<T>& policy,
                  const PrcConfig& config) {
  try {
    validate_sequence(instance, sequence);
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidSolution, std::string("improve: ") + e.what());
  }
  if (config.iterations < 0) throw Error(ErrorCode::kInvalidConfig, "improve: iterations must be >= 0");
  if (config.max_destroy_len < 2) throw Error(ErrorCode::kInvalidConfig, "improve: max_destroy_len must be >= 2");
  if (!policy.params) throw Error(ErrorCode::kInvalidConfig, "improve: the local model needs parameters");

  PrcResult res;
  res.sequence.assign(sequence.begin(), sequence.end());
  res.objective = sequence_length(instance, res.sequence);
  res.history.push_back(res.objective);
  if (config.iterations == 0) return res;

  const bool cvrp = instance.is_cvrp();
  const int n = instance.size();
  const int max_len = std::min(config.max_destroy_len, n);
  Encoding<T> enc;
  if (policy.reducer == ReducerKind::kLearned) enc = encode(*policy.params, instance);
  Rng rng(config.seed);

  for (int it = 0; it < config.iterations; ++it) {
    // Paths with fixed endpoints: the closed tour from a random rotation, or
    // each route depot to depot.
    std::vector<std::vector<int>> paths;
    if (cvrp) {
      for (const auto& r : routes_from_sequence(res.sequence).routes) {
        std::vector<int> p{0};
        p.insert(p.end(), r.begin(), r.end());
        p.push_back(0);
        paths.push_back(std::move(p));
      }
    } else {
      const auto offset = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
      std::vector<int> p(res.sequence.begin() + offset, res.sequence.end());
      p.insert(p.end(), res.sequence.begin(), res.sequence.begin() + offset);
      p.push_back(p.front());
      paths.push_back(std::move(p));
    }

    std::vector<Segment> segments;
    for (std::size_t pi = 0; pi < paths.size(); ++pi) {
      const std::size_t edges = paths[pi].size() - 1;
      for (std::size_t pos = 0; pos < edges;) {
        const auto len = static_cast<std::size_t>(rng.uniform_int(2, max_len));
        const std::size_t end = std::min(edges, pos + len);
        if (end - pos >= 2) segments.push_back({pi, pos, end});
        pos = end;
      }
    }
    if (config.segments_per_iter > 0 && static_cast<int>(segments.size()) > config.segments_per_iter) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(config.segments_per_iter); ++i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(i, segments.size() - 1));
        std::swap(segments[i], segments[j]);
      }
      segments.resize(config.segments_per_iter);
      std::sort(segments.begin(), segments.end(),
                [](const Segment& a, const Segment& b) { return std::tie(a.path, a.begin) < std::tie(b.path, b.begin); });
    }

    std::vector<std::vector<int>> rebuilt(segments.size());
    std::vector<std::exception_ptr> errors(segments.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t s = 0; s < segments.size(); ++s) {
      try {
        StepContext<T> ctx;
        ctx.instance = &instance;
        ctx.policy = &policy;
        ctx.encoding = &enc;
        const auto& seg = segments[s];
        const auto& path = paths[seg.path];
        double load = 0.0;
        if (cvrp)
          for (std::size_t p = 1; p <= seg.begin; ++p) load += instance.demands()[path[p]];
        rebuilt[s] = rebuild(ctx, std::span<const int>(path).subspan(seg.begin, seg.end - seg.begin + 1), load);
      } catch (...) {
        errors[s] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& seg = segments[s];
      auto& path = paths[seg.path];
      const std::span<const int> old(path.data() + seg.begin, seg.end - seg.begin + 1);
      if (path_length(instance, rebuilt[s]) < path_length(instance, old)) {
        std::copy(rebuilt[s].begin(), rebuilt[s].end(), path.begin() + static_cast<std::ptrdiff_t>(seg.begin));
        ++res.accepted;
      }
    }

    std::vector<int> next;
    if (cvrp) {
      next.push_back(0);
      for (const auto& p : paths) next.insert(next.end(), p.begin() + 1, p.end());
    } else {
      next.assign(paths[0].begin(), paths[0].end() - 1);
    }
    validate_sequence(instance, next);
    const double obj = sequence_length(instance, next);
    if (obj <= res.objective) {
      res.sequence = std::move(next);
      res.objective = obj;
    }
    res.history.push_back(res.objective);
  }
  return res;
}

template PrcResult improve<float>(const Instance&, std::span<const int>, const Policy<float>&, const PrcConfig&);
template PrcResult improve<double>(const Instance&, std::span<const int>, const Policy<double>&, const PrcConfig&);

}  // namespace l2r
