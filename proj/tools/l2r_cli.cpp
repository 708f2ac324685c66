#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "l2r/error.hpp"
#include "l2r/evaluation.hpp"
#include "l2r/instances.hpp"
#include "l2r/parameters.hpp"
#include "l2r/prc.hpp"
#include "l2r/rollout.hpp"
#include "l2r/static_reduction.hpp"
#include "l2r/training.hpp"

#ifndef L2R_BUILD_ID
#define L2R_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace l2r;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, path + ": " + e.what());
  }
}

// Shared by every subcommand; filled in as the command runs.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::array();
  json outputs = json::array();
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string started = utc_now();
  Clock::time_point start = Clock::now();

  void write_manifest(const std::string& path) const {
    json m;
    m["command"] = command;
    m["argv"] = argv;
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["workers"] = workers;
    m["build_id"] = L2R_BUILD_ID;
    m["timing"] = {{"started_utc", started}, {"wall_ms", ms_since(start)}};
    write_text(path, m.dump(2) + "\n");
  }
};

int resolve_workers(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("L2R_WORKERS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::kInvalidConfig, "L2R_WORKERS must be a positive integer");
  }
  return omp_get_num_procs();
}

// --- solutions ------------------------------------------------------------------

json solution_json(const Instance& instance, const std::vector<int>& sequence, int steps,
                   int fallback_events, double wall_ms) {
  validate_sequence(instance, sequence);
  json j;
  j["instance"] = instance.name();
  j["kind"] = to_string(instance.kind());
  if (instance.is_cvrp()) {
    j["routes"] = routes_from_sequence(sequence).routes;
  } else {
    j["order"] = sequence;
  }
  j["objective"] = objective(instance, sequence);
  j["steps"] = steps;
  j["fallback_events"] = fallback_events;
  j["wall_ms"] = wall_ms;
  return j;
}

std::vector<int> sequence_from_solution(const Instance& instance, const json& doc) {
  try {
    std::vector<int> seq;
    if (instance.is_cvrp()) {
      RoutePlan plan;
      plan.routes = doc.at("routes").get<std::vector<std::vector<int>>>();
      seq = sequence_from_routes(plan);
    } else {
      seq = doc.at("order").get<std::vector<int>>();
    }
    validate_sequence(instance, seq);
    return seq;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("solution file: ") + e.what());
  }
}

std::string render_svg(const Instance& instance, const std::vector<int>& sequence,
                       const StepRecord* overlay) {
  constexpr double kSize = 1000.0, kPad = 20.0;
  const auto pts = instance.unit_coords();
  auto px = [&](int i) { return kPad + pts[i].x * (kSize - 2 * kPad); };
  auto py = [&](int i) { return kSize - kPad - pts[i].y * (kSize - 2 * kPad); };
  const double r = std::clamp(300.0 / std::sqrt(static_cast<double>(instance.size())), 0.4, 5.0);
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kSize << ' ' << kSize
    << "\" width=\"" << kSize << "\" height=\"" << kSize << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!sequence.empty()) {
    s << "<polygon fill=\"none\" stroke=\"#3465a4\" stroke-width=\"" << r * 0.4 << "\" points=\"";
    for (int v : sequence) s << px(v) << ',' << py(v) << ' ';
    s << "\"/>\n";
  }
  for (int i = 0; i < instance.size(); ++i)
    s << "<circle cx=\"" << px(i) << "\" cy=\"" << py(i) << "\" r=\"" << r << "\" fill=\"#2e3436\"/>\n";
  if (instance.is_cvrp())
    s << "<rect x=\"" << px(0) - 2 * r << "\" y=\"" << py(0) - 2 * r << "\" width=\"" << 4 * r
      << "\" height=\"" << 4 * r << "\" fill=\"#cc0000\"/>\n";
  if (overlay) {
    for (int v : overlay->feasible)
      s << "<circle cx=\"" << px(v) << "\" cy=\"" << py(v) << "\" r=\"" << r * 1.6
        << "\" fill=\"none\" stroke=\"#babdb6\"/>\n";
    for (int v : overlay->candidates)
      s << "<circle cx=\"" << px(v) << "\" cy=\"" << py(v) << "\" r=\"" << r * 2.2
        << "\" fill=\"#f57900\" fill-opacity=\"0.6\"/>\n";
    s << "<circle cx=\"" << px(overlay->last) << "\" cy=\"" << py(overlay->last) << "\" r=\"" << r * 2.5
      << "\" fill=\"#cc0000\"/>\n";
    if (overlay->chosen >= 0)
      s << "<line x1=\"" << px(overlay->last) << "\" y1=\"" << py(overlay->last) << "\" x2=\""
        << px(overlay->chosen) << "\" y2=\"" << py(overlay->chosen)
        << "\" stroke=\"#cc0000\" stroke-width=\"" << r << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

json step_json(const StepRecord& rec) {
  std::map<int, double> score_of;
  for (std::size_t j = 0; j < rec.scores.size() && j < rec.feasible.size(); ++j)
    score_of[rec.feasible[j]] = rec.scores[j];
  json scores = json::array();
  for (int v : rec.ranked) scores.push_back(score_of.count(v) ? json(score_of[v]) : json(nullptr));
  return {{"t", rec.t},
          {"feasible_count", rec.feasible.size()},
          {"candidates", rec.ranked},
          {"scores", scores},
          {"sampled", rec.chosen}};
}

ReducerKind parse_reducer(const std::string& s) {
  return s == "distance" ? ReducerKind::kDistance : ReducerKind::kLearned;
}

// --- subcommands -------------------------------------------------------------------

struct GenerateArgs {
  std::string kind = "tsp";
  int n = 100;
  int count = 1;
  std::uint64_t seed = 1;
  std::string distribution = "uniform";
  std::optional<double> capacity;
  std::string format = "json";
  std::string out;
};

int run_generate(const GenerateArgs& a, Run& run) {
  run.seed = a.seed;
  run.config = {{"kind", a.kind}, {"n", a.n}, {"count", a.count}, {"distribution", a.distribution},
                {"format", a.format}, {"capacity", a.capacity ? json(*a.capacity) : json(nullptr)}};
  const ProblemKind kind = parse_problem_kind(a.kind);
  const bool single = a.count == 1;
  if (!single) fs::create_directories(a.out);
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t seed = single ? a.seed : derive_seed(a.seed, static_cast<std::uint64_t>(i));
    Instance inst = a.distribution == "uniform"
                        ? generate_uniform(kind, a.n, kind == ProblemKind::kCvrp ? a.capacity.value_or(50.0)
                                                                                 : a.capacity,
                                           seed)
                        : generate_clustered(kind, a.n, a.distribution, seed, a.capacity.value_or(50.0));
    std::string path = a.out;
    if (!single) {
      const std::string ext = a.format == "json" ? ".json" : (inst.is_cvrp() ? ".vrp" : ".tsp");
      std::ostringstream name;
      name << a.kind << a.n << '_' << std::setw(4) << std::setfill('0') << i << ext;
      path = (fs::path(a.out) / name.str()).string();
    }
    if (a.format == "json") {
      save_instance(inst, path);
    } else {
      write_text(path, to_benchmark(inst));
    }
    run.outputs.push_back(path);
  }
  run.write_manifest(single ? a.out + ".manifest.json" : (fs::path(a.out) / "manifest.json").string());
  return 0;
}

struct TrainArgs {
  std::string preset = "desk";
  std::string config_file;
  std::optional<std::string> kind;
  std::optional<int> epochs, batches, batch_size, n, k, validation_size, eval_pool;
  std::optional<double> gamma, lr, clip_norm;
  std::optional<std::uint64_t> seed;
  bool no_reduction_bias = false, no_local_bias = false;
  std::string out;
  std::string metrics;
  bool verbose = false;
};

int run_train(const TrainArgs& a, Run& run) {
  TrainConfig cfg = a.preset == "paper"
                        ? TrainConfig::paper(a.kind ? parse_problem_kind(*a.kind) : ProblemKind::kTsp)
                        : TrainConfig::desk();
  if (!a.config_file.empty()) {
    cfg = TrainConfig::from_json(read_json(a.config_file), cfg);
    run.inputs.push_back(a.config_file);
  }
  if (a.kind) cfg.kind = parse_problem_kind(*a.kind);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batches) cfg.batches_per_epoch = *a.batches;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.n) cfg.n_train = *a.n;
  if (a.k) cfg.k = *a.k;
  if (a.validation_size) cfg.validation_size = *a.validation_size;
  if (a.eval_pool) cfg.eval_pool_size = *a.eval_pool;
  if (a.gamma) cfg.gamma = *a.gamma;
  if (a.lr) cfg.lr = *a.lr;
  if (a.clip_norm) cfg.clip_norm = *a.clip_norm;
  if (a.seed) cfg.seed = *a.seed;
  if (a.no_reduction_bias) cfg.reduction_bias = false;
  if (a.no_local_bias) cfg.local_bias = false;
  cfg.validate();
  run.seed = cfg.seed;
  run.config = cfg.to_json();

  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.jsonl" : a.metrics;
  std::ostringstream log;
  TrainHooks hooks;
  hooks.diagnostic_checkpoint = a.out + ".diagnostic";
  hooks.on_epoch = [&](const EpochMetrics& m) {
    log << m.to_json().dump() << '\n';
    std::cerr << "epoch " << m.epoch << ": mean reward " << m.mean_reward << ", validation "
              << m.validation_objective << (m.baseline_updated ? " (baseline updated)" : "") << '\n';
  };
  if (a.verbose)
    hooks.on_batch = [](int epoch, int batch, double reward) {
      std::cerr << "  epoch " << epoch << " batch " << batch << ": mean reward " << reward << '\n';
    };
  TrainResult result = train(cfg, hooks);

  std::ostringstream full;
  full << json{{"epoch", 0}, {"validation_objective", result.initial_validation_objective}}.dump() << '\n'
       << log.str();
  write_text(metrics_path, full.str());
  json meta = {{"train_config", cfg.to_json()},
               {"build_id", L2R_BUILD_ID},
               {"initial_validation_objective", result.initial_validation_objective},
               {"final_validation_objective",
                result.epochs.empty() ? result.initial_validation_objective
                                      : result.epochs.back().validation_objective}};
  save_checkpoint(a.out, result.params, meta);
  run.outputs.push_back(a.out);
  run.outputs.push_back(metrics_path);
  run.write_manifest(a.out + ".manifest.json");
  return 0;
}

struct SolveArgs {
  std::string instance;
  std::string checkpoint;
  std::string method = "policy";
  std::string reducer = "learned";
  std::string mode = "greedy";
  std::optional<int> k;
  std::optional<double> gamma;
  std::uint64_t seed = 0;
  int start = 0;
  std::string out;
  std::string svg;
  int svg_step = -1;
  std::string instrument;
};

int run_solve(const SolveArgs& a, Run& run) {
  run.seed = a.seed;
  run.inputs.push_back(a.instance);
  const Instance inst = load_instance(a.instance);
  const auto t0 = Clock::now();
  std::vector<int> sequence;
  int steps = 0, fallbacks = 0;
  std::vector<StepRecord> records;
  json cfg = {{"method", a.method}, {"mode", a.mode}, {"start", a.start}};

  if (a.method == "nearest") {
    sequence = nearest_neighbor(inst, a.start);
    steps = static_cast<int>(sequence.size()) - (inst.is_cvrp() ? 1 : 0);
  } else {
    if (a.checkpoint.empty()) throw Error(ErrorCode::kInvalidConfig, "solve: --checkpoint is required for --method policy");
    run.inputs.push_back(a.checkpoint);
    Checkpoint ck = load_checkpoint(a.checkpoint);
    if (ck.params.config.kind != inst.kind())
      throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint was trained for a different problem kind");
    const double gamma = a.gamma.value_or(ck.params.config.gamma);
    const int k = a.k.value_or(ck.params.config.k);
    const SparseGraph graph = build_sparse_graph(inst, gamma);
    Policy<float> policy{&ck.params, parse_reducer(a.reducer), k};
    RolloutOptions opt;
    opt.mode = a.mode == "sample" ? SelectMode::kSample : SelectMode::kGreedy;
    opt.start = StartRule::fixed(a.start);
    opt.seed = a.seed;
    opt.instrument = !a.instrument.empty() || (!a.svg.empty() && a.svg_step >= 0);
    RolloutResult r = rollout(inst, graph, policy, opt);
    sequence = std::move(r.sequence);
    steps = r.steps;
    fallbacks = r.fallback_events;
    records = std::move(r.records);
    cfg["reducer"] = a.reducer;
    cfg["k"] = k;
    cfg["gamma"] = gamma;
  }
  const double wall = ms_since(t0);
  run.config = cfg;
  const json sol = solution_json(inst, sequence, steps, fallbacks, wall);
  write_text(a.out, sol.dump(2) + "\n");
  run.outputs.push_back(a.out);

  if (!a.instrument.empty()) {
    std::ostringstream lines;
    for (const auto& rec : records) lines << step_json(rec).dump() << '\n';
    write_text(a.instrument, lines.str());
    run.outputs.push_back(a.instrument);
  }
  if (!a.svg.empty()) {
    const StepRecord* overlay = nullptr;
    if (a.svg_step >= 0) {
      if (a.svg_step >= static_cast<int>(records.size()))
        throw Error(ErrorCode::kInvalidConfig, "solve: --svg-step beyond the last step");
      overlay = &records[a.svg_step];
    }
    write_text(a.svg, render_svg(inst, sequence, overlay));
    run.outputs.push_back(a.svg);
  }
  run.write_manifest(a.out + ".manifest.json");
  std::cout << "objective " << std::setprecision(10) << sol["objective"].get<double>() << '\n';
  return 0;
}

struct ImproveArgs {
  std::string instance, solution, checkpoint, out;
  std::optional<int> k;
  int prc_iters = 100;
  int prc_max_destroy = 1000;
  std::uint64_t seed = 0;
};

int run_improve(const ImproveArgs& a, Run& run) {
  run.seed = a.seed;
  run.inputs = {a.instance, a.solution, a.checkpoint};
  const Instance inst = load_instance(a.instance);
  const auto input = sequence_from_solution(inst, read_json(a.solution));
  Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.params.config.kind != inst.kind())
    throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint was trained for a different problem kind");
  const int k = a.k.value_or(ck.params.config.k);
  Policy<float> policy{&ck.params, ReducerKind::kLearned, k};
  PrcConfig pc;
  pc.iterations = a.prc_iters;
  pc.max_destroy_len = a.prc_max_destroy;
  pc.seed = a.seed;
  run.config = {{"k", k}, {"prc_iters", a.prc_iters}, {"prc_max_destroy", a.prc_max_destroy}};
  const auto t0 = Clock::now();
  PrcResult r = improve(inst, input, policy, pc);
  const double wall = ms_since(t0);
  json sol = solution_json(inst, r.sequence, static_cast<int>(r.sequence.size()), 0, wall);
  sol["input_objective"] = objective(inst, input);
  sol["history"] = r.history;
  sol["accepted"] = r.accepted;
  write_text(a.out, sol.dump(2) + "\n");
  run.outputs.push_back(a.out);
  run.write_manifest(a.out + ".manifest.json");
  std::cout << "objective " << std::setprecision(10) << sol["objective"].get<double>() << '\n';
  return 0;
}

struct EvaluateArgs {
  std::string oracle = "held-karp";
  std::string experiment;
  int n = 9;
  int count = 50;
  std::uint64_t seed = 1;
  std::string checkpoint;
  std::string reducer = "learned";
  std::optional<int> k;
  std::optional<double> gamma;
  std::vector<int> ks;
  std::string out;
  std::string csv;
};

std::string csv_field(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream s;
  s << std::setprecision(12) << v.get<double>();
  return s.str();
}

int run_evaluate(const EvaluateArgs& a, Run& run) {
  run.seed = a.seed;
  if (a.oracle != "held-karp") throw Error(ErrorCode::kInvalidConfig, "evaluate: only the held-karp oracle is available");
  if (a.n < 2 || a.n > kHeldKarpMaxNodes)
    throw Error(ErrorCode::kSizeGuard, "evaluate: --n must lie in [2, " + std::to_string(kHeldKarpMaxNodes) + "]");
  if (a.count < 1) throw Error(ErrorCode::kInvalidConfig, "evaluate: --count must be positive");
  std::vector<Instance> instances;
  for (int i = 0; i < a.count; ++i)
    instances.push_back(generate_uniform(ProblemKind::kTsp, a.n, std::nullopt,
                                         derive_seed(a.seed, static_cast<std::uint64_t>(i))));
  json report;
  std::string csv;

  if (a.experiment == "pruning") {
    std::vector<int> ks = a.ks;
    if (ks.empty()) ks = {3, a.n - 1};
    run.config = {{"experiment", "pruning"}, {"n", a.n}, {"count", a.count}, {"ks", ks}};
    const PruningReport pr = pruned_oracle_experiment(instances, ks);
    report = pr.to_json();
    csv = pr.to_csv();
  } else if (!a.experiment.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "evaluate: unknown experiment '" + a.experiment + "'");
  } else {
    std::optional<Checkpoint> ck;
    if (!a.checkpoint.empty()) {
      run.inputs.push_back(a.checkpoint);
      ck = load_checkpoint(a.checkpoint);
      if (ck->params.config.kind != ProblemKind::kTsp)
        throw Error(ErrorCode::kIncompatibleCheckpoint, "evaluate: the held-karp oracle needs a TSP checkpoint");
    }
    const int k = a.k.value_or(ck ? ck->params.config.k : 10);
    const double gamma = a.gamma.value_or(ck ? ck->params.config.gamma : 0.1);
    run.config = {{"oracle", a.oracle}, {"n", a.n}, {"count", a.count}, {"k", k}, {"gamma", gamma},
                  {"reducer", a.reducer}};
    std::vector<SolveReport> rows(instances.size() * (ck ? 2 : 1));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(instances.size()); ++i) {
      const Instance& inst = instances[i];
      const Tour opt = held_karp(inst);
      const double ref = tour_length(inst, opt);
      SolveReport nn;
      nn.method = "nearest_neighbor";
      nn.objective = objective(inst, nearest_neighbor(inst, 0));
      nn.reference_objective = ref;
      nn.gap_pct = optimality_gap(nn.objective, ref);
      rows[i * (ck ? 2 : 1)] = nn;
      if (ck) {
        const SparseGraph graph = build_sparse_graph(inst, gamma);
        Policy<float> policy{&ck->params, parse_reducer(a.reducer), k};
        RolloutOptions opt_r;
        const RolloutResult r = rollout(inst, graph, policy, opt_r);
        SolveReport pol;
        pol.method = a.reducer == "distance" ? "policy_greedy_dssr" : "policy_greedy";
        pol.objective = r.objective;
        pol.reference_objective = ref;
        pol.gap_pct = optimality_gap(r.objective, ref);
        pol.optimality_ratio = optimality_ratio(inst, opt, graph, policy).percent();
        pol.fallback_events = r.fallback_events;
        rows[i * 2 + 1] = pol;
      }
    }
    json jrows = json::array();
    std::map<std::string, std::vector<const SolveReport*>> by_method;
    csv = "instance,method,k,objective,reference_objective,gap_pct,optimality_ratio,fallback_events\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int i = static_cast<int>(r / (ck ? 2 : 1));
      json row = rows[r].to_json(false);
      row["instance"] = instances[i].name();
      row["k"] = k;
      jrows.push_back(row);
      by_method[rows[r].method].push_back(&rows[r]);
      csv += instances[i].name() + "," + rows[r].method + "," + std::to_string(k) + "," +
             csv_field(row["objective"]) + "," + csv_field(row.value("reference_objective", json())) + "," +
             csv_field(row.value("gap_pct", json())) + "," + csv_field(row.value("optimality_ratio", json())) +
             "," + std::to_string(rows[r].fallback_events) + "\n";
    }
    json summary = json::array();
    for (const auto& [method, list] : by_method) {
      double obj = 0, gap = 0, ratio = 0;
      int ratio_count = 0;
      for (const SolveReport* s : list) {
        obj += s->objective;
        gap += *s->gap_pct;
        if (s->optimality_ratio) {
          ratio += *s->optimality_ratio;
          ++ratio_count;
        }
      }
      json entry = {{"method", method},
                    {"mean_objective", obj / list.size()},
                    {"mean_gap_pct", gap / list.size()}};
      if (ratio_count > 0) entry["mean_optimality_ratio"] = ratio / ratio_count;
      summary.push_back(entry);
    }
    report = {{"oracle", a.oracle}, {"n", a.n}, {"count", a.count}, {"seed", a.seed},
              {"rows", jrows}, {"summary", summary}};
  }
  write_text(a.out, report.dump(2) + "\n");
  run.outputs.push_back(a.out);
  if (!a.csv.empty()) {
    write_text(a.csv, csv);
    run.outputs.push_back(a.csv);
  }
  run.write_manifest(a.out + ".manifest.json");
  if (report.contains("summary")) std::cout << report["summary"].dump(2) << '\n';
  return 0;
}

int run_inspect(const std::string& checkpoint, const std::string& out, Run& run) {
  run.inputs.push_back(checkpoint);
  const Checkpoint ck = load_checkpoint(checkpoint);
  json j = {{"path", checkpoint},
            {"model", ck.params.config.to_json()},
            {"parameter_count", ck.params.parameter_count()},
            {"tensors", ck.params.names()},
            {"metadata", ck.metadata}};
  std::cout << j.dump(2) << '\n';
  if (!out.empty()) {
    write_text(out, j.dump(2) + "\n");
    run.outputs.push_back(out);
    run.write_manifest(out + ".manifest.json");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-to-reduce construction for TSP and CVRP"};
  app.require_subcommand(1);
  int workers_flag = 0;
  app.add_option("--workers", workers_flag, "Worker threads (default: L2R_WORKERS, then all cores)")
      ->check(CLI::PositiveNumber);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate random instances");
  g->add_option("--kind", gen.kind)->check(CLI::IsMember({"tsp", "cvrp"}));
  g->add_option("--n", gen.n, "Nodes (TSP) or customers (CVRP)")->required();
  g->add_option("--count", gen.count)->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed);
  g->add_option("--distribution", gen.distribution)
      ->check(CLI::IsMember({"uniform", "cluster", "explosion", "implosion"}));
  g->add_option("--capacity", gen.capacity, "CVRP vehicle capacity (default 50)");
  g->add_option("--format", gen.format)->check(CLI::IsMember({"json", "benchmark"}));
  g->add_option("--out", gen.out, "Output file, or directory when --count > 1")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train both models with REINFORCE");
  t->add_option("--preset", tr.preset)->check(CLI::IsMember({"desk", "paper"}));
  t->add_option("--config", tr.config_file, "JSON training config layered over the preset");
  t->add_option("--kind", tr.kind)->check(CLI::IsMember({"tsp", "cvrp"}));
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batches", tr.batches, "Batches per epoch");
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--n", tr.n, "Training instance size");
  t->add_option("--k", tr.k);
  t->add_option("--gamma", tr.gamma);
  t->add_option("--lr", tr.lr);
  t->add_option("--clip-norm", tr.clip_norm);
  t->add_option("--validation-size", tr.validation_size);
  t->add_option("--eval-pool", tr.eval_pool, "Instances in the baseline t-test pool");
  t->add_option("--seed", tr.seed);
  t->add_flag("--no-reduction-bias", tr.no_reduction_bias);
  t->add_flag("--no-local-bias", tr.no_local_bias);
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "Metrics JSONL (default: <out>.metrics.jsonl)");
  t->add_flag("--verbose", tr.verbose);

  SolveArgs so;
  auto* s = app.add_subcommand("solve", "Construct a solution");
  s->add_option("--instance", so.instance)->required()->check(CLI::ExistingFile);
  s->add_option("--checkpoint", so.checkpoint)->check(CLI::ExistingFile);
  s->add_option("--method", so.method)->check(CLI::IsMember({"policy", "nearest"}));
  s->add_option("--reducer", so.reducer)->check(CLI::IsMember({"learned", "distance"}));
  s->add_option("--mode", so.mode)->check(CLI::IsMember({"greedy", "sample"}));
  s->add_option("--k", so.k)->check(CLI::PositiveNumber);
  s->add_option("--gamma", so.gamma);
  s->add_option("--seed", so.seed);
  s->add_option("--start", so.start);
  s->add_option("--out", so.out)->required();
  s->add_option("--svg", so.svg, "Render the tour as SVG");
  s->add_option("--svg-step", so.svg_step, "Overlay the candidate set of this step");
  s->add_option("--instrument", so.instrument, "Per-step JSONL trace");

  ImproveArgs im;
  auto* i = app.add_subcommand("improve", "Refine a solution with parallel local reconstruction");
  i->add_option("--instance", im.instance)->required()->check(CLI::ExistingFile);
  i->add_option("--solution", im.solution)->required()->check(CLI::ExistingFile);
  i->add_option("--checkpoint", im.checkpoint)->required()->check(CLI::ExistingFile);
  i->add_option("--k", im.k)->check(CLI::PositiveNumber);
  i->add_option("--prc-iters", im.prc_iters)->check(CLI::NonNegativeNumber);
  i->add_option("--prc-max-destroy", im.prc_max_destroy)->check(CLI::Range(2, 1 << 30));
  i->add_option("--seed", im.seed);
  i->add_option("--out", im.out)->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Gap and ratio reports against an exact oracle");
  e->add_option("--oracle", ev.oracle)->check(CLI::IsMember({"held-karp"}));
  e->add_option("--experiment", ev.experiment, "pruning: restricted-edge optimum vs full optimum")
      ->check(CLI::IsMember({"pruning"}));
  e->add_option("--n", ev.n);
  e->add_option("--count", ev.count);
  e->add_option("--seed", ev.seed);
  e->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingFile);
  e->add_option("--reducer", ev.reducer)->check(CLI::IsMember({"learned", "distance"}));
  e->add_option("--k", ev.k)->check(CLI::PositiveNumber);
  e->add_option("--gamma", ev.gamma);
  e->add_option("--ks", ev.ks, "k values for the pruning experiment")->delimiter(',');
  e->add_option("--out", ev.out, "JSON report")->required();
  e->add_option("--csv", ev.csv, "CSV report");

  std::string inspect_ck, inspect_out;
  auto* in = app.add_subcommand("inspect", "Print checkpoint metadata");
  in->add_option("--checkpoint", inspect_ck)->required()->check(CLI::ExistingFile);
  in->add_option("--out", inspect_out, "Also write the dump here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  Run run;
  run.argv.assign(argv, argv + argc);
  try {
    run.workers = resolve_workers(workers_flag);
    omp_set_num_threads(run.workers);
    const std::vector<std::pair<CLI::App*, std::function<int()>>> commands = {
        {g, [&] { return run_generate(gen, run); }},
        {t, [&] { return run_train(tr, run); }},
        {s, [&] { return run_solve(so, run); }},
        {i, [&] { return run_improve(im, run); }},
        {e, [&] { return run_evaluate(ev, run); }},
        {in, [&] { return run_inspect(inspect_ck, inspect_out, run); }},
    };
    for (const auto& [sub, fn] : commands) {
      if (!sub->parsed()) continue;
      run.command = sub->get_name();
      return fn();
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
