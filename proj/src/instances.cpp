#include "l2r/instances.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "l2r/error.hpp"
#include "l2r/rng.hpp"

namespace l2r {

const char* to_string(ProblemKind kind) {
  return kind == ProblemKind::kTsp ? "tsp" : "cvrp";
}

ProblemKind parse_problem_kind(std::string_view text) {
  if (text == "tsp" || text == "TSP") return ProblemKind::kTsp;
  if (text == "cvrp" || text == "CVRP") return ProblemKind::kCvrp;
  throw Error(ErrorCode::kInvalidConfig, "unknown problem kind '" + std::string(text) + "'");
}

const char* to_string(ClusterPattern pattern) {
  switch (pattern) {
    case ClusterPattern::kCluster: return "cluster";
    case ClusterPattern::kExplosion: return "explosion";
    case ClusterPattern::kImplosion: return "implosion";
  }
  return "cluster";
}

ClusterPattern parse_cluster_pattern(std::string_view text) {
  if (text == "cluster") return ClusterPattern::kCluster;
  if (text == "explosion") return ClusterPattern::kExplosion;
  if (text == "implosion") return ClusterPattern::kImplosion;
  throw Error(ErrorCode::kInvalidPattern, "unknown pattern '" + std::string(text) + "'");
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kInvalidIndex: return "invalid-index";
    case ViolationKind::kDepotInRoute: return "depot-in-route";
    case ViolationKind::kDuplicateCustomer: return "duplicate-customer";
    case ViolationKind::kMissingCustomer: return "missing-customer";
    case ViolationKind::kCapacityOverflow: return "capacity-overflow";
    case ViolationKind::kEmptyRoute: return "empty-route";
  }
  return "unknown";
}

// --- Instance --------------------------------------------------------------

namespace {

void check_coords(const std::vector<Point>& coords) {
  if (coords.size() < 2) {
    throw Error(ErrorCode::kInvalidSize, "an instance needs at least 2 nodes");
  }
  if (coords.size() > static_cast<std::size_t>(std::numeric_limits<int>::max())) {
    throw Error(ErrorCode::kInvalidSize, "too many nodes");
  }
  for (const auto& p : coords) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw Error(ErrorCode::kInvalidInstance, "non-finite coordinate");
    }
  }
}

}  // namespace

Instance Instance::make_tsp(std::string name, std::vector<Point> coords) {
  check_coords(coords);
  Instance inst;
  inst.kind_ = ProblemKind::kTsp;
  inst.name_ = std::move(name);
  inst.coords_ = std::move(coords);
  inst.finalize();
  return inst;
}

Instance Instance::make_cvrp(std::string name, std::vector<Point> coords,
                             std::vector<double> demands, double capacity) {
  check_coords(coords);
  if (!(capacity > 0.0) || !std::isfinite(capacity)) {
    throw Error(ErrorCode::kInvalidCapacity, "capacity must be positive");
  }
  if (demands.size() != coords.size()) {
    throw Error(ErrorCode::kInvalidInstance, "demands length must equal coords length");
  }
  if (demands[0] != 0.0) {
    throw Error(ErrorCode::kInvalidInstance, "depot demand must be 0");
  }
  for (std::size_t i = 1; i < demands.size(); ++i) {
    if (!(demands[i] > 0.0) || demands[i] > capacity) {
      std::ostringstream msg;
      msg << "demand of customer " << i << " (" << demands[i] << ") outside (0, "
          << capacity << "]";
      throw Error(demands[i] > capacity ? ErrorCode::kInvalidCapacity
                                        : ErrorCode::kInvalidInstance,
                  msg.str());
    }
  }
  Instance inst;
  inst.kind_ = ProblemKind::kCvrp;
  inst.name_ = std::move(name);
  inst.coords_ = std::move(coords);
  inst.demands_ = std::move(demands);
  inst.capacity_ = capacity;
  inst.finalize();
  return inst;
}

void Instance::finalize() {
  bbox_ = {coords_[0].x, coords_[0].y, coords_[0].x, coords_[0].y};
  for (const auto& p : coords_) {
    bbox_.min_x = std::min(bbox_.min_x, p.x);
    bbox_.min_y = std::min(bbox_.min_y, p.y);
    bbox_.max_x = std::max(bbox_.max_x, p.x);
    bbox_.max_y = std::max(bbox_.max_y, p.y);
  }
  const double extent = std::max(bbox_.max_x - bbox_.min_x, bbox_.max_y - bbox_.min_y);
  unit_scale_ = extent > 0.0 ? 1.0 / extent : 1.0;
  unit_coords_.resize(coords_.size());
  for (std::size_t i = 0; i < coords_.size(); ++i) {
    unit_coords_[i] = {(coords_[i].x - bbox_.min_x) * unit_scale_,
                       (coords_[i].y - bbox_.min_y) * unit_scale_};
  }
  unit_demands_.assign(demands_.size(), 0.0);
  for (std::size_t i = 0; i < demands_.size(); ++i) {
    unit_demands_[i] = demands_[i] / capacity_;
  }
}

double Instance::distance(int i, int j, DistanceMode mode) const {
  const double dx = coords_[i].x - coords_[j].x;
  const double dy = coords_[i].y - coords_[j].y;
  const double d = std::sqrt(dx * dx + dy * dy);
  return mode == DistanceMode::kRounded ? std::floor(d + 0.5) : d;
}

double Instance::unit_distance(int i, int j) const {
  const double dx = unit_coords_[i].x - unit_coords_[j].x;
  const double dy = unit_coords_[i].y - unit_coords_[j].y;
  return std::sqrt(dx * dx + dy * dy);
}

// --- generation ------------------------------------------------------------

namespace {

std::vector<double> draw_demands(Rng& rng, int customers) {
  std::vector<double> demands(customers + 1, 0.0);
  for (int i = 1; i <= customers; ++i) {
    demands[i] = static_cast<double>(rng.uniform_int(1, 9));
  }
  return demands;
}

constexpr double kMaxGeneratedDemand = 9.0;

void check_generation(ProblemKind kind, int n, std::optional<double> capacity) {
  if (n < 2) throw Error(ErrorCode::kInvalidSize, "n must be at least 2");
  if (kind == ProblemKind::kCvrp) {
    if (!capacity) throw Error(ErrorCode::kInvalidCapacity, "CVRP requires a capacity");
    if (!(*capacity > kMaxGeneratedDemand)) {
      throw Error(ErrorCode::kInvalidCapacity,
                  "capacity must exceed the maximum generated demand (9)");
    }
  }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Instance generate_uniform(ProblemKind kind, int n, std::optional<double> capacity,
                          std::uint64_t seed) {
  check_generation(kind, n, capacity);
  Rng rng(seed);
  const int nodes = kind == ProblemKind::kCvrp ? n + 1 : n;
  std::vector<Point> coords(nodes);
  for (auto& p : coords) {
    p.x = rng.uniform();
    p.y = rng.uniform();
  }
  std::ostringstream name;
  name << to_string(kind) << n << "-uniform-s" << seed;
  if (kind == ProblemKind::kTsp) return Instance::make_tsp(name.str(), std::move(coords));
  auto demands = draw_demands(rng, n);
  return Instance::make_cvrp(name.str(), std::move(coords), std::move(demands), *capacity);
}

Instance generate_clustered(ProblemKind kind, int n, ClusterPattern pattern,
                            std::uint64_t seed, double capacity) {
  check_generation(kind, n, capacity);
  Rng rng(seed);
  const int nodes = kind == ProblemKind::kCvrp ? n + 1 : n;
  std::vector<Point> coords(nodes);
  const int first = kind == ProblemKind::kCvrp ? 1 : 0;
  if (first == 1) coords[0] = {rng.uniform(), rng.uniform()};

  switch (pattern) {
    case ClusterPattern::kCluster: {
      const int count = static_cast<int>(rng.uniform_int(3, 8));
      std::vector<Point> centers(count);
      for (auto& c : centers) c = {rng.uniform(), rng.uniform()};
      for (int i = first; i < nodes; ++i) {
        const auto& c = centers[rng.uniform_int(0, count - 1)];
        coords[i] = {clamp01(c.x + kClusterSigma * rng.normal()),
                     clamp01(c.y + kClusterSigma * rng.normal())};
      }
      break;
    }
    case ClusterPattern::kExplosion:
    case ClusterPattern::kImplosion: {
      const Point c{rng.uniform(kDiskRadius, 1.0 - kDiskRadius),
                    rng.uniform(kDiskRadius, 1.0 - kDiskRadius)};
      for (int i = first; i < nodes; ++i) {
        Point p{rng.uniform(), rng.uniform()};
        const double dx = p.x - c.x;
        const double dy = p.y - c.y;
        const double r = std::sqrt(dx * dx + dy * dy);
        if (r < kDiskRadius) {
          if (pattern == ClusterPattern::kImplosion) {
            p = {c.x + kImplosionFactor * dx, c.y + kImplosionFactor * dy};
          } else {
            double ux, uy;
            if (r > 0.0) {
              ux = dx / r;
              uy = dy / r;
            } else {
              const double angle = 2.0 * std::numbers::pi * rng.uniform();
              ux = std::cos(angle);
              uy = std::sin(angle);
            }
            const double pushed = kDiskRadius + rng.exponential(0.1);
            p = {c.x + pushed * ux, c.y + pushed * uy};
          }
        }
        coords[i] = {clamp01(p.x), clamp01(p.y)};
      }
      break;
    }
  }

  std::ostringstream name;
  name << to_string(kind) << n << "-" << to_string(pattern) << "-s" << seed;
  if (kind == ProblemKind::kTsp) return Instance::make_tsp(name.str(), std::move(coords));
  auto demands = draw_demands(rng, n);
  return Instance::make_cvrp(name.str(), std::move(coords), std::move(demands), capacity);
}

Instance generate_clustered(ProblemKind kind, int n, std::string_view pattern,
                            std::uint64_t seed, double capacity) {
  return generate_clustered(kind, n, parse_cluster_pattern(pattern), seed, capacity);
}

// --- benchmark files -------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
  throw Error(ErrorCode::kParseError, "line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

double to_number(const std::string& tok, int line) {
  // strtod accepts the exponent forms seen in TSPLIB files (e.g. 1.2e+03).
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0' || !std::isfinite(v)) {
    parse_fail(line, "expected a number, got '" + tok + "'");
  }
  return v;
}

long to_integer(const std::string& tok, int line) {
  long v = 0;
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) parse_fail(line, "expected an integer, got '" + tok + "'");
  return v;
}

}  // namespace

Instance parse_benchmark(std::string_view text, BenchmarkFormat format) {
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;

  std::string name = "unnamed";
  std::string type;
  long dimension = -1;
  double capacity = -1.0;
  bool have_edge_type = false;
  std::vector<Point> coords;
  std::vector<bool> coord_seen;
  std::vector<double> demands;
  std::vector<bool> demand_seen;
  std::vector<long> depots;

  enum class Section { kNone, kCoords, kDemands, kDepots };
  Section section = Section::kNone;
  long section_remaining = 0;

  auto need_dimension = [&](int line) {
    if (dimension < 0) parse_fail(line, "section before DIMENSION");
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;

    if (section == Section::kCoords || section == Section::kDemands) {
      if (section_remaining > 0) {
        const auto tok = tokens(line);
        const std::size_t want = section == Section::kCoords ? 3 : 2;
        if (tok.size() != want) parse_fail(line_no, "malformed section entry '" + line + "'");
        const long id = to_integer(tok[0], line_no);
        if (id < 1 || id > dimension) parse_fail(line_no, "node id out of range");
        if (section == Section::kCoords) {
          if (coord_seen[id - 1]) parse_fail(line_no, "duplicate node id");
          coord_seen[id - 1] = true;
          coords[id - 1] = {to_number(tok[1], line_no), to_number(tok[2], line_no)};
        } else {
          if (demand_seen[id - 1]) parse_fail(line_no, "duplicate demand id");
          demand_seen[id - 1] = true;
          demands[id - 1] = to_number(tok[1], line_no);
        }
        --section_remaining;
        continue;
      }
      section = Section::kNone;
    }
    if (section == Section::kDepots) {
      bool done = false;
      for (const auto& tok : tokens(line)) {
        const long id = to_integer(tok, line_no);
        if (id == -1) {
          done = true;
          break;
        }
        if (id < 1 || id > dimension) parse_fail(line_no, "depot id out of range");
        depots.push_back(id);
      }
      if (done) section = Section::kNone;
      continue;
    }

    if (line == "EOF") break;
    std::string key;
    std::string value;
    const auto colon = line.find(':');
    if (colon != std::string::npos) {
      key = trim(line.substr(0, colon));
      value = trim(line.substr(colon + 1));
    } else {
      const auto space = line.find_first_of(" \t");
      key = trim(line.substr(0, space));
      value = space == std::string::npos ? "" : trim(line.substr(space));
    }

    if (key == "NAME") {
      name = value;
    } else if (key == "TYPE") {
      type = value;
    } else if (key == "COMMENT") {
    } else if (key == "DIMENSION") {
      dimension = to_integer(value, line_no);
      if (dimension < 2) parse_fail(line_no, "DIMENSION must be at least 2");
      coords.assign(dimension, {});
      coord_seen.assign(dimension, false);
      demands.assign(dimension, 0.0);
      demand_seen.assign(dimension, false);
    } else if (key == "CAPACITY") {
      capacity = to_number(value, line_no);
    } else if (key == "EDGE_WEIGHT_TYPE") {
      if (value != "EUC_2D") {
        throw Error(ErrorCode::kUnsupportedEdgeWeight,
                    "line " + std::to_string(line_no) + ": EDGE_WEIGHT_TYPE " + value);
      }
      have_edge_type = true;
    } else if (key == "NODE_COORD_SECTION") {
      need_dimension(line_no);
      section = Section::kCoords;
      section_remaining = dimension;
    } else if (key == "DEMAND_SECTION") {
      need_dimension(line_no);
      section = Section::kDemands;
      section_remaining = dimension;
    } else if (key == "DEPOT_SECTION") {
      need_dimension(line_no);
      section = Section::kDepots;
    } else if (key == "EDGE_WEIGHT_FORMAT" || key == "EDGE_WEIGHT_SECTION" ||
               key == "DISPLAY_DATA_TYPE" || key == "NODE_COORD_TYPE") {
      if (key == "EDGE_WEIGHT_SECTION") {
        throw Error(ErrorCode::kUnsupportedEdgeWeight,
                    "line " + std::to_string(line_no) + ": explicit edge weights");
      }
    } else {
      parse_fail(line_no, "unknown keyword '" + key + "'");
    }
  }

  if (section == Section::kCoords || section == Section::kDemands) {
    if (section_remaining > 0) parse_fail(line_no, "section ended early");
  }
  if (dimension < 0) parse_fail(line_no, "missing DIMENSION");
  if (!have_edge_type) parse_fail(line_no, "missing EDGE_WEIGHT_TYPE");
  if (std::find(coord_seen.begin(), coord_seen.end(), false) != coord_seen.end()) {
    parse_fail(line_no, "NODE_COORD_SECTION incomplete");
  }

  if (format == BenchmarkFormat::kTsplib) {
    if (!type.empty() && type != "TSP") parse_fail(line_no, "TYPE " + type + " is not TSP");
    auto inst = Instance::make_tsp(name, std::move(coords));
    inst.set_objective_mode(DistanceMode::kRounded);
    return inst;
  }

  if (!type.empty() && type != "CVRP") parse_fail(line_no, "TYPE " + type + " is not CVRP");
  if (capacity <= 0.0) parse_fail(line_no, "missing or non-positive CAPACITY");
  if (std::find(demand_seen.begin(), demand_seen.end(), false) != demand_seen.end()) {
    parse_fail(line_no, "DEMAND_SECTION incomplete");
  }
  const long depot = depots.empty() ? 1 : depots.front();
  std::vector<Point> ordered;
  std::vector<double> ordered_demands;
  ordered.reserve(dimension);
  ordered.push_back(coords[depot - 1]);
  ordered_demands.push_back(demands[depot - 1]);
  for (long i = 0; i < dimension; ++i) {
    if (i == depot - 1) continue;
    ordered.push_back(coords[i]);
    ordered_demands.push_back(demands[i]);
  }
  auto inst = Instance::make_cvrp(name, std::move(ordered), std::move(ordered_demands), capacity);
  inst.set_objective_mode(DistanceMode::kRounded);
  return inst;
}

std::string to_benchmark(const Instance& instance) {
  std::ostringstream out;
  char buf[128];
  out << "NAME : " << instance.name() << "\n";
  out << "TYPE : " << (instance.is_cvrp() ? "CVRP" : "TSP") << "\n";
  out << "DIMENSION : " << instance.size() << "\n";
  if (instance.is_cvrp()) {
    std::snprintf(buf, sizeof buf, "%.17g", instance.capacity());
    out << "CAPACITY : " << buf << "\n";
  }
  out << "EDGE_WEIGHT_TYPE : EUC_2D\n";
  out << "NODE_COORD_SECTION\n";
  for (int i = 0; i < instance.size(); ++i) {
    const auto& p = instance.coords()[i];
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g", i + 1, p.x, p.y);
    out << buf << "\n";
  }
  if (instance.is_cvrp()) {
    out << "DEMAND_SECTION\n";
    for (int i = 0; i < instance.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%d %.17g", i + 1, instance.demands()[i]);
      out << buf << "\n";
    }
    out << "DEPOT_SECTION\n1\n-1\n";
  }
  out << "EOF\n";
  return out.str();
}

nlohmann::json instance_to_json(const Instance& instance) {
  nlohmann::json doc;
  doc["kind"] = to_string(instance.kind());
  doc["name"] = instance.name();
  auto coords = nlohmann::json::array();
  for (const auto& p : instance.coords()) coords.push_back({p.x, p.y});
  doc["coords"] = std::move(coords);
  if (instance.is_cvrp()) {
    doc["demands"] = std::vector<double>(instance.demands().begin(), instance.demands().end());
    doc["capacity"] = instance.capacity();
  }
  if (instance.objective_mode() == DistanceMode::kRounded) doc["objective"] = "rounded";
  return doc;
}

Instance instance_from_json(const nlohmann::json& doc) {
  try {
    const auto kind = parse_problem_kind(doc.at("kind").get<std::string>());
    const std::string name = doc.value("name", std::string("unnamed"));
    std::vector<Point> coords;
    for (const auto& c : doc.at("coords")) {
      if (c.size() != 2) throw Error(ErrorCode::kParseError, "coordinate must be [x, y]");
      coords.push_back({c[0].get<double>(), c[1].get<double>()});
    }
    Instance inst = kind == ProblemKind::kTsp
                        ? Instance::make_tsp(name, std::move(coords))
                        : Instance::make_cvrp(name, std::move(coords),
                                              doc.at("demands").get<std::vector<double>>(),
                                              doc.at("capacity").get<double>());
    if (doc.value("objective", std::string("euclidean")) == "rounded") {
      inst.set_objective_mode(DistanceMode::kRounded);
    }
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("instance JSON: ") + e.what());
  }
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Instance load_instance(const std::string& path) {
  const std::string text = read_file(path);
  if (ends_with(path, ".json")) {
    try {
      return instance_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, path + ": " + e.what());
    }
  }
  return parse_benchmark(text, ends_with(path, ".vrp") ? BenchmarkFormat::kCvrplib
                                                       : BenchmarkFormat::kTsplib);
}

void save_instance(const Instance& instance, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  if (ends_with(path, ".json")) {
    out << instance_to_json(instance).dump() << "\n";
  } else {
    out << to_benchmark(instance);
  }
}

// --- objectives ------------------------------------------------------------

double tour_length(const Instance& instance, const Tour& tour, DistanceMode mode) {
  const int n = instance.size();
  if (static_cast<int>(tour.order.size()) != n) {
    throw Error(ErrorCode::kInvalidTour, "tour length differs from instance size");
  }
  std::vector<char> seen(n, 0);
  for (int v : tour.order) {
    if (v < 0 || v >= n || seen[v]) {
      throw Error(ErrorCode::kInvalidTour, "tour is not a permutation");
    }
    seen[v] = 1;
  }
  return sequence_length(instance, tour.order, mode);
}

RouteCostReport route_cost(const Instance& instance, const RoutePlan& plan, DistanceMode mode) {
  RouteCostReport report;
  const int n = instance.size();
  std::vector<int> visits(n, 0);
  for (std::size_t r = 0; r < plan.routes.size(); ++r) {
    const auto& route = plan.routes[r];
    if (route.empty()) {
      report.violations.push_back({ViolationKind::kEmptyRoute, static_cast<int>(r), 0.0});
      continue;
    }
    double load = 0.0;
    int prev = 0;
    for (int c : route) {
      if (c < 0 || c >= n) {
        report.violations.push_back({ViolationKind::kInvalidIndex, c, 0.0});
        continue;
      }
      if (c == 0) {
        report.violations.push_back({ViolationKind::kDepotInRoute, static_cast<int>(r), 0.0});
        continue;
      }
      ++visits[c];
      load += instance.demands()[c];
      report.cost += instance.distance(prev, c, mode);
      prev = c;
    }
    report.cost += instance.distance(prev, 0, mode);
    if (load > instance.capacity()) {
      report.violations.push_back(
          {ViolationKind::kCapacityOverflow, static_cast<int>(r), load - instance.capacity()});
    }
  }
  for (int c = 1; c < n; ++c) {
    if (visits[c] == 0) report.violations.push_back({ViolationKind::kMissingCustomer, c, 0.0});
    if (visits[c] > 1) {
      report.violations.push_back({ViolationKind::kDuplicateCustomer, c, double(visits[c] - 1)});
    }
  }
  return report;
}

double sequence_length(const Instance& instance, std::span<const int> sequence,
                       DistanceMode mode) {
  if (sequence.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 1; i < sequence.size(); ++i) {
    total += instance.distance(sequence[i - 1], sequence[i], mode);
  }
  total += instance.distance(sequence.back(), sequence.front(), mode);
  return total;
}

RoutePlan routes_from_sequence(std::span<const int> sequence) {
  RoutePlan plan;
  std::vector<int> current;
  for (int v : sequence) {
    if (v == 0) {
      if (!current.empty()) plan.routes.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(v);
    }
  }
  if (!current.empty()) plan.routes.push_back(std::move(current));
  return plan;
}

std::vector<int> sequence_from_routes(const RoutePlan& plan) {
  std::vector<int> seq{0};
  for (const auto& route : plan.routes) {
    seq.insert(seq.end(), route.begin(), route.end());
    seq.push_back(0);
  }
  return seq;
}

void validate_sequence(const Instance& instance, std::span<const int> sequence) {
  if (instance.kind() == ProblemKind::kTsp) {
    try {
      tour_length(instance, Tour{{sequence.begin(), sequence.end()}});
    } catch (const Error& e) {
      throw Error(ErrorCode::kInvalidSolution, e.what());
    }
    return;
  }
  if (sequence.empty() || sequence.front() != 0 || sequence.back() != 0) {
    throw Error(ErrorCode::kInvalidSolution, "CVRP walk must start and end at the depot");
  }
  for (std::size_t i = 1; i < sequence.size(); ++i) {
    if (sequence[i] == 0 && sequence[i - 1] == 0) {
      throw Error(ErrorCode::kInvalidSolution, "consecutive depot visits");
    }
  }
  const auto report = route_cost(instance, routes_from_sequence(sequence));
  if (!report.feasible()) {
    const auto& v = report.violations.front();
    throw Error(ErrorCode::kInvalidSolution,
                std::string(to_string(v.kind)) + " at " + std::to_string(v.subject));
  }
}

double objective(const Instance& instance, std::span<const int> sequence) {
  return sequence_length(instance, sequence, instance.objective_mode());
}

}  // namespace l2r
