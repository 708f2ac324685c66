#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace l2r {

enum class ProblemKind { kTsp, kCvrp };
enum class ClusterPattern { kCluster, kExplosion, kImplosion };
enum class BenchmarkFormat { kTsplib, kCvrplib };

// kRounded applies TSPLIB nint() edge weights to problem-unit coordinates.
enum class DistanceMode { kEuclidean, kRounded };

const char* to_string(ProblemKind kind);
ProblemKind parse_problem_kind(std::string_view text);
const char* to_string(ClusterPattern pattern);
ClusterPattern parse_cluster_pattern(std::string_view text);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct BoundingBox {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;
};

// An immutable TSP or CVRP instance. Coordinates, demands and capacity are
// kept in problem units for reporting; the model-facing view maps the
// bounding box onto the unit square (aspect preserved) and divides demands
// by capacity so the vehicle capacity is 1.0.
//
// CVRP instances put the depot at index 0 with demand 0.
class Instance {
 public:
  static Instance make_tsp(std::string name, std::vector<Point> coords);
  static Instance make_cvrp(std::string name, std::vector<Point> coords,
                            std::vector<double> demands, double capacity);

  ProblemKind kind() const { return kind_; }
  bool is_cvrp() const { return kind_ == ProblemKind::kCvrp; }
  const std::string& name() const { return name_; }
  int size() const { return static_cast<int>(coords_.size()); }

  std::span<const Point> coords() const { return coords_; }
  std::span<const double> demands() const { return demands_; }
  double capacity() const { return capacity_; }

  std::span<const Point> unit_coords() const { return unit_coords_; }
  std::span<const double> unit_demands() const { return unit_demands_; }
  const BoundingBox& bounding_box() const { return bbox_; }
  // Multiplier from problem units to unit-square units.
  double unit_scale() const { return unit_scale_; }

  DistanceMode objective_mode() const { return objective_mode_; }
  void set_objective_mode(DistanceMode mode) { objective_mode_ = mode; }

  double distance(int i, int j, DistanceMode mode = DistanceMode::kEuclidean) const;
  double unit_distance(int i, int j) const;

 private:
  Instance() = default;
  void finalize();

  ProblemKind kind_ = ProblemKind::kTsp;
  std::string name_;
  std::vector<Point> coords_;
  std::vector<double> demands_;
  double capacity_ = 0.0;
  std::vector<Point> unit_coords_;
  std::vector<double> unit_demands_;
  BoundingBox bbox_;
  double unit_scale_ = 1.0;
  DistanceMode objective_mode_ = DistanceMode::kEuclidean;
};

struct Tour {
  std::vector<int> order;
};

// Customer indices per route; the depot is implicit at both ends.
struct RoutePlan {
  std::vector<std::vector<int>> routes;
};

enum class ViolationKind {
  kInvalidIndex,
  kDepotInRoute,
  kDuplicateCustomer,
  kMissingCustomer,
  kCapacityOverflow,
  kEmptyRoute,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  int subject = -1;  // customer index, or route index for capacity/empty
  double amount = 0.0;
};

struct RouteCostReport {
  double cost = 0.0;
  std::vector<Violation> violations;
  bool feasible() const { return violations.empty(); }
};

// --- generation ------------------------------------------------------------

// For CVRP `n` counts customers; the instance has n + 1 nodes.
Instance generate_uniform(ProblemKind kind, int n, std::optional<double> capacity,
                          std::uint64_t seed);
Instance generate_clustered(ProblemKind kind, int n, ClusterPattern pattern,
                            std::uint64_t seed, double capacity = 50.0);
Instance generate_clustered(ProblemKind kind, int n, std::string_view pattern,
                            std::uint64_t seed, double capacity = 50.0);

// Generator constants; the explosion/implosion disk is centered inside
// [kDiskRadius, 1 - kDiskRadius]^2.
inline constexpr double kClusterSigma = 0.07;
inline constexpr double kDiskRadius = 0.3;
inline constexpr double kImplosionFactor = 0.5;

// --- benchmark files -------------------------------------------------------

Instance parse_benchmark(std::string_view text, BenchmarkFormat format);
std::string to_benchmark(const Instance& instance);

nlohmann::json instance_to_json(const Instance& instance);
Instance instance_from_json(const nlohmann::json& doc);

// Dispatches on extension: .json native, .vrp CVRPLIB, anything else TSPLIB.
Instance load_instance(const std::string& path);
void save_instance(const Instance& instance, const std::string& path);

// --- objectives ------------------------------------------------------------

double tour_length(const Instance& instance, const Tour& tour,
                   DistanceMode mode = DistanceMode::kEuclidean);
RouteCostReport route_cost(const Instance& instance, const RoutePlan& plan,
                           DistanceMode mode = DistanceMode::kEuclidean);

// A "sequence" is the flat visit order produced by construction: a TSP
// permutation, or for CVRP a walk [0, c.., 0, c.., 0] starting and ending at
// the depot. Both are scored as a closed walk.
double sequence_length(const Instance& instance, std::span<const int> sequence,
                       DistanceMode mode = DistanceMode::kEuclidean);
RoutePlan routes_from_sequence(std::span<const int> sequence);
std::vector<int> sequence_from_routes(const RoutePlan& plan);

// Throws kInvalidSolution unless `sequence` is a complete feasible solution.
void validate_sequence(const Instance& instance, std::span<const int> sequence);
double objective(const Instance& instance, std::span<const int> sequence);

}  // namespace l2r
