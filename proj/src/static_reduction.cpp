#include "l2r/static_reduction.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "l2r/error.hpp"

namespace l2r {

static_assert(std::endian::native == std::endian::little,
              "graph cache I/O assumes a little-endian host");

int keep_count_for(int n, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::kInvalidGamma, "gamma must lie in [0, 1)");
  }
  if (n < 2) return 0;
  // The epsilon absorbs representation error such as 0.9 * 10 = 9.000...02.
  const double raw = (1.0 - gamma) * static_cast<double>(n - 1);
  const int keep = static_cast<int>(std::ceil(raw - 1e-9));
  return std::clamp(keep, 1, n - 1);
}

std::span<const int> SparseGraph::neighbors(int node) const {
  if (list_index_.empty()) throw Error(ErrorCode::kStateError, "neighbor lists not materialized");
  return {list_index_.data() + static_cast<std::size_t>(node) * keep_,
          static_cast<std::size_t>(keep_)};
}

std::span<const double> SparseGraph::neighbor_distances(int node) const {
  if (list_index_.empty()) throw Error(ErrorCode::kStateError, "neighbor lists not materialized");
  return {list_distance_.data() + static_cast<std::size_t>(node) * keep_,
          static_cast<std::size_t>(keep_)};
}

double SparseGraph::cutoff_distance(int node) const { return std::sqrt(cutoff_d2_[node]); }

SparseGraph build_sparse_graph(const Instance& instance, double gamma,
                               const GraphOptions& options) {
  SparseGraph g;
  g.n_ = instance.size();
  g.gamma_ = gamma;
  g.keep_ = keep_count_for(g.n_, gamma);
  g.coords_.assign(instance.unit_coords().begin(), instance.unit_coords().end());
  g.cutoff_d2_.assign(g.n_, 0.0);
  g.cutoff_index_.assign(g.n_, -1);

  const int n = g.n_;
  const int keep = g.keep_;
  const std::size_t entries = static_cast<std::size_t>(n) * keep;
  const bool lists =
      options.lists == GraphOptions::Lists::kAlways ||
      (options.lists == GraphOptions::Lists::kAuto && entries <= options.max_list_entries);
  if (lists) {
    g.list_index_.resize(entries);
    g.list_distance_.resize(entries);
  }

  if (lists) {
#pragma omp parallel
    {
      std::vector<std::pair<double, int>> buf;
      buf.reserve(n);
#pragma omp for schedule(dynamic, 64)
      for (int i = 0; i < n; ++i) {
        buf.clear();
        for (int j = 0; j < n; ++j) {
          if (j != i) buf.emplace_back(g.squared(i, j), j);
        }
        auto kth = buf.begin() + (keep - 1);
        std::nth_element(buf.begin(), kth, buf.end());
        g.cutoff_d2_[i] = kth->first;
        g.cutoff_index_[i] = kth->second;
        std::sort(buf.begin(), kth);
        const std::size_t base = static_cast<std::size_t>(i) * keep;
        for (int r = 0; r < keep; ++r) {
          g.list_index_[base + r] = buf[r].second;
          g.list_distance_[base + r] = std::sqrt(buf[r].first);
        }
      }
    }
    return g;
  }

  // Cutoffs only: bucket the squared distances by value, then resolve the
  // rank inside the one bucket that contains it.
  constexpr int kBins = 1 << 14;
  const double bin_scale = kBins / 2.0;  // unit-square squared distances lie in [0, 2]
#pragma omp parallel
  {
    std::vector<double> d2(n);
    std::vector<int> counts(kBins);
    std::vector<std::pair<double, int>> band;
#pragma omp for schedule(dynamic, 64)
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) d2[j] = g.squared(i, j);
      auto bin = [&](double v) { return std::min(kBins - 1, static_cast<int>(v * bin_scale)); };
      std::fill(counts.begin(), counts.end(), 0);
      for (int j = 0; j < n; ++j) ++counts[bin(d2[j])];
      --counts[bin(d2[i])];
      int target = 0, below = 0;
      while (below + counts[target] < keep) below += counts[target++];
      band.clear();
      for (int j = 0; j < n; ++j)
        if (j != i && bin(d2[j]) == target) band.emplace_back(d2[j], j);
      auto kth = band.begin() + (keep - 1 - below);
      std::nth_element(band.begin(), kth, band.end());
      g.cutoff_d2_[i] = kth->first;
      g.cutoff_index_[i] = kth->second;
    }
  }
  return g;
}

// --- binary cache ----------------------------------------------------------

namespace {

constexpr char kGraphMagic[4] = {'L', '2', 'R', 'G'};
constexpr std::uint8_t kGraphVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_array(std::ofstream& out, const std::vector<T>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::kParseError, "graph cache truncated");
  }
  return v;
}

template <typename T>
void get_array(std::ifstream& in, std::vector<T>& v, std::size_t count) {
  v.resize(count);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(T)))) {
    throw Error(ErrorCode::kParseError, "graph cache truncated");
  }
}

}  // namespace

void SparseGraph::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out.write(kGraphMagic, 4);
  put(out, kGraphVersion);
  put(out, static_cast<std::uint64_t>(n_));
  put(out, gamma_);
  put(out, static_cast<std::uint64_t>(keep_));
  put(out, static_cast<std::uint8_t>(list_index_.empty() ? 0 : 1));
  put_array(out, cutoff_d2_);
  put_array(out, cutoff_index_);
  if (!list_index_.empty()) {
    put_array(out, list_index_);
    put_array(out, list_distance_);
  }
  if (!out) throw Error(ErrorCode::kIoError, "failed writing " + path);
}

SparseGraph SparseGraph::load(const std::string& path, const Instance& instance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kGraphMagic, 4) != 0) {
    throw Error(ErrorCode::kParseError, "not a graph cache (bad magic)");
  }
  if (get<std::uint8_t>(in) != kGraphVersion) {
    throw Error(ErrorCode::kParseError, "unsupported graph cache version");
  }
  SparseGraph g;
  g.n_ = static_cast<int>(get<std::uint64_t>(in));
  g.gamma_ = get<double>(in);
  g.keep_ = static_cast<int>(get<std::uint64_t>(in));
  const bool lists = get<std::uint8_t>(in) != 0;
  if (g.n_ != instance.size()) throw Error(ErrorCode::kParseError, "graph cache size mismatch");
  if (g.keep_ != keep_count_for(g.n_, g.gamma_)) {
    throw Error(ErrorCode::kParseError, "graph cache keep count inconsistent with gamma");
  }
  g.coords_.assign(instance.unit_coords().begin(), instance.unit_coords().end());
  get_array(in, g.cutoff_d2_, g.n_);
  get_array(in, g.cutoff_index_, g.n_);
  if (lists) {
    const std::size_t entries = static_cast<std::size_t>(g.n_) * g.keep_;
    get_array(in, g.list_index_, entries);
    get_array(in, g.list_distance_, entries);
  }
  return g;
}

}  // namespace l2r
