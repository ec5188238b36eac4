#pragma once

// Core shared pieces: error types, grid shape/index math, seeded RNG
// streams and a small static-partition parallel_for. Everything downstream
// (grids, tape, registration) builds on these.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dpreg {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct InvalidPoint : Error {
  explicit InvalidPoint(const std::string& msg) : Error(msg) {}
};
struct LabelOutOfRange : Error {
  explicit LabelOutOfRange(const std::string& msg) : Error(msg) {}
};
struct ZeroVariance : Error {
  explicit ZeroVariance(const std::string& msg) : Error(msg) {}
};
struct NonPositivePrior : Error {
  explicit NonPositivePrior(const std::string& msg) : Error(msg) {}
};
struct EmptyInput : Error {
  explicit EmptyInput(const std::string& msg) : Error(msg) {}
};
struct NonScalarLoss : Error {
  explicit NonScalarLoss(const std::string& msg) : Error(msg) {}
};
struct UnsupportedOp : Error {
  explicit UnsupportedOp(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct EmptyRegion : Error {
  explicit EmptyRegion(const std::string& msg) : Error(msg) {}
};
struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};
struct EmptyDataset : Error {
  explicit EmptyDataset(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Grid shape
// ---------------------------------------------------------------------------

// Dense lattice descriptor for d in {2,3}. Internally every grid is stored
// as a 3D block with dims[2] == 1 for 2D, so the same index/interpolation
// code serves both (the collapsed axis clamps away).
struct GridShape {
  int nd = 2;
  std::array<int, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  GridShape() = default;
  GridShape(int nx, int ny, double sx = 1.0, double sy = 1.0)
      : nd(2), dims{nx, ny, 1}, spacing{sx, sy, 1.0} {}
  GridShape(int nx, int ny, int nz, double sx = 1.0, double sy = 1.0, double sz = 1.0)
      : nd(3), dims{nx, ny, nz}, spacing{sx, sy, sz} {}

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }

  std::int64_t index(int x, int y, int z = 0) const {
    return x + static_cast<std::int64_t>(dims[0]) * (y + static_cast<std::int64_t>(dims[1]) * z);
  }

  bool same_lattice(const GridShape& o) const {
    return nd == o.nd && dims == o.dims;
  }

  void validate() const {
    if (nd != 2 && nd != 3) throw ShapeError("GridShape: nd must be 2 or 3");
    for (int k = 0; k < nd; ++k) {
      if (dims[k] < 1) throw ShapeError("GridShape: non-positive dimension");
      if (!(spacing[k] > 0.0)) throw ShapeError("GridShape: spacing must be positive");
    }
    if (nd == 2 && dims[2] != 1) throw ShapeError("GridShape: 2D grid must have dims[2] == 1");
  }

  bool operator==(const GridShape& o) const {
    return nd == o.nd && dims == o.dims && spacing == o.spacing;
  }
};

inline void require_same_lattice(const GridShape& a, const GridShape& b, const char* where) {
  if (!a.same_lattice(b))
    throw ShapeError(std::string(where) + ": grids do not share dimensions");
}

// Voxel-space point; z component ignored (0) for 2D grids.
using Point = std::array<double, 3>;

// ---------------------------------------------------------------------------
// Seeded RNG
// ---------------------------------------------------------------------------

// splitmix64; used to derive independent per-item seeds from a base seed.
inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------------------
// Thread cap and parallel_for
// ---------------------------------------------------------------------------

namespace detail {
inline std::atomic<int>& thread_cap_storage() {
  static std::atomic<int> cap{0};  // 0 = uninitialized
  return cap;
}
}  // namespace detail

inline int default_thread_count() {
  if (const char* env = std::getenv("DPREG_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

inline void set_thread_count(int n) {
  detail::thread_cap_storage().store(n < 1 ? 1 : n);
}

inline int thread_count() {
  int n = detail::thread_cap_storage().load();
  if (n == 0) {
    n = default_thread_count();
    detail::thread_cap_storage().store(n);
  }
  return n;
}

// Static-partition parallel loop: f(begin, end) over [0, n). Chunk borders
// depend only on n and the thread cap, so results of disjoint-write loops
// are bit-reproducible. Small loops run inline on the caller.
template <class F>
void parallel_for(std::int64_t n, F&& f, std::int64_t min_grain = 4096) {
  int nt = thread_count();
  if (nt <= 1 || n < 2 * min_grain) {
    f(std::int64_t(0), n);
    return;
  }
  std::int64_t chunks = std::min<std::int64_t>(nt, (n + min_grain - 1) / min_grain);
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(chunks - 1));
  std::int64_t base = n / chunks, rem = n % chunks, begin = 0;
  for (std::int64_t c = 0; c < chunks; ++c) {
    std::int64_t len = base + (c < rem ? 1 : 0);
    std::int64_t end = begin + len;
    if (c + 1 == chunks) {
      f(begin, end);
    } else {
      workers.emplace_back([&f, begin, end] { f(begin, end); });
    }
    begin = end;
  }
  for (auto& w : workers) w.join();
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace dpreg
