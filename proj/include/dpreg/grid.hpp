#pragma once

// Dense grid types (scalar image, vector field, label map), multilinear
// interpolation with clamp-to-edge boundaries, warping and align-corners
// resampling. Displacements are stored in voxel units; spacing only enters
// distance/volume computations in eval.

#include <cstdint>
#include <cstring>

#include "dpreg/core.hpp"

namespace dpreg {

// ---------------------------------------------------------------------------
// Grid types
// ---------------------------------------------------------------------------

// One real value per voxel, x-fastest layout.
struct ScalarGrid {
  GridShape shape;
  std::vector<double> data;

  ScalarGrid() = default;
  explicit ScalarGrid(const GridShape& s, double fill = 0.0)
      : shape(s), data(static_cast<std::size_t>(s.voxels()), fill) {
    shape.validate();
  }

  double& at(int x, int y, int z = 0) { return data[static_cast<std::size_t>(shape.index(x, y, z))]; }
  double at(int x, int y, int z = 0) const { return data[static_cast<std::size_t>(shape.index(x, y, z))]; }

  void check() const {
    shape.validate();
    if (static_cast<std::int64_t>(data.size()) != shape.voxels())
      throw ShapeError("ScalarGrid: data length != product(dims)");
  }
};

// d real components per voxel, planar layout (component index slowest).
struct VectorGrid {
  GridShape shape;
  std::vector<double> data;

  VectorGrid() = default;
  explicit VectorGrid(const GridShape& s, double fill = 0.0)
      : shape(s), data(static_cast<std::size_t>(s.voxels()) * s.nd, fill) {
    shape.validate();
  }

  int components() const { return shape.nd; }

  double& at(int c, int x, int y, int z = 0) {
    return data[static_cast<std::size_t>(c) * shape.voxels() + shape.index(x, y, z)];
  }
  double at(int c, int x, int y, int z = 0) const {
    return data[static_cast<std::size_t>(c) * shape.voxels() + shape.index(x, y, z)];
  }

  const double* component(int c) const { return data.data() + static_cast<std::size_t>(c) * shape.voxels(); }
  double* component(int c) { return data.data() + static_cast<std::size_t>(c) * shape.voxels(); }

  void check() const {
    shape.validate();
    if (static_cast<std::int64_t>(data.size()) != shape.voxels() * shape.nd)
      throw ShapeError("VectorGrid: data length != d * product(dims)");
  }
};

// One label in 0..region_count-1 per voxel.
struct LabelGrid {
  GridShape shape;
  std::vector<std::uint8_t> data;
  int region_count = 4;

  LabelGrid() = default;
  LabelGrid(const GridShape& s, int regions, std::uint8_t fill = 0)
      : shape(s), data(static_cast<std::size_t>(s.voxels()), fill), region_count(regions) {
    shape.validate();
  }

  std::uint8_t& at(int x, int y, int z = 0) { return data[static_cast<std::size_t>(shape.index(x, y, z))]; }
  std::uint8_t at(int x, int y, int z = 0) const { return data[static_cast<std::size_t>(shape.index(x, y, z))]; }

  void check() const {
    shape.validate();
    if (static_cast<std::int64_t>(data.size()) != shape.voxels())
      throw ShapeError("LabelGrid: data length != product(dims)");
    for (std::uint8_t l : data)
      if (l >= region_count) throw LabelOutOfRange("LabelGrid: label >= region_count");
  }

  std::int64_t count(int label) const {
    std::int64_t n = 0;
    for (std::uint8_t l : data) n += (l == label);
    return n;
  }
};

// ---------------------------------------------------------------------------
// Multilinear interpolation (clamp-to-edge)
// ---------------------------------------------------------------------------

namespace detail {

// Per-axis interpolation setup: clamped base index i0, neighbor i1 and
// fractional weight f such that value = (1-f)*v[i0] + f*v[i1].
struct AxisSample {
  int i0, i1;
  double f;
};

inline AxisSample axis_sample(double p, int n) {
  if (n == 1) return {0, 0, 0.0};
  if (p <= 0.0) return {0, 0, 0.0};
  if (p >= static_cast<double>(n - 1)) return {n - 1, n - 1, 0.0};
  int i0 = static_cast<int>(p);  // p in [0, n-1)
  if (i0 > n - 2) i0 = n - 2;
  return {i0, i0 + 1, p - i0};
}

// Trilinear blend of one channel; 2D grids collapse the z axis exactly.
inline double interp_channel(const double* v, const GridShape& s, double px, double py, double pz) {
  AxisSample ax = axis_sample(px, s.dims[0]);
  AxisSample ay = axis_sample(py, s.dims[1]);
  AxisSample az = axis_sample(pz, s.dims[2]);
  double acc = 0.0;
  for (int cz = 0; cz < 2; ++cz) {
    double wz = cz ? az.f : 1.0 - az.f;
    int z = cz ? az.i1 : az.i0;
    for (int cy = 0; cy < 2; ++cy) {
      double wy = cy ? ay.f : 1.0 - ay.f;
      int y = cy ? ay.i1 : ay.i0;
      for (int cx = 0; cx < 2; ++cx) {
        double wx = cx ? ax.f : 1.0 - ax.f;
        int x = cx ? ax.i1 : ax.i0;
        double w = wx * wy * wz;
        if (w != 0.0) acc += w * v[s.index(x, y, z)];
      }
    }
  }
  return acc;
}

// d/dp of interp_channel along one axis (right-limit at lattice points).
// Returns the finite difference of the two corner blends along `axis`.
inline double interp_channel_deriv(const double* v, const GridShape& s, double px, double py,
                                   double pz, int axis) {
  AxisSample as[3] = {axis_sample(px, s.dims[0]), axis_sample(py, s.dims[1]),
                      axis_sample(pz, s.dims[2])};
  // Clamped side: derivative is zero past the edge.
  double p[3] = {px, py, pz};
  int n = s.dims[axis];
  if (n == 1 || p[axis] <= 0.0 || p[axis] >= static_cast<double>(n - 1)) {
    // At the exact lower edge the right-limit still moves; treat p==0 as interior.
    if (!(p[axis] == 0.0 && n > 1)) return 0.0;
    as[axis] = {0, 1, 0.0};
  }
  if (as[axis].i0 == as[axis].i1) {
    if (as[axis].i1 + 1 <= n - 1)
      as[axis].i1 = as[axis].i0 + 1;
    else
      return 0.0;
  }
  double acc = 0.0;
  for (int c1 = 0; c1 < 2; ++c1) {
    int a1 = (axis + 1) % 3;
    double w1 = c1 ? as[a1].f : 1.0 - as[a1].f;
    if (w1 == 0.0) continue;
    for (int c2 = 0; c2 < 2; ++c2) {
      int a2 = (axis + 2) % 3;
      double w2 = c2 ? as[a2].f : 1.0 - as[a2].f;
      if (w2 == 0.0) continue;
      int idx[3];
      idx[a1] = c1 ? as[a1].i1 : as[a1].i0;
      idx[a2] = c2 ? as[a2].i1 : as[a2].i0;
      idx[axis] = as[axis].i1;
      double hi = v[s.index(idx[0], idx[1], idx[2])];
      idx[axis] = as[axis].i0;
      double lo = v[s.index(idx[0], idx[1], idx[2])];
      acc += w1 * w2 * (hi - lo);
    }
  }
  return acc;
}

// Corner weights for splatting (the transpose of interpolation).
struct CornerSet {
  int idx[8];
  double w[8];
  int n = 0;
};

inline CornerSet corner_weights(const GridShape& s, double px, double py, double pz) {
  AxisSample ax = axis_sample(px, s.dims[0]);
  AxisSample ay = axis_sample(py, s.dims[1]);
  AxisSample az = axis_sample(pz, s.dims[2]);
  CornerSet cs;
  for (int cz = 0; cz < 2; ++cz) {
    double wz = cz ? az.f : 1.0 - az.f;
    int z = cz ? az.i1 : az.i0;
    for (int cy = 0; cy < 2; ++cy) {
      double wy = cy ? ay.f : 1.0 - ay.f;
      int y = cy ? ay.i1 : ay.i0;
      for (int cx = 0; cx < 2; ++cx) {
        double wx = cx ? ax.f : 1.0 - ax.f;
        int x = cx ? ax.i1 : ax.i0;
        double w = wx * wy * wz;
        if (w != 0.0) {
          cs.idx[cs.n] = static_cast<int>(s.index(x, y, z));
          cs.w[cs.n] = w;
          ++cs.n;
        }
      }
    }
  }
  return cs;
}

inline void check_point_finite(double px, double py, double pz) {
  if (!std::isfinite(px) || !std::isfinite(py) || !std::isfinite(pz))
    throw InvalidPoint("interpolate_linear: non-finite coordinates");
}

}  // namespace detail

inline double interpolate_linear(const ScalarGrid& g, const Point& p) {
  detail::check_point_finite(p[0], p[1], p[2]);
  return detail::interp_channel(g.data.data(), g.shape, p[0], p[1], p[2]);
}

inline std::vector<double> interpolate_linear(const VectorGrid& g, const Point& p) {
  detail::check_point_finite(p[0], p[1], p[2]);
  std::vector<double> out(g.components());
  for (int c = 0; c < g.components(); ++c)
    out[c] = detail::interp_channel(g.component(c), g.shape, p[0], p[1], p[2]);
  return out;
}

// ---------------------------------------------------------------------------
// Warping: output(x) = input(x + u(x))
// ---------------------------------------------------------------------------

namespace detail {

// Shared warp kernel over `channels` planar channels of `in`. Displacements
// are validated up front; worker threads must not throw.
inline void warp_channels(const double* in, double* out, const GridShape& s, int channels,
                          const VectorGrid& u) {
  if (!all_finite(u.data)) throw InvalidPoint("warp: non-finite displacement");
  const std::int64_t nvox = s.voxels();
  const double* ux = u.component(0);
  const double* uy = u.component(1);
  const double* uz = u.shape.nd == 3 ? u.component(2) : nullptr;
  const int nx = s.dims[0], ny = s.dims[1];
  parallel_for(nvox, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      int x = static_cast<int>(i % nx);
      int y = static_cast<int>((i / nx) % ny);
      int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      double px = x + ux[i];
      double py = y + uy[i];
      double pz = z + (uz ? uz[i] : 0.0);
      for (int c = 0; c < channels; ++c)
        out[c * nvox + i] = interp_channel(in + c * nvox, s, px, py, pz);
    }
  });
}

}  // namespace detail

inline ScalarGrid warp(const ScalarGrid& img, const VectorGrid& u) {
  require_same_lattice(img.shape, u.shape, "warp");
  ScalarGrid out(img.shape);
  detail::warp_channels(img.data.data(), out.data.data(), img.shape, 1, u);
  return out;
}

inline VectorGrid warp(const VectorGrid& img, const VectorGrid& u) {
  require_same_lattice(img.shape, u.shape, "warp");
  VectorGrid out(img.shape);
  detail::warp_channels(img.data.data(), out.data.data(), img.shape, img.components(), u);
  return out;
}

// Nearest-neighbor label warp (used for evaluation, not training).
inline LabelGrid warp_nearest(const LabelGrid& labels, const VectorGrid& u) {
  require_same_lattice(labels.shape, u.shape, "warp_nearest");
  if (!all_finite(u.data)) throw InvalidPoint("warp_nearest: non-finite displacement");
  LabelGrid out(labels.shape, labels.region_count);
  const GridShape& s = labels.shape;
  const double* ux = u.component(0);
  const double* uy = u.component(1);
  const double* uz = u.shape.nd == 3 ? u.component(2) : nullptr;
  const int nx = s.dims[0], ny = s.dims[1];
  for (std::int64_t i = 0; i < s.voxels(); ++i) {
    int x = static_cast<int>(i % nx);
    int y = static_cast<int>((i / nx) % ny);
    int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
    auto snap = [](double p, int n) {
      int k = static_cast<int>(std::floor(p + 0.5));
      return std::clamp(k, 0, n - 1);
    };
    double px = x + ux[i], py = y + uy[i], pz = z + (uz ? uz[i] : 0.0);
    out.data[static_cast<std::size_t>(i)] =
        labels.data[static_cast<std::size_t>(s.index(snap(px, s.dims[0]), snap(py, s.dims[1]), snap(pz, s.dims[2])))];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resampling (align-corners: out voxel i -> in coordinate i*(in-1)/(out-1))
// ---------------------------------------------------------------------------

namespace detail {

inline double map_coord(int i, int out_n, int in_n) {
  if (out_n <= 1) return 0.0;
  return static_cast<double>(i) * (in_n - 1) / static_cast<double>(out_n - 1);
}

inline void resample_channels(const double* in, const GridShape& in_s, double* out,
                              const GridShape& out_s, int channels) {
  const std::int64_t in_vox = in_s.voxels();
  const std::int64_t out_vox = out_s.voxels();
  const int nx = out_s.dims[0], ny = out_s.dims[1];
  parallel_for(out_vox, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t i = b; i < e; ++i) {
      int x = static_cast<int>(i % nx);
      int y = static_cast<int>((i / nx) % ny);
      int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
      double px = map_coord(x, out_s.dims[0], in_s.dims[0]);
      double py = map_coord(y, out_s.dims[1], in_s.dims[1]);
      double pz = map_coord(z, out_s.dims[2], in_s.dims[2]);
      for (int c = 0; c < channels; ++c)
        out[c * out_vox + i] = interp_channel(in + c * in_vox, in_s, px, py, pz);
    }
  });
}

inline GridShape resized_shape(const GridShape& s, const std::array<int, 3>& new_dims) {
  GridShape out = s;
  out.dims = new_dims;
  if (s.nd == 2) out.dims[2] = 1;
  return out;
}

inline void require_min_dims(const GridShape& s, int min, const char* where) {
  for (int k = 0; k < s.nd; ++k)
    if (s.dims[k] < min) throw ShapeError(std::string(where) + ": dims must be >= " + std::to_string(min));
}

}  // namespace detail

template <class G>
G resample_to(const G& g, const std::array<int, 3>& new_dims) {
  GridShape out_s = detail::resized_shape(g.shape, new_dims);
  out_s.validate();
  G out(out_s);
  int channels = static_cast<int>(g.data.size() / g.shape.voxels());
  detail::resample_channels(g.data.data(), g.shape, out.data.data(), out_s, channels);
  return out;
}

template <class G>
G resample_half(const G& g) {
  detail::require_min_dims(g.shape, 2, "resample_half");
  std::array<int, 3> nd{1, 1, 1};
  for (int k = 0; k < g.shape.nd; ++k) nd[k] = (g.shape.dims[k] + 1) / 2;
  return resample_to(g, nd);
}

template <class G>
G resample_double(const G& g) {
  detail::require_min_dims(g.shape, 2, "resample_double");
  std::array<int, 3> nd{1, 1, 1};
  for (int k = 0; k < g.shape.nd; ++k) nd[k] = 2 * g.shape.dims[k];
  return resample_to(g, nd);
}

// ---------------------------------------------------------------------------
// Small helpers shared by registration and phantom code
// ---------------------------------------------------------------------------

// output_r(x) = img(x) if labels(x) == r else 0, for every region.
inline std::vector<ScalarGrid> split_by_region(const ScalarGrid& img, const LabelGrid& labels) {
  require_same_lattice(img.shape, labels.shape, "split_by_region");
  std::vector<ScalarGrid> out(static_cast<std::size_t>(labels.region_count), ScalarGrid(img.shape));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    std::uint8_t l = labels.data[i];
    if (l >= labels.region_count) throw LabelOutOfRange("split_by_region: label out of range");
    out[l].data[i] = img.data[i];
  }
  return out;
}

// One channel per class, 1.0 where labels(x) == c.
inline std::vector<ScalarGrid> one_hot(const LabelGrid& labels) {
  std::vector<ScalarGrid> out(static_cast<std::size_t>(labels.region_count), ScalarGrid(labels.shape));
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    std::uint8_t l = labels.data[i];
    if (l >= labels.region_count) throw LabelOutOfRange("one_hot: label out of range");
    out[l].data[i] = 1.0;
  }
  return out;
}

}  // namespace dpreg
