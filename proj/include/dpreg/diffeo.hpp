#pragma once

// Diffeomorphic machinery: displacement composition, stationary-velocity-field
// exponentiation by scaling and squaring, Jacobian determinant maps, and the
// regional composition that assembles per-region smooth fields into one
// globally discontinuous field.

#include "dpreg/grid.hpp"

namespace dpreg {

// Per-region sub-fields plus their composition over a label map.
struct DeformationBundle {
  std::vector<VectorGrid> sub_fields;
  VectorGrid composed;
  int region_count = 0;
};

// Displacement of the composed map (outer after inner):
// u(x) = u_inner(x) + u_outer(x + u_inner(x)).
inline VectorGrid compose_displacements(const VectorGrid& u_outer, const VectorGrid& u_inner) {
  require_same_lattice(u_outer.shape, u_inner.shape, "compose_displacements");
  VectorGrid out = warp(u_outer, u_inner);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += u_inner.data[i];
  return out;
}

// Scaling and squaring: u <- v / 2^K, then u <- u o u, K times.
// Sets *large_velocity_warning when max |v| per axis exceeds dims/4.
inline VectorGrid integrate_svf(const VectorGrid& v, int K, bool* large_velocity_warning = nullptr) {
  v.check();
  if (K < 1) throw ConfigError("integrate_svf: K must be >= 1");
  if (large_velocity_warning) {
    bool warn = false;
    for (int c = 0; c < v.components(); ++c) {
      double bound = v.shape.dims[c] / 4.0;
      const double* vc = v.component(c);
      for (std::int64_t i = 0; i < v.shape.voxels(); ++i)
        if (std::abs(vc[i]) > bound) { warn = true; break; }
    }
    *large_velocity_warning = warn;
  }
  VectorGrid u = v;
  const double scale = std::ldexp(1.0, -K);  // exact
  for (double& x : u.data) x *= scale;
  for (int k = 0; k < K; ++k) u = compose_displacements(u, u);
  return u;
}

// det(grad phi) per voxel with phi = id + u; central differences in the
// interior, one-sided at borders, all in voxel units.
inline ScalarGrid jacobian_determinant(const VectorGrid& u) {
  u.check();
  detail::require_min_dims(u.shape, 3, "jacobian_determinant");
  const GridShape& s = u.shape;
  const int nd = s.nd;
  ScalarGrid out(s);

  // d(u_c)/d(axis a) at voxel (x,y,z)
  auto deriv = [&](int c, int a, int x, int y, int z) {
    int p[3] = {x, y, z};
    int lo[3] = {x, y, z}, hi[3] = {x, y, z};
    hi[a] = std::min(p[a] + 1, s.dims[a] - 1);
    lo[a] = std::max(p[a] - 1, 0);
    double denom = static_cast<double>(hi[a] - lo[a]);
    return (u.at(c, hi[0], hi[1], hi[2]) - u.at(c, lo[0], lo[1], lo[2])) / denom;
  };

  for (int z = 0; z < s.dims[2]; ++z)
    for (int y = 0; y < s.dims[1]; ++y)
      for (int x = 0; x < s.dims[0]; ++x) {
        double j[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int c = 0; c < nd; ++c)
          for (int a = 0; a < nd; ++a) j[c][a] = (c == a ? 1.0 : 0.0) + deriv(c, a, x, y, z);
        double det;
        if (nd == 2)
          det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        else
          det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        out.at(x, y, z) = det;
      }
  return out;
}

// Hard per-voxel selection: output(x) = sub_fields[labels(x)](x). Masks are
// disjoint and exhaustive, so the multiply-and-sum form reduces to this.
inline VectorGrid compose_regional_fields(const std::vector<VectorGrid>& sub_fields,
                                          const LabelGrid& labels) {
  if (sub_fields.empty()) throw EmptyInput("compose_regional_fields: no sub-fields");
  if (static_cast<int>(sub_fields.size()) != labels.region_count)
    throw ShapeError("compose_regional_fields: sub-field count != region_count");
  for (const auto& f : sub_fields)
    require_same_lattice(f.shape, labels.shape, "compose_regional_fields");
  VectorGrid out(labels.shape);
  const std::int64_t nvox = labels.shape.voxels();
  const int nd = labels.shape.nd;
  for (std::int64_t i = 0; i < nvox; ++i) {
    std::uint8_t l = labels.data[static_cast<std::size_t>(i)];
    if (l >= labels.region_count) throw LabelOutOfRange("compose_regional_fields: label out of range");
    for (int c = 0; c < nd; ++c) out.data[c * nvox + i] = sub_fields[l].data[c * nvox + i];
  }
  return out;
}

// Neighbor-jump statistics of a field over a label map: ||u_i - u_j|| for
// 6-neighbor (4 in 2D) pairs, split into cross-label and same-label
// populations.
struct InterfaceJump {
  double max_jump = 0.0;             // max over cross-label pairs
  double mean_jump = 0.0;            // mean over cross-label pairs
  double intra_region_max_diff = 0.0;  // max over same-label pairs
  std::int64_t cross_pairs = 0;
  bool has_interface = false;
};

inline InterfaceJump interface_jump(const VectorGrid& u, const LabelGrid& labels) {
  require_same_lattice(u.shape, labels.shape, "interface_jump");
  const GridShape& s = u.shape;
  const std::int64_t nvox = s.voxels();
  InterfaceJump r;
  double cross_sum = 0.0;
  auto visit = [&](std::int64_t i, std::int64_t j) {
    double d2 = 0.0;
    for (int c = 0; c < s.nd; ++c) {
      double d = u.data[c * nvox + i] - u.data[c * nvox + j];
      d2 += d * d;
    }
    double jump = std::sqrt(d2);
    if (labels.data[static_cast<std::size_t>(i)] != labels.data[static_cast<std::size_t>(j)]) {
      r.max_jump = std::max(r.max_jump, jump);
      cross_sum += jump;
      ++r.cross_pairs;
    } else {
      r.intra_region_max_diff = std::max(r.intra_region_max_diff, jump);
    }
  };
  for (int z = 0; z < s.dims[2]; ++z)
    for (int y = 0; y < s.dims[1]; ++y)
      for (int x = 0; x < s.dims[0]; ++x) {
        std::int64_t i = s.index(x, y, z);
        if (x + 1 < s.dims[0]) visit(i, s.index(x + 1, y, z));
        if (y + 1 < s.dims[1]) visit(i, s.index(x, y + 1, z));
        if (s.nd == 3 && z + 1 < s.dims[2]) visit(i, s.index(x, y, z + 1));
      }
  r.has_interface = r.cross_pairs > 0;
  if (r.cross_pairs > 0) r.mean_jump = cross_sum / static_cast<double>(r.cross_pairs);
  return r;
}

}  // namespace dpreg
