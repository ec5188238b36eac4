#pragma once

// Registration objective: global NCC dissimilarity, region-wise soft Dice
// with squared denominators, and the graph-Laplacian KL regularizer of the
// probabilistic velocity parameterization. Each loss exists as a plain
// kernel and as a tape op sharing the same forward code.

#include "dpreg/tape.hpp"

namespace dpreg {

struct LossWeights {
  double lambda0 = 20.0;    // NCC weight
  double lambda1 = 200.0;   // Dice weight
  double lambda2 = 0.1;     // KL weight
  double lambda_prior = 10.0;  // precision scale of the smoothness prior

  void validate() const {
    if (lambda0 < 0 || lambda1 < 0 || lambda2 < 0 || lambda_prior < 0)
      throw ConfigError("LossWeights: weights must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// NCC (1 - Pearson correlation over all voxels)
// ---------------------------------------------------------------------------

namespace detail {

struct NccStats {
  double mean_x = 0, mean_y = 0;
  double sxy = 0, sxx = 0, syy = 0;  // centered sums
  double loss = 0;
};

inline NccStats ncc_forward(const double* x, const double* y, std::size_t n) {
  if (n < 2) throw ShapeError("ncc_loss: need at least 2 voxels");
  NccStats st;
  double sx = 0, sy = 0, msx = 0, msy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    msx += x[i] * x[i];
    msy += y[i] * y[i];
  }
  st.mean_x = sx / static_cast<double>(n);
  st.mean_y = sy / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double a = x[i] - st.mean_x, b = y[i] - st.mean_y;
    st.sxy += a * b;
    st.sxx += a * a;
    st.syy += b * b;
  }
  const double tiny = std::numeric_limits<double>::min();
  double nn = static_cast<double>(n);
  if (st.sxx / nn <= 1e-12 * std::max(msx / nn, tiny) ||
      st.syy / nn <= 1e-12 * std::max(msy / nn, tiny))
    throw ZeroVariance("ncc_loss: (near-)constant image");
  st.loss = 1.0 - st.sxy / (std::sqrt(st.sxx) * std::sqrt(st.syy));
  return st;
}

// dL/dx_i = -(b_i - rho * (Sx/Sy-adjusted) a_i) / (Sx*Sy); symmetric in y.
inline void ncc_backward(const double* x, const double* y, std::size_t n, const NccStats& st,
                         double gloss, double* gx, double* gy) {
  double sx = std::sqrt(st.sxx), sy = std::sqrt(st.syy);
  double inv = 1.0 / (sx * sy);
  double cxx = st.sxy / st.sxx;  // rho * sy/sx
  double cyy = st.sxy / st.syy;  // rho * sx/sy
  for (std::size_t i = 0; i < n; ++i) {
    double a = x[i] - st.mean_x, b = y[i] - st.mean_y;
    if (gx) gx[i] += gloss * (-(b - cxx * a) * inv);
    if (gy) gy[i] += gloss * (-(a - cyy * b) * inv);
  }
}

}  // namespace detail

inline double ncc_loss(const ScalarGrid& x, const ScalarGrid& y) {
  require_same_lattice(x.shape, y.shape, "ncc_loss");
  return detail::ncc_forward(x.data.data(), y.data.data(), x.data.size()).loss;
}

inline Var ncc_loss(Tape& t, Var x, Var y) {
  const Tensor& tx = t.value(x);
  const Tensor& ty = t.value(y);
  if (!tx.same_layout(ty) || tx.rank0) throw ShapeError("ncc_loss: layout mismatch");
  auto st = detail::ncc_forward(tx.data.data(), ty.data.data(), tx.data.size());
  return t.make_node(OpKind::NccLoss, Tensor::scalar(st.loss), {x, y}, [st](Tape& tp, int self) {
    const auto& inputs = tp.node_inputs(self);
    int ix = inputs[0], iy = inputs[1];
    const Tensor& tx = tp.node_value(ix);
    const Tensor& ty = tp.node_value(iy);
    double g = tp.node_grad(self).data[0];
    double* gx = tp.wants_grad(ix) ? tp.grad_buffer(ix).data.data() : nullptr;
    double* gy = tp.wants_grad(iy) ? tp.grad_buffer(iy).data.data() : nullptr;
    if (gx || gy) detail::ncc_backward(tx.data.data(), ty.data.data(), tx.data.size(), st, g, gx, gy);
  });
}

// ---------------------------------------------------------------------------
// Soft Dice (squared denominator), mean over classes
// ---------------------------------------------------------------------------

inline constexpr double kDiceEps = 1e-5;

namespace detail {

struct DiceClassStats {
  double num = 0;  // sum p*q
  double den = 0;  // sum p^2 + sum q^2 + eps
};

// p, q: planar class channels over the same lattice. include[k] == 0 skips
// class k (degenerate-region rule); the mean runs over included classes.
inline double dice_forward(const double* p, const double* q, std::int64_t nvox, int classes,
                           const std::vector<char>& include, std::vector<DiceClassStats>* stats) {
  double acc = 0.0;
  int used = 0;
  if (stats) stats->assign(static_cast<std::size_t>(classes), {});
  for (int k = 0; k < classes; ++k) {
    if (!include.empty() && !include[static_cast<std::size_t>(k)]) continue;
    const double* pk = p + static_cast<std::int64_t>(k) * nvox;
    const double* qk = q + static_cast<std::int64_t>(k) * nvox;
    double num = 0, pp = 0, qq = 0;
    for (std::int64_t i = 0; i < nvox; ++i) {
      num += pk[i] * qk[i];
      pp += pk[i] * pk[i];
      qq += qk[i] * qk[i];
    }
    double den = pp + qq + kDiceEps;
    if (stats) (*stats)[static_cast<std::size_t>(k)] = {num, den};
    acc += 1.0 - 2.0 * num / den;
    ++used;
  }
  if (used == 0) throw EmptyInput("soft_dice_loss: no classes included");
  return acc / static_cast<double>(used);
}

}  // namespace detail

inline double soft_dice_loss(const std::vector<ScalarGrid>& warped_probs,
                             const std::vector<ScalarGrid>& target_onehot,
                             const std::vector<char>& include = {}) {
  if (warped_probs.size() != target_onehot.size())
    throw ShapeError("soft_dice_loss: class counts differ");
  if (warped_probs.empty()) throw EmptyInput("soft_dice_loss: no classes");
  const GridShape& s = warped_probs[0].shape;
  std::int64_t nvox = s.voxels();
  std::vector<double> p, q;
  p.reserve(warped_probs.size() * static_cast<std::size_t>(nvox));
  for (const auto& g : warped_probs) {
    require_same_lattice(g.shape, s, "soft_dice_loss");
    p.insert(p.end(), g.data.begin(), g.data.end());
  }
  for (const auto& g : target_onehot) {
    require_same_lattice(g.shape, s, "soft_dice_loss");
    q.insert(q.end(), g.data.begin(), g.data.end());
  }
  return detail::dice_forward(p.data(), q.data(), nvox, static_cast<int>(warped_probs.size()),
                              include, nullptr);
}

// p, q: multi-channel tensors, one channel per class.
inline Var soft_dice_loss(Tape& t, Var p, Var q, std::vector<char> include = {}) {
  const Tensor& tp_ = t.value(p);
  const Tensor& tq_ = t.value(q);
  if (!tp_.same_layout(tq_) || tp_.rank0) throw ShapeError("soft_dice_loss: layout mismatch");
  std::vector<detail::DiceClassStats> stats;
  double loss = detail::dice_forward(tp_.data.data(), tq_.data.data(), tp_.voxels(), tp_.channels,
                                     include, &stats);
  int used = 0;
  if (include.empty())
    used = tp_.channels;
  else
    for (char c : include) used += (c != 0);
  return t.make_node(
      OpKind::SoftDiceLoss, Tensor::scalar(loss), {p, q},
      [stats, include, used](Tape& tp, int self) {
        const auto& inputs = tp.node_inputs(self);
        int ip = inputs[0], iq = inputs[1];
        const Tensor& vp = tp.node_value(ip);
        const Tensor& vq = tp.node_value(iq);
        const std::int64_t nvox = vp.voxels();
        double g = tp.node_grad(self).data[0] / static_cast<double>(used);
        for (int k = 0; k < vp.channels; ++k) {
          if (!include.empty() && !include[static_cast<std::size_t>(k)]) continue;
          const auto& st = stats[static_cast<std::size_t>(k)];
          const double* pk = vp.chan(k);
          const double* qk = vq.chan(k);
          double inv_den = 1.0 / st.den;
          double inv_den2 = inv_den * inv_den;
          if (tp.wants_grad(ip)) {
            double* gp = tp.grad_buffer(ip).chan(k);
            for (std::int64_t i = 0; i < nvox; ++i)
              gp[i] += g * (-2.0 * qk[i] * inv_den + 4.0 * st.num * pk[i] * inv_den2);
          }
          if (tp.wants_grad(iq)) {
            double* gq = tp.grad_buffer(iq).chan(k);
            for (std::int64_t i = 0; i < nvox; ++i)
              gq[i] += g * (-2.0 * pk[i] * inv_den + 4.0 * st.num * qk[i] * inv_den2);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// KL regularizer with graph-Laplacian prior precision lambda_prior * (D - A)
// ---------------------------------------------------------------------------

namespace detail {

// Voxel degree in the 6-neighborhood (4 in 2D) grid graph.
inline int voxel_degree(const GridShape& s, int x, int y, int z) {
  int deg = 0;
  deg += (x > 0) + (x + 1 < s.dims[0]);
  deg += (y > 0) + (y + 1 < s.dims[1]);
  if (s.nd == 3) deg += (z > 0) + (z + 1 < s.dims[2]);
  return deg;
}

// KL up to an additive constant:
//   (1/2N) [ lp * sum_i deg(i) sig2_i + lp * sum_edges (mu_i - mu_j)^2
//            - sum_i log sig2_i ],  N = voxel-component count.
// Gradients (per component):
//   d/dmu_i     = (lp/N) * sum_{j~i} (mu_i - mu_j)
//   d/dlogvar_i = (1/2N) * (lp * deg(i) * sig2_i - 1)
struct KlResult {
  double loss = 0;
};

inline KlResult kl_forward(const GridShape& s, int channels, const double* mu,
                           const double* log_var, double lambda_prior) {
  const std::int64_t nvox = s.voxels();
  const double n_total = static_cast<double>(nvox * channels);
  double sig_term = 0, edge_term = 0, log_term = 0;
  for (int c = 0; c < channels; ++c) {
    const double* mc = mu + c * nvox;
    const double* lc = log_var + c * nvox;
    for (int z = 0; z < s.dims[2]; ++z)
      for (int y = 0; y < s.dims[1]; ++y)
        for (int x = 0; x < s.dims[0]; ++x) {
          std::int64_t i = s.index(x, y, z);
          double sig2 = std::exp(lc[i]);
          sig_term += voxel_degree(s, x, y, z) * sig2;
          log_term += lc[i];
          if (x + 1 < s.dims[0]) {
            double d = mc[i] - mc[s.index(x + 1, y, z)];
            edge_term += d * d;
          }
          if (y + 1 < s.dims[1]) {
            double d = mc[i] - mc[s.index(x, y + 1, z)];
            edge_term += d * d;
          }
          if (s.nd == 3 && z + 1 < s.dims[2]) {
            double d = mc[i] - mc[s.index(x, y, z + 1)];
            edge_term += d * d;
          }
        }
  }
  KlResult r;
  r.loss = (lambda_prior * sig_term + lambda_prior * edge_term - log_term) / (2.0 * n_total);
  return r;
}

inline void kl_backward(const GridShape& s, int channels, const double* mu, const double* log_var,
                        double lambda_prior, double gloss, double* gmu, double* glogvar) {
  const std::int64_t nvox = s.voxels();
  const double n_total = static_cast<double>(nvox * channels);
  const double half = gloss / (2.0 * n_total);
  for (int c = 0; c < channels; ++c) {
    const double* mc = mu + c * nvox;
    const double* lc = log_var + c * nvox;
    double* gm = gmu ? gmu + c * nvox : nullptr;
    double* gl = glogvar ? glogvar + c * nvox : nullptr;
    for (int z = 0; z < s.dims[2]; ++z)
      for (int y = 0; y < s.dims[1]; ++y)
        for (int x = 0; x < s.dims[0]; ++x) {
          std::int64_t i = s.index(x, y, z);
          if (gl) gl[i] += half * (lambda_prior * voxel_degree(s, x, y, z) * std::exp(lc[i]) - 1.0);
          if (gm) {
            double acc = 0;
            if (x > 0) acc += mc[i] - mc[s.index(x - 1, y, z)];
            if (x + 1 < s.dims[0]) acc += mc[i] - mc[s.index(x + 1, y, z)];
            if (y > 0) acc += mc[i] - mc[s.index(x, y - 1, z)];
            if (y + 1 < s.dims[1]) acc += mc[i] - mc[s.index(x, y + 1, z)];
            if (s.nd == 3) {
              if (z > 0) acc += mc[i] - mc[s.index(x, y, z - 1)];
              if (z + 1 < s.dims[2]) acc += mc[i] - mc[s.index(x, y, z + 1)];
            }
            gm[i] += 2.0 * half * lambda_prior * acc;
          }
        }
  }
}

}  // namespace detail

inline double kl_loss(const VectorGrid& mu, const VectorGrid& log_var, double lambda_prior) {
  require_same_lattice(mu.shape, log_var.shape, "kl_loss");
  if (!(lambda_prior > 0)) throw NonPositivePrior("kl_loss: lambda_prior must be positive");
  return detail::kl_forward(mu.shape, mu.components(), mu.data.data(), log_var.data.data(),
                            lambda_prior)
      .loss;
}

inline Var kl_loss(Tape& t, Var mu, Var log_var, double lambda_prior) {
  const Tensor& tm = t.value(mu);
  const Tensor& tl = t.value(log_var);
  if (!tm.same_layout(tl) || tm.rank0) throw ShapeError("kl_loss: layout mismatch");
  if (!(lambda_prior > 0)) throw NonPositivePrior("kl_loss: lambda_prior must be positive");
  auto r = detail::kl_forward(tm.shape, tm.channels, tm.data.data(), tl.data.data(), lambda_prior);
  return t.make_node(OpKind::KlLoss, Tensor::scalar(r.loss), {mu, log_var},
                     [lambda_prior](Tape& tp, int self) {
                       const auto& inputs = tp.node_inputs(self);
                       int im = inputs[0], il = inputs[1];
                       const Tensor& tm = tp.node_value(im);
                       const Tensor& tl = tp.node_value(il);
                       double g = tp.node_grad(self).data[0];
                       double* gm = tp.wants_grad(im) ? tp.grad_buffer(im).data.data() : nullptr;
                       double* gl = tp.wants_grad(il) ? tp.grad_buffer(il).data.data() : nullptr;
                       if (gm || gl)
                         detail::kl_backward(tm.shape, tm.channels, tm.data.data(), tl.data.data(),
                                             lambda_prior, g, gm, gl);
                     });
}

// ---------------------------------------------------------------------------
// Combined regularizer and total loss
// ---------------------------------------------------------------------------

inline double combined_regularizer(const std::vector<double>& per_region_kl) {
  if (per_region_kl.empty()) throw EmptyInput("combined_regularizer: no regions");
  double s = 0;
  for (double v : per_region_kl) s += v;
  return s / static_cast<double>(per_region_kl.size());
}

inline Var combined_regularizer(Tape& t, const std::vector<Var>& per_region_kl) {
  if (per_region_kl.empty()) throw EmptyInput("combined_regularizer: no regions");
  Var acc = per_region_kl[0];
  for (std::size_t i = 1; i < per_region_kl.size(); ++i) acc = t.add(acc, per_region_kl[i]);
  return t.scale(acc, 1.0 / static_cast<double>(per_region_kl.size()));
}

inline double total_loss(double ncc, double dice, double l_r, const LossWeights& w) {
  return w.lambda0 * ncc + w.lambda1 * dice + w.lambda2 * l_r;
}

inline Var total_loss(Tape& t, Var ncc, Var dice, Var l_r, const LossWeights& w) {
  return t.add(t.add(t.scale(ncc, w.lambda0), t.scale(dice, w.lambda1)), t.scale(l_r, w.lambda2));
}

}  // namespace dpreg
