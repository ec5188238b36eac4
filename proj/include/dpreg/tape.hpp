#pragma once

// Tape-based reverse-mode differentiation over grid-valued nodes. Forward
// values are computed eagerly through the same kernels as the plain grid
// operations, so recorded values match the non-tape path bit-exactly.
// Backward walks the tape in reverse recording order and accumulates into
// gradient buffers (never overwrites).

#include <functional>
#include <utility>

#include "dpreg/diffeo.hpp"
#include "dpreg/grid.hpp"

namespace dpreg {

// ---------------------------------------------------------------------------
// Tensor: uniform value type for tape nodes
// ---------------------------------------------------------------------------

// A grid-or-scalar value. rank0 marks true scalars (losses). channels == 1
// for scalar grids, == nd for displacement fields, arbitrary for feature maps.
struct Tensor {
  GridShape shape;
  int channels = 1;
  bool rank0 = false;
  std::vector<double> data;

  Tensor() = default;

  static Tensor scalar(double v) {
    Tensor t;
    t.shape = GridShape(1, 1);
    t.rank0 = true;
    t.data = {v};
    return t;
  }
  static Tensor from(const ScalarGrid& g) {
    Tensor t;
    t.shape = g.shape;
    t.channels = 1;
    t.data = g.data;
    return t;
  }
  static Tensor from(const VectorGrid& g) {
    Tensor t;
    t.shape = g.shape;
    t.channels = g.shape.nd;
    t.data = g.data;
    return t;
  }
  static Tensor zeros(const GridShape& s, int channels) {
    Tensor t;
    t.shape = s;
    t.channels = channels;
    t.data.assign(static_cast<std::size_t>(s.voxels()) * channels, 0.0);
    return t;
  }

  std::int64_t voxels() const { return shape.voxels(); }
  std::size_t size() const { return data.size(); }
  double scalar_value() const {
    if (!rank0) throw NonScalarLoss("Tensor: not a scalar");
    return data[0];
  }
  const double* chan(int c) const { return data.data() + static_cast<std::size_t>(c) * voxels(); }
  double* chan(int c) { return data.data() + static_cast<std::size_t>(c) * voxels(); }

  bool same_layout(const Tensor& o) const {
    return rank0 == o.rank0 && channels == o.channels && shape.same_lattice(o.shape);
  }

  ScalarGrid to_scalar_grid() const {
    if (channels != 1 || rank0) throw ShapeError("Tensor: not a scalar grid");
    ScalarGrid g(shape);
    g.data = data;
    return g;
  }
  VectorGrid to_vector_grid() const {
    if (channels != shape.nd || rank0) throw ShapeError("Tensor: not a vector grid");
    VectorGrid g(shape);
    g.data = data;
    return g;
  }
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  Exp,
  Log,
  LeakyRelu,
  Sum,
  Mean,
  Warp,
  Resample,
  MaskMul,
  ComposeRegional,
  Conv2d,
  Upsample2x,
  ConcatChannels,
  NccLoss,
  SoftDiceLoss,
  KlLoss,
};

class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::Leaf;
    Tensor value;
    Tensor grad;  // allocated on first accumulation during backward
    bool grad_allocated = false;
    bool requires_grad = false;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> pull;  // accumulate into input grads
  };

  Var leaf(Tensor t) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(t);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Tensor t) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(t);
    n.requires_grad = false;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  // Extension point used by conv and loss kernels.
  Var make_node(OpKind kind, Tensor value, std::vector<Var> inputs,
                std::function<void(Tape&, int)> pull) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    for (Var v : inputs) {
      check_var(v);
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad_allocated) throw Error("Tape: gradient not computed for node");
    return n.grad;
  }
  bool wants_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Accessors for pull closures defined outside this class (conv, losses).
  const Tensor& node_value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& node_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  const std::vector<int>& node_inputs(int id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }

  // Gradient buffer of node `id`, zero-initialized on first touch.
  Tensor& grad_buffer(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.grad_allocated) {
      n.grad = Tensor::zeros(n.value.shape, n.value.channels);
      n.grad.rank0 = n.value.rank0;
      n.grad_allocated = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // -------------------------------------------------------------------------
  // Elementwise primitives
  // -------------------------------------------------------------------------

  Var add(Var a, Var b) { return binary_ew(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return binary_ew(OpKind::Sub, a, b); }
  Var mul(Var a, Var b) { return binary_ew(OpKind::Mul, a, b); }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (double& x : out.data) x *= c;
    return make_node(OpKind::Scale, std::move(out), {a}, [c](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += c * n.grad.data[i];
    });
  }

  Var exp_(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::exp(x);
    return make_node(OpKind::Exp, std::move(out), {a}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i] * n.value.data[i];
    });
  }

  Var log_(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::log(x);
    return make_node(OpKind::Log, std::move(out), {a}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      const Tensor& xa = t.nodes_[static_cast<std::size_t>(ia)].value;
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += n.grad.data[i] / xa.data[i];
    });
  }

  Var leaky_relu(Var a, double slope = 0.2) {
    Tensor out = value(a);
    for (double& x : out.data) x = x >= 0.0 ? x : slope * x;
    return make_node(OpKind::LeakyRelu, std::move(out), {a}, [slope](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      const Tensor& xa = t.nodes_[static_cast<std::size_t>(ia)].value;
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.data.size(); ++i)
        ga.data[i] += n.grad.data[i] * (xa.data[i] >= 0.0 ? 1.0 : slope);
    });
  }

  // -------------------------------------------------------------------------
  // Reductions
  // -------------------------------------------------------------------------

  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    return make_node(OpKind::Sum, Tensor::scalar(s), {a}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      double g = n.grad.data[0];
      Tensor& ga = t.grad_buffer(ia);
      for (double& x : ga.data) x += g;
    });
  }

  Var mean(Var a) {
    const Tensor& xa = value(a);
    double s = 0.0;
    for (double x : xa.data) s += x;
    double n_inv = 1.0 / static_cast<double>(xa.data.size());
    return make_node(OpKind::Mean, Tensor::scalar(s * n_inv), {a}, [n_inv](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      double g = n.grad.data[0] * n_inv;
      Tensor& ga = t.grad_buffer(ia);
      for (double& x : ga.data) x += g;
    });
  }

  // -------------------------------------------------------------------------
  // Warp: out_c(x) = img_c(x + u(x)), differentiable in img and u
  // -------------------------------------------------------------------------

  Var warp(Var img, Var disp) {
    const Tensor& ti = value(img);
    const Tensor& tu = value(disp);
    if (ti.rank0 || tu.rank0) throw ShapeError("warp: operands must be grids");
    require_same_lattice(ti.shape, tu.shape, "warp");
    if (tu.channels != tu.shape.nd) throw ShapeError("warp: displacement channels != nd");
    VectorGrid u = tu.to_vector_grid();
    Tensor out = Tensor::zeros(ti.shape, ti.channels);
    out.shape = ti.shape;
    detail::warp_channels(ti.data.data(), out.data.data(), ti.shape, ti.channels, u);

    return make_node(OpKind::Warp, std::move(out), {img, disp}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ii = n.inputs[0], iu = n.inputs[1];
      const Tensor& ti = t.nodes_[static_cast<std::size_t>(ii)].value;
      const Tensor& tu = t.nodes_[static_cast<std::size_t>(iu)].value;
      const GridShape& s = ti.shape;
      const std::int64_t nvox = s.voxels();
      const int nx = s.dims[0], ny = s.dims[1];
      const double* ux = tu.chan(0);
      const double* uy = tu.chan(1);
      const double* uz = s.nd == 3 ? tu.chan(2) : nullptr;
      const bool want_img = t.wants_grad(ii);
      const bool want_disp = t.wants_grad(iu);
      Tensor* gi = want_img ? &t.grad_buffer(ii) : nullptr;
      Tensor* gu = want_disp ? &t.grad_buffer(iu) : nullptr;
      for (std::int64_t i = 0; i < nvox; ++i) {
        int x = static_cast<int>(i % nx);
        int y = static_cast<int>((i / nx) % ny);
        int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
        double px = x + ux[i], py = y + uy[i], pz = z + (uz ? uz[i] : 0.0);
        detail::CornerSet cs;
        if (want_img) cs = detail::corner_weights(s, px, py, pz);
        for (int c = 0; c < ti.channels; ++c) {
          double g = n.grad.data[static_cast<std::size_t>(c * nvox + i)];
          if (g == 0.0) continue;
          if (want_img) {
            double* gic = gi->chan(c);
            for (int k = 0; k < cs.n; ++k) gic[cs.idx[k]] += cs.w[k] * g;
          }
          if (want_disp) {
            const double* img_c = ti.chan(c);
            for (int a = 0; a < s.nd; ++a)
              gu->chan(a)[i] += g * detail::interp_channel_deriv(img_c, s, px, py, pz, a);
          }
        }
      }
    });
  }

  // -------------------------------------------------------------------------
  // Resampling (align-corners), differentiable in the input grid
  // -------------------------------------------------------------------------

  Var resample(Var a, const std::array<int, 3>& new_dims) {
    const Tensor& ta = value(a);
    if (ta.rank0) throw ShapeError("resample: operand must be a grid");
    GridShape out_s = detail::resized_shape(ta.shape, new_dims);
    out_s.validate();
    Tensor out = Tensor::zeros(out_s, ta.channels);
    detail::resample_channels(ta.data.data(), ta.shape, out.data.data(), out_s, ta.channels);
    return make_node(OpKind::Resample, std::move(out), {a}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0];
      if (!t.wants_grad(ia)) return;
      const Tensor& ta = t.nodes_[static_cast<std::size_t>(ia)].value;
      const GridShape& in_s = ta.shape;
      const GridShape& out_s = n.value.shape;
      const std::int64_t in_vox = in_s.voxels();
      const std::int64_t out_vox = out_s.voxels();
      Tensor& ga = t.grad_buffer(ia);
      const int nx = out_s.dims[0], ny = out_s.dims[1];
      for (std::int64_t i = 0; i < out_vox; ++i) {
        int x = static_cast<int>(i % nx);
        int y = static_cast<int>((i / nx) % ny);
        int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
        double px = detail::map_coord(x, out_s.dims[0], in_s.dims[0]);
        double py = detail::map_coord(y, out_s.dims[1], in_s.dims[1]);
        double pz = detail::map_coord(z, out_s.dims[2], in_s.dims[2]);
        detail::CornerSet cs = detail::corner_weights(in_s, px, py, pz);
        for (int c = 0; c < ta.channels; ++c) {
          double g = n.grad.data[static_cast<std::size_t>(c * out_vox + i)];
          if (g == 0.0) continue;
          double* gac = ga.data.data() + static_cast<std::size_t>(c) * in_vox;
          for (int k = 0; k < cs.n; ++k) gac[cs.idx[k]] += cs.w[k] * g;
        }
      }
    });
  }

  // -------------------------------------------------------------------------
  // Masked selection
  // -------------------------------------------------------------------------

  // out_c(x) = a_c(x) * mask(x); mask is a one-channel constant broadcast
  // over channels.
  Var mask_mul(Var a, Var mask) {
    const Tensor& ta = value(a);
    const Tensor& tm = value(mask);
    require_same_lattice(ta.shape, tm.shape, "mask_mul");
    if (tm.channels != 1) throw ShapeError("mask_mul: mask must have one channel");
    Tensor out = ta;
    const std::int64_t nvox = ta.voxels();
    for (int c = 0; c < ta.channels; ++c) {
      double* oc = out.chan(c);
      for (std::int64_t i = 0; i < nvox; ++i) oc[i] *= tm.data[static_cast<std::size_t>(i)];
    }
    return make_node(OpKind::MaskMul, std::move(out), {a, mask}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0], im = n.inputs[1];
      if (!t.wants_grad(ia)) return;
      const Tensor& tm = t.nodes_[static_cast<std::size_t>(im)].value;
      Tensor& ga = t.grad_buffer(ia);
      const std::int64_t nvox = tm.voxels();
      for (int c = 0; c < ga.channels; ++c) {
        double* gac = ga.chan(c);
        const double* gc = n.grad.chan(c);
        for (std::int64_t i = 0; i < nvox; ++i) gac[i] += gc[i] * tm.data[static_cast<std::size_t>(i)];
      }
    });
  }

  // Hard selection over regions: out(x) = fields[labels(x)](x). The labels
  // are captured by value (they are not differentiated).
  Var compose_regional(const std::vector<Var>& fields, const LabelGrid& labels) {
    if (fields.empty()) throw EmptyInput("compose_regional: no sub-fields");
    if (static_cast<int>(fields.size()) != labels.region_count)
      throw ShapeError("compose_regional: field count != region_count");
    std::vector<VectorGrid> plain;
    plain.reserve(fields.size());
    for (Var f : fields) plain.push_back(value(f).to_vector_grid());
    VectorGrid composed = compose_regional_fields(plain, labels);
    Tensor out = Tensor::from(composed);
    auto lbl = labels.data;  // shared copy for the closure
    int nd = labels.shape.nd;
    return make_node(OpKind::ComposeRegional, std::move(out), fields,
                     [lbl = std::move(lbl), nd](Tape& t, int self) {
                       const Node& n = t.nodes_[static_cast<std::size_t>(self)];
                       const std::int64_t nvox = n.value.voxels();
                       for (std::int64_t i = 0; i < nvox; ++i) {
                         int r = lbl[static_cast<std::size_t>(i)];
                         int target = n.inputs[static_cast<std::size_t>(r)];
                         if (!t.wants_grad(target)) continue;
                         Tensor& gf = t.grad_buffer(target);
                         for (int c = 0; c < nd; ++c)
                           gf.data[static_cast<std::size_t>(c * nvox + i)] +=
                               n.grad.data[static_cast<std::size_t>(c * nvox + i)];
                       }
                     });
  }

  // -------------------------------------------------------------------------
  // Channel concatenation (for encoder-decoder skip paths and fused heads)
  // -------------------------------------------------------------------------

  Var concat_channels(Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require_same_lattice(ta.shape, tb.shape, "concat_channels");
    Tensor out = Tensor::zeros(ta.shape, ta.channels + tb.channels);
    std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(ta.data.size()));
    return make_node(OpKind::ConcatChannels, std::move(out), {a, b}, [](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0], ib = n.inputs[1];
      std::size_t na = t.nodes_[static_cast<std::size_t>(ia)].value.data.size();
      if (t.wants_grad(ia)) {
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < na; ++i) ga.data[i] += n.grad.data[i];
      }
      if (t.wants_grad(ib)) {
        Tensor& gb = t.grad_buffer(ib);
        for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += n.grad.data[na + i];
      }
    });
  }

  // -------------------------------------------------------------------------
  // Generic record() dispatcher
  // -------------------------------------------------------------------------

  // Ops fully determined by kind + inputs can be recorded via the enum.
  // Parameterized ops (scale, conv, resample, ...) have dedicated builders.
  Var record(OpKind kind, const std::vector<Var>& inputs) {
    auto need = [&](std::size_t n) {
      if (inputs.size() != n) throw ShapeError("record: wrong input count");
    };
    switch (kind) {
      case OpKind::Add: need(2); return add(inputs[0], inputs[1]);
      case OpKind::Sub: need(2); return sub(inputs[0], inputs[1]);
      case OpKind::Mul: need(2); return mul(inputs[0], inputs[1]);
      case OpKind::Exp: need(1); return exp_(inputs[0]);
      case OpKind::Log: need(1); return log_(inputs[0]);
      case OpKind::LeakyRelu: need(1); return leaky_relu(inputs[0]);
      case OpKind::Sum: need(1); return sum(inputs[0]);
      case OpKind::Mean: need(1); return mean(inputs[0]);
      case OpKind::Warp: need(2); return warp(inputs[0], inputs[1]);
      case OpKind::ConcatChannels: need(2); return concat_channels(inputs[0], inputs[1]);
      case OpKind::MaskMul: need(2); return mask_mul(inputs[0], inputs[1]);
      default:
        throw UnsupportedOp("record: op kind requires a dedicated builder");
    }
  }

  // -------------------------------------------------------------------------
  // Backward
  // -------------------------------------------------------------------------

  void backward(Var loss) {
    const Node& ln = node(loss);
    if (!ln.value.rank0) throw NonScalarLoss("backward: loss must be scalar-valued");

    // Restrict the sweep to nodes the loss actually depends on.
    std::vector<char> needed(nodes_.size(), 0);
    needed[static_cast<std::size_t>(loss.id)] = 1;
    for (int i = loss.id; i >= 0; --i) {
      if (!needed[static_cast<std::size_t>(i)]) continue;
      for (int in : nodes_[static_cast<std::size_t>(i)].inputs) needed[static_cast<std::size_t>(in)] = 1;
    }

    grad_buffer(loss.id).data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!needed[static_cast<std::size_t>(i)] || !n.requires_grad) continue;
      if (!n.grad_allocated || !n.pull) continue;
      n.pull(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;

  const Node& node(Var v) const {
    check_var(v);
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  void check_var(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw Error("Tape: invalid node reference");
  }

  Var binary_ew(OpKind kind, Var a, Var b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_layout(tb)) throw ShapeError("elementwise op: layout mismatch");
    Tensor out = ta;
    switch (kind) {
      case OpKind::Add:
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
        break;
      case OpKind::Sub:
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
        break;
      case OpKind::Mul:
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
        break;
      default:
        throw UnsupportedOp("binary_ew: not an elementwise kind");
    }
    return make_node(kind, std::move(out), {a, b}, [kind](Tape& t, int self) {
      const Node& n = t.nodes_[static_cast<std::size_t>(self)];
      int ia = n.inputs[0], ib = n.inputs[1];
      const Tensor& g = n.grad;
      if (t.wants_grad(ia)) {
        Tensor& ga = t.grad_buffer(ia);
        if (kind == OpKind::Mul) {
          const Tensor& tb = t.nodes_[static_cast<std::size_t>(ib)].value;
          for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * tb.data[i];
        } else {
          for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i];
        }
      }
      if (t.wants_grad(ib)) {
        Tensor& gb = t.grad_buffer(ib);
        if (kind == OpKind::Mul) {
          const Tensor& ta = t.nodes_[static_cast<std::size_t>(ia)].value;
          for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i] * ta.data[i];
        } else if (kind == OpKind::Sub) {
          for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= g.data[i];
        } else {
          for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i];
        }
      }
    });
  }
};

// ---------------------------------------------------------------------------
// Differentiable scaling-and-squaring on the tape
// ---------------------------------------------------------------------------

// Same recurrence as the plain integrate_svf, expressed through tape ops so
// gradients flow back to the velocity field.
inline Var integrate_svf_tape(Tape& t, Var v, int K) {
  if (K < 1) throw ConfigError("integrate_svf_tape: K must be >= 1");
  Var u = t.scale(v, std::ldexp(1.0, -K));
  for (int k = 0; k < K; ++k) u = t.add(u, t.warp(u, u));
  return u;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

// build: (Tape&, Var leaf) -> scalar loss Var. Compares backward() against
// central differences; relative error uses max(|analytic|, |numeric|, 1e-8).
template <class BuildFn>
double finite_diff_check(BuildFn&& build, const Tensor& x0, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");
  Tape t;
  Var x = t.leaf(x0);
  Var loss = build(t, x);
  t.backward(loss);
  Tensor analytic = t.grad(x);

  double max_rel = 0.0;
  for (std::size_t i = 0; i < x0.data.size(); ++i) {
    Tensor xp = x0;
    xp.data[i] += eps;
    Tensor xm = x0;
    xm.data[i] -= eps;
    Tape tp;
    double fp = tp.value(build(tp, tp.leaf(std::move(xp)))).scalar_value();
    Tape tm;
    double fm = tm.value(build(tm, tm.leaf(std::move(xm)))).scalar_value();
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic.data[i];
    double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace dpreg
