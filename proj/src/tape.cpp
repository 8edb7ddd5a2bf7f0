#include "avvp/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace avvp {

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // aligned to out rank, 0 on broadcast dims
};

BroadcastPlan make_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.resize(rank);
  p.stride_a.assign(rank, 0);
  p.stride_b.assign(rank, 0);
  const auto sa = strides_of(a);
  const auto sb = strides_of(b);
  for (std::size_t d = 0; d < rank; ++d) {
    // right-aligned dims; missing leading dims broadcast
    const bool ha = d >= rank - a.size();
    const bool hb = d >= rank - b.size();
    const std::size_t da = ha ? a[d - (rank - a.size())] : 1;
    const std::size_t db = hb ? b[d - (rank - b.size())] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    p.out[d] = std::max(da, db);
    if (ha && da != 1) p.stride_a[d] = sa[d - (rank - a.size())];
    if (hb && db != 1) p.stride_b[d] = sb[d - (rank - b.size())];
  }
  return p;
}

// Odometer walk over `out`, tracking two strided offsets.
template <class F>
void walk2(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
           F&& fn) {
  const std::size_t rank = out.size();
  const std::size_t n = numel(out);
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, oa, ob);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
    }
  }
}

std::vector<std::size_t> check_axes(const Shape& shape, std::vector<std::size_t> axes, const char* op) {
  if (axes.empty()) throw UsageError(std::string(op) + ": empty axis set");
  std::sort(axes.begin(), axes.end());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= shape.size()) {
      throw UsageError(std::string(op) + ": axis " + std::to_string(axes[i]) +
                       " out of range for shape " + shape_str(shape));
    }
    if (i && axes[i] == axes[i - 1]) throw UsageError(std::string(op) + ": duplicate axis");
  }
  return axes;
}

// Strides mapping each element of `shape` to its group (index over kept dims);
// reduced axes get stride 0.
struct GroupPlan {
  std::vector<std::size_t> stride;  // per input dim
  Shape kept_shape;                 // keepdims=true form (reduced dims -> 1)
  Shape dropped_shape;              // keepdims=false form
  std::size_t groups = 1;
  std::size_t reduced = 1;          // elements per group
};

GroupPlan make_groups(const Shape& shape, const std::vector<std::size_t>& axes) {
  GroupPlan g;
  const std::size_t rank = shape.size();
  std::vector<bool> is_reduced(rank, false);
  for (std::size_t a : axes) is_reduced[a] = true;
  g.stride.assign(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (!is_reduced[d]) {
      g.stride[d] = s;
      s *= shape[d];
    }
  }
  g.groups = s;
  g.kept_shape = shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (is_reduced[d]) {
      g.reduced *= shape[d];
      g.kept_shape[d] = 1;
    } else {
      g.dropped_shape.push_back(shape[d]);
    }
  }
  return g;
}

template <class F>
void walk_groups(const Shape& shape, const GroupPlan& g, F&& fn) {
  walk2(shape, strides_of(shape), g.stride, [&](std::size_t, std::size_t elem, std::size_t grp) {
    fn(elem, grp);
  });
}

}  // namespace

Val Tape::input(Tensor t) {
  t.check_finite("input");
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Val{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Val Tape::param(Tensor& p) {
  p.check_finite("param");
  Node n;
  n.value = p;  // snapshot
  n.bound = &p;
  nodes_.push_back(std::move(n));
  return Val{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double Tape::scalar(Val v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw UsageError("scalar: tensor has shape " + shape_str(t.shape));
  return t.values[0];
}

Val Tape::linear(Val x, Val w, Val b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() != 2 || tw.rank() != 2 || tb.rank() != 1 || tx.shape[1] != tw.shape[0] ||
      tw.shape[1] != tb.shape[0]) {
    throw DimensionError("linear: incompatible shapes x=" + shape_str(tx.shape) +
                         " w=" + shape_str(tw.shape) + " b=" + shape_str(tb.shape));
  }
  const std::size_t N = tx.shape[0], K = tx.shape[1], M = tw.shape[1];
  Tensor out({N, M});
  for (std::size_t i = 0; i < N; ++i) {
    double* o = out.values.data() + i * M;
    for (std::size_t j = 0; j < M; ++j) o[j] = tb.values[j];
    const double* xi = tx.values.data() + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double xv = xi[k];
      const double* wk = tw.values.data() + k * M;
      for (std::size_t j = 0; j < M; ++j) o[j] += xv * wk[j];
    }
  }
  return push(std::move(out), "linear", [x, w, b, N, K, M](Tape& t, Node& n) {
    Node& nx = t.node(x);
    Node& nw = t.node(w);
    Node& nb = t.node(b);
    const double* g = n.adj.data();
    const double* xv = nx.value.values.data();
    const double* wv = nw.value.values.data();
    for (std::size_t i = 0; i < N; ++i) {
      const double* gi = g + i * M;
      double* gx = nx.adj.data() + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double* wk = wv + k * M;
        double acc = 0.0;
        for (std::size_t j = 0; j < M; ++j) acc += gi[j] * wk[j];
        gx[k] += acc;
      }
      const double* xi = xv + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double xk = xi[k];
        double* gw = nw.adj.data() + k * M;
        for (std::size_t j = 0; j < M; ++j) gw[j] += xk * gi[j];
      }
      double* gb = nb.adj.data();
      for (std::size_t j = 0; j < M; ++j) gb[j] += gi[j];
    }
  });
}

Val Tape::matmul(Val a, Val b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool batched = ta.rank() == 3;
  if ((ta.rank() != 2 && ta.rank() != 3) || ta.rank() != tb.rank() ||
      (batched && ta.shape[0] != tb.shape[0]) ||
      ta.shape[batched ? 2 : 1] != tb.shape[batched ? 1 : 0]) {
    throw DimensionError("matmul: incompatible shapes a=" + shape_str(ta.shape) +
                         " b=" + shape_str(tb.shape));
  }
  const std::size_t B = batched ? ta.shape[0] : 1;
  const std::size_t M = ta.shape[batched ? 1 : 0];
  const std::size_t K = ta.shape[batched ? 2 : 1];
  const std::size_t N = tb.shape[batched ? 2 : 1];
  Tensor out(batched ? Shape{B, M, N} : Shape{M, N});
  for (std::size_t bb = 0; bb < B; ++bb) {
    const double* A = ta.values.data() + bb * M * K;
    const double* Bm = tb.values.data() + bb * K * N;
    double* C = out.values.data() + bb * M * N;
    for (std::size_t i = 0; i < M; ++i) {
      double* ci = C + i * N;
      const double* ai = A + i * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double av = ai[k];
        const double* bk = Bm + k * N;
        for (std::size_t j = 0; j < N; ++j) ci[j] += av * bk[j];
      }
    }
  }
  return push(std::move(out), "matmul", [a, b, B, M, K, N](Tape& t, Node& n) {
    Node& na = t.node(a);
    Node& nb = t.node(b);
    for (std::size_t bb = 0; bb < B; ++bb) {
      const double* G = n.adj.data() + bb * M * N;
      const double* A = na.value.values.data() + bb * M * K;
      const double* Bm = nb.value.values.data() + bb * K * N;
      double* gA = na.adj.data() + bb * M * K;
      double* gB = nb.adj.data() + bb * K * N;
      for (std::size_t i = 0; i < M; ++i) {
        const double* gi = G + i * N;
        double* gai = gA + i * K;
        for (std::size_t k = 0; k < K; ++k) {
          const double* bk = Bm + k * N;
          double acc = 0.0;
          for (std::size_t j = 0; j < N; ++j) acc += gi[j] * bk[j];
          gai[k] += acc;
        }
        const double* ai = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
          const double av = ai[k];
          double* gbk = gB + k * N;
          for (std::size_t j = 0; j < N; ++j) gbk[j] += av * gi[j];
        }
      }
    }
  });
}

Val Tape::add(Val a, Val b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  BroadcastPlan p = make_broadcast(ta.shape, tb.shape, "add");
  Tensor out(p.out);
  walk2(p.out, p.stride_a, p.stride_b, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out.values[o] = ta.values[ia] + tb.values[ib];
  });
  return push(std::move(out), "add", [a, b, p](Tape& t, Node& n) {
    Node& na = t.node(a);
    Node& nb = t.node(b);
    walk2(p.out, p.stride_a, p.stride_b, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      na.adj[ia] += n.adj[o];
      nb.adj[ib] += n.adj[o];
    });
  });
}

Val Tape::mul(Val a, Val b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  BroadcastPlan p = make_broadcast(ta.shape, tb.shape, "mul");
  Tensor out(p.out);
  walk2(p.out, p.stride_a, p.stride_b, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    out.values[o] = ta.values[ia] * tb.values[ib];
  });
  return push(std::move(out), "mul", [a, b, p](Tape& t, Node& n) {
    Node& na = t.node(a);
    Node& nb = t.node(b);
    const auto& va = na.value.values;
    const auto& vb = nb.value.values;
    walk2(p.out, p.stride_a, p.stride_b, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      na.adj[ia] += n.adj[o] * vb[ib];
      nb.adj[ib] += n.adj[o] * va[ia];
    });
  });
}

Val Tape::affine(Val x, double scale, double shift) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) out.values[i] = scale * tx.values[i] + shift;
  return push(std::move(out), "affine", [x, scale](Tape& t, Node& n) {
    Node& nx = t.node(x);
    for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += scale * n.adj[i];
  });
}

Val Tape::sigmoid(Val x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) out.values[i] = 1.0 / (1.0 + std::exp(-tx.values[i]));
  return push(std::move(out), "sigmoid", [x](Tape& t, Node& n) {
    Node& nx = t.node(x);
    const double sign = testhooks::flip_sigmoid_backward ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n.adj.size(); ++i) {
      const double s = n.value.values[i];
      nx.adj[i] += sign * s * (1.0 - s) * n.adj[i];
    }
  });
}

Val Tape::tanh(Val x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) out.values[i] = std::tanh(tx.values[i]);
  return push(std::move(out), "tanh", [x](Tape& t, Node& n) {
    Node& nx = t.node(x);
    for (std::size_t i = 0; i < n.adj.size(); ++i) {
      const double y = n.value.values[i];
      nx.adj[i] += (1.0 - y * y) * n.adj[i];
    }
  });
}

Val Tape::relu(Val x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) out.values[i] = tx.values[i] > 0.0 ? tx.values[i] : 0.0;
  return push(std::move(out), "relu", [x](Tape& t, Node& n) {
    Node& nx = t.node(x);
    for (std::size_t i = 0; i < n.adj.size(); ++i) {
      if (nx.value.values[i] > 0.0) nx.adj[i] += n.adj[i];
    }
  });
}

Val Tape::log(Val x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) out.values[i] = std::log(tx.values[i]);
  return push(std::move(out), "log", [x](Tape& t, Node& n) {
    Node& nx = t.node(x);
    for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i] / nx.value.values[i];
  });
}

Val Tape::clamp(Val x, double lo, double hi) {
  if (!(lo < hi)) throw UsageError("clamp: lo must be < hi");
  const Tensor& tx = value(x);
  Tensor out(tx.shape);
  for (std::size_t i = 0; i < tx.size(); ++i) out.values[i] = std::min(std::max(tx.values[i], lo), hi);
  return push(std::move(out), "clamp", [x, lo, hi](Tape& t, Node& n) {
    Node& nx = t.node(x);
    for (std::size_t i = 0; i < n.adj.size(); ++i) {
      const double v = nx.value.values[i];
      if (v >= lo && v <= hi) nx.adj[i] += n.adj[i];
    }
  });
}

Val Tape::softmax(Val x, std::vector<std::size_t> axes) {
  const Tensor& tx = value(x);
  axes = check_axes(tx.shape, std::move(axes), "softmax");
  GroupPlan g = make_groups(tx.shape, axes);
  Tensor out(tx.shape);
  std::vector<double> mx(g.groups, -std::numeric_limits<double>::infinity());
  std::vector<double> z(g.groups, 0.0);
  walk_groups(tx.shape, g, [&](std::size_t i, std::size_t grp) {
    mx[grp] = std::max(mx[grp], tx.values[i]);
  });
  walk_groups(tx.shape, g, [&](std::size_t i, std::size_t grp) {
    out.values[i] = std::exp(tx.values[i] - mx[grp]);
    z[grp] += out.values[i];
  });
  walk_groups(tx.shape, g, [&](std::size_t i, std::size_t grp) { out.values[i] /= z[grp]; });
  return push(std::move(out), "softmax", [x, g](Tape& t, Node& n) {
    Node& nx = t.node(x);
    const Shape& shape = nx.value.shape;
    std::vector<double> dot(g.groups, 0.0);
    walk_groups(shape, g, [&](std::size_t i, std::size_t grp) {
      dot[grp] += n.adj[i] * n.value.values[i];
    });
    walk_groups(shape, g, [&](std::size_t i, std::size_t grp) {
      nx.adj[i] += n.value.values[i] * (n.adj[i] - dot[grp]);
    });
  });
}

Val Tape::concat(const std::vector<Val>& parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no operands");
  const Shape& first = value(parts[0]).shape;
  if (axis >= first.size()) {
    throw UsageError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (Val p : parts) {
    const Shape& s = value(p).shape;
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(first));
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Tensor out(out_shape);
  const std::size_t out_row = out_shape[axis] * inner;
  std::size_t at = 0;
  std::vector<std::size_t> offsets, blocks;  // per part: offset within an outer row, block size
  for (Val p : parts) {
    const Tensor& tp = value(p);
    const std::size_t block = tp.shape[axis] * inner;
    offsets.push_back(at);
    blocks.push_back(block);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(tp.values.data() + o * block, block, out.values.data() + o * out_row + at);
    }
    at += block;
  }
  auto ids = parts;
  return push(std::move(out), "concat", [ids, offsets, blocks, outer, out_row](Tape& t, Node& n) {
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      Node& np = t.node(ids[pi]);
      const std::size_t block = blocks[pi];
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = n.adj.data() + o * out_row + offsets[pi];
        double* dst = np.adj.data() + o * block;
        for (std::size_t i = 0; i < block; ++i) dst[i] += g[i];
      }
    }
  });
}

Val Tape::transpose(Val x, std::vector<std::size_t> perm) {
  const Tensor& tx = value(x);
  const std::size_t rank = tx.rank();
  if (perm.size() != rank) throw UsageError("transpose: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw UsageError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(rank);
  const auto in_strides = strides_of(tx.shape);
  std::vector<std::size_t> map_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = tx.shape[perm[d]];
    map_stride[d] = in_strides[perm[d]];
  }
  Tensor out(out_shape);
  walk2(out_shape, strides_of(out_shape), map_stride, [&](std::size_t, std::size_t o, std::size_t i) {
    out.values[o] = tx.values[i];
  });
  return push(std::move(out), "transpose", [x, out_shape, map_stride](Tape& t, Node& n) {
    Node& nx = t.node(x);
    walk2(out_shape, strides_of(out_shape), map_stride, [&](std::size_t, std::size_t o, std::size_t i) {
      nx.adj[i] += n.adj[o];
    });
  });
}

Val Tape::reshape(Val x, Shape s) {
  const Tensor& tx = value(x);
  if (numel(s) != tx.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(tx.shape) + " as " + shape_str(s));
  }
  Tensor out(std::move(s), tx.values);
  return push(std::move(out), "reshape", [x](Tape& t, Node& n) {
    Node& nx = t.node(x);
    for (std::size_t i = 0; i < n.adj.size(); ++i) nx.adj[i] += n.adj[i];
  });
}

Val Tape::sum(Val x, std::vector<std::size_t> axes, bool keepdims) {
  const Tensor& tx = value(x);
  axes = check_axes(tx.shape, std::move(axes), "sum");
  GroupPlan g = make_groups(tx.shape, axes);
  Tensor out(keepdims ? g.kept_shape : g.dropped_shape);
  walk_groups(tx.shape, g, [&](std::size_t i, std::size_t grp) { out.values[grp] += tx.values[i]; });
  return push(std::move(out), "sum", [x, g](Tape& t, Node& n) {
    Node& nx = t.node(x);
    walk_groups(nx.value.shape, g, [&](std::size_t i, std::size_t grp) { nx.adj[i] += n.adj[grp]; });
  });
}

Val Tape::mean(Val x, std::vector<std::size_t> axes, bool keepdims) {
  const Tensor& tx = value(x);
  axes = check_axes(tx.shape, std::move(axes), "mean");
  GroupPlan g = make_groups(tx.shape, axes);
  const double inv = 1.0 / static_cast<double>(g.reduced);
  Tensor out(keepdims ? g.kept_shape : g.dropped_shape);
  walk_groups(tx.shape, g, [&](std::size_t i, std::size_t grp) {
    out.values[grp] += tx.values[i] * inv;
  });
  return push(std::move(out), "mean", [x, g, inv](Tape& t, Node& n) {
    Node& nx = t.node(x);
    walk_groups(nx.value.shape, g, [&](std::size_t i, std::size_t grp) {
      nx.adj[i] += n.adj[grp] * inv;
    });
  });
}

Val Tape::sum_all(Val x) {
  std::vector<std::size_t> axes(value(x).rank());
  for (std::size_t d = 0; d < axes.size(); ++d) axes[d] = d;
  return sum(x, std::move(axes), false);
}

Val Tape::mean_all(Val x) {
  std::vector<std::size_t> axes(value(x).rank());
  for (std::size_t d = 0; d < axes.size(); ++d) axes[d] = d;
  return mean(x, std::move(axes), false);
}

void Tape::backward(Val loss) {
  Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape));
  }
  for (auto& n : nodes_) n.adj.assign(n.value.size(), 0.0);
  node(loss).adj[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop) n.backprop(*this, n);
    if (n.bound) {
      n.bound->ensure_grad();
      for (std::size_t k = 0; k < n.adj.size(); ++k) {
        if (!std::isfinite(n.adj[k])) throw NumericError("backward produced a non-finite gradient");
        n.bound->grad[k] += n.adj[k];
      }
    }
  }
}

}  // namespace avvp
