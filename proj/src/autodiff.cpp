#include "autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace opdf::ad {

Graph::Node& Graph::node(Var v) {
  require(v.valid() && v.id < nodes_.size(), ErrKind::ExtentMismatch,
          "invalid graph handle");
  return nodes_[v.id];
}

const Graph::Node& Graph::node(Var v) const {
  require(v.valid() && v.id < nodes_.size(), ErrKind::ExtentMismatch,
          "invalid graph handle");
  return nodes_[v.id];
}

Var Graph::emit(Tensor value, bool requires_grad,
                std::function<void(Graph&, std::uint32_t)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::input(Tensor value, bool requires_grad) {
  return emit(std::move(value), requires_grad, nullptr);
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  static const Tensor kEmpty;
  if (!n.grad_alloc) {
    // never reached by backward: report a zero tensor of the right shape
    const_cast<Node&>(n).grad = Tensor(n.value.shape());
    const_cast<Node&>(n).grad_alloc = true;
  }
  (void)kEmpty;
  return n.grad;
}

void Graph::adj_accumulate(std::uint32_t id, Tensor g) {
  if (!adjoint_live_[id]) {
    adjoint_[id] = std::move(g);
    adjoint_live_[id] = 1;
  } else {
    adjoint_[id] = opdf::add(adjoint_[id], g);
  }
}

void Graph::zero_grads() {
  for (Node& n : nodes_) {
    if (n.grad_alloc)
      for (double& v : n.grad.data()) v = 0.0;
  }
}

void Graph::backward(Var loss) {
  Node& root = node(loss);
  require(root.value.order() == 0, ErrKind::NonScalarLoss,
          "backward needs a scalar loss, got shape ",
          shape_str(root.value.shape()));

  adjoint_.assign(nodes_.size(), Tensor());
  adjoint_live_.assign(nodes_.size(), 0);
  adj_accumulate(loss.id, Tensor::scalar(1.0));

  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    if (!adjoint_live_[id]) continue;
    Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.backprop) n.backprop(*this, id);
    if (!n.grad_alloc) {
      n.grad = Tensor(n.value.shape());
      n.grad_alloc = true;
    }
    n.grad = opdf::add(n.grad, adjoint_[id]);
  }

  adjoint_.clear();
  adjoint_live_.clear();
}

// -- primitives -------------------------------------------------------------

Var Graph::add(Var a, Var b) {
  Tensor v = opdf::add(node(a).value, node(b).value);
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::uint32_t pa = a.id, pb = b.id;
  return emit(std::move(v), rg, [pa, pb](Graph& g, std::uint32_t self) {
    if (g.nodes_[pa].requires_grad) g.adj_accumulate(pa, g.adj(self));
    if (g.nodes_[pb].requires_grad) g.adj_accumulate(pb, g.adj(self));
  });
}

Var Graph::sub(Var a, Var b) {
  Tensor v = opdf::sub(node(a).value, node(b).value);
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::uint32_t pa = a.id, pb = b.id;
  return emit(std::move(v), rg, [pa, pb](Graph& g, std::uint32_t self) {
    if (g.nodes_[pa].requires_grad) g.adj_accumulate(pa, g.adj(self));
    if (g.nodes_[pb].requires_grad)
      g.adj_accumulate(pb, opdf::scale(g.adj(self), -1.0));
  });
}

Var Graph::scalar_mul(Var a, double c) {
  Tensor v = opdf::scale(node(a).value, c);
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa, c](Graph& g, std::uint32_t self) {
                if (g.nodes_[pa].requires_grad)
                  g.adj_accumulate(pa, opdf::scale(g.adj(self), c));
              });
}

Var Graph::add_scalar(Var a, double c) {
  require(node(a).value.order() == 0, ErrKind::ExtentMismatch,
          "add_scalar expects a scalar");
  Tensor v = Tensor::scalar(node(a).value[0] + c);
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa](Graph& g, std::uint32_t self) {
                if (g.nodes_[pa].requires_grad) g.adj_accumulate(pa, g.adj(self));
              });
}

Var Graph::add_row(Var a, Var row) {
  const Tensor& m = node(a).value;
  const Tensor& r = node(row).value;
  require(m.order() == 2 && r.order() == 1 && m.extent(1) == r.extent(0),
          ErrKind::ExtentMismatch, "add_row expects [m,n] and [n], got ",
          shape_str(m.shape()), " and ", shape_str(r.shape()));
  Tensor v = m;
  const std::size_t rows = m.extent(0), cols = m.extent(1);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) v[i * cols + j] += r[j];
  const bool rg = node(a).requires_grad || node(row).requires_grad;
  const std::uint32_t pa = a.id, pr = row.id;
  return emit(std::move(v), rg,
              [pa, pr, rows, cols](Graph& g, std::uint32_t self) {
                const Tensor& gr = g.adj(self);
                if (g.nodes_[pa].requires_grad) g.adj_accumulate(pa, gr);
                if (g.nodes_[pr].requires_grad) {
                  Tensor db({cols});
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j)
                      db[j] += gr[i * cols + j];
                  g.adj_accumulate(pr, std::move(db));
                }
              });
}

Var Graph::matmul(Var a, Var b) {
  Tensor v = opdf::matmul(node(a).value, node(b).value);
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::uint32_t pa = a.id, pb = b.id;
  return emit(std::move(v), rg, [pa, pb](Graph& g, std::uint32_t self) {
    const Tensor& gr = g.adj(self);
    if (g.nodes_[pa].requires_grad)
      g.adj_accumulate(pa, opdf::matmul(gr, transpose(g.nodes_[pb].value)));
    if (g.nodes_[pb].requires_grad)
      g.adj_accumulate(pb, opdf::matmul(transpose(g.nodes_[pa].value), gr));
  });
}

Var Graph::relu(Var a) {
  Tensor v = node(a).value;
  for (double& x : v.data()) x = x > 0.0 ? x : 0.0;
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                const Tensor& gr = g.adj(self);
                const Tensor& x = g.nodes_[pa].value;
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < dx.size(); ++i)
                  dx[i] = x[i] > 0.0 ? gr[i] : 0.0;
                g.adj_accumulate(pa, std::move(dx));
              });
}

Var Graph::tanh(Var a) {
  Tensor v = node(a).value;
  for (double& x : v.data()) x = std::tanh(x);
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                const Tensor& gr = g.adj(self);
                const Tensor& y = g.nodes_[self].value;
                Tensor dx(y.shape());
                for (std::size_t i = 0; i < dx.size(); ++i)
                  dx[i] = gr[i] * (1.0 - y[i] * y[i]);
                g.adj_accumulate(pa, std::move(dx));
              });
}

Var Graph::log_softmax(Var a) {
  const Tensor& x = node(a).value;
  require(x.order() == 2, ErrKind::ExtentMismatch,
          "log_softmax expects [rows, classes]");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  Tensor v(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = x[i * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[i * cols + j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < cols; ++j) lse += std::exp(x[i * cols + j] - mx);
    lse = mx + std::log(lse);
    for (std::size_t j = 0; j < cols; ++j) v[i * cols + j] = x[i * cols + j] - lse;
  }
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa, rows, cols](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                const Tensor& gr = g.adj(self);
                const Tensor& y = g.nodes_[self].value;
                Tensor dx(y.shape());
                for (std::size_t i = 0; i < rows; ++i) {
                  double gsum = 0.0;
                  for (std::size_t j = 0; j < cols; ++j) gsum += gr[i * cols + j];
                  for (std::size_t j = 0; j < cols; ++j)
                    dx[i * cols + j] =
                        gr[i * cols + j] - std::exp(y[i * cols + j]) * gsum;
                }
                g.adj_accumulate(pa, std::move(dx));
              });
}

Var Graph::gather_rows(Var a, const std::vector<std::size_t>& cols_pick) {
  const Tensor& x = node(a).value;
  require(x.order() == 2, ErrKind::ExtentMismatch, "gather_rows expects [m,c]");
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  require(cols_pick.size() == rows, ErrKind::ExtentMismatch, "gather_rows got ",
          cols_pick.size(), " indices for ", rows, " rows");
  for (std::size_t i = 0; i < rows; ++i)
    require(cols_pick[i] < cols, ErrKind::LabelOutOfRange, "label ",
            cols_pick[i], " out of range for ", cols, " classes (row ", i, ")");
  Tensor v({rows});
  for (std::size_t i = 0; i < rows; ++i) v[i] = x[i * cols + cols_pick[i]];
  const std::uint32_t pa = a.id;
  auto picks = cols_pick;
  return emit(std::move(v), node(a).requires_grad,
              [pa, picks, rows, cols](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                const Tensor& gr = g.adj(self);
                Tensor dx({rows, cols});
                for (std::size_t i = 0; i < rows; ++i)
                  dx[i * cols + picks[i]] = gr[i];
                g.adj_accumulate(pa, std::move(dx));
              });
}

Var Graph::reshape(Var a, Shape new_shape) {
  Tensor v = opdf::reshape(node(a).value, new_shape);
  const Shape old_shape = node(a).value.shape();
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa, old_shape](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                g.adj_accumulate(pa, opdf::reshape(g.adj(self), old_shape));
              });
}

Var Graph::permute(Var a, std::vector<std::size_t> axes) {
  Tensor v = opdf::permute(node(a).value, axes);
  std::vector<std::size_t> inverse(axes.size());
  for (std::size_t p = 0; p < axes.size(); ++p) inverse[axes[p]] = p;
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa, inverse](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                g.adj_accumulate(pa, opdf::permute(g.adj(self), inverse));
              });
}

namespace {

std::vector<std::size_t> free_axes_of(std::size_t order,
                                      const std::vector<std::size_t>& paired) {
  std::vector<bool> used(order, false);
  for (std::size_t a : paired) used[a] = true;
  std::vector<std::size_t> free;
  for (std::size_t a = 0; a < order; ++a)
    if (!used[a]) free.push_back(a);
  return free;
}

// Permutation sending a tensor whose axes currently correspond to the source
// axis ids in `current` into natural ascending axis order.
std::vector<std::size_t> to_natural_order(const std::vector<std::size_t>& current) {
  std::vector<std::size_t> perm(current.size());
  std::vector<std::pair<std::size_t, std::size_t>> tagged;  // (axis id, pos)
  tagged.reserve(current.size());
  for (std::size_t p = 0; p < current.size(); ++p) tagged.push_back({current[p], p});
  std::sort(tagged.begin(), tagged.end());
  for (std::size_t p = 0; p < tagged.size(); ++p) perm[p] = tagged[p].second;
  return perm;
}

}  // namespace

Var Graph::contract(Var a, Var b, std::vector<std::size_t> axes_a,
                    std::vector<std::size_t> axes_b) {
  Tensor v = opdf::contract(node(a).value, node(b).value, axes_a, axes_b);

  const std::size_t order_a = node(a).value.order();
  const std::size_t order_b = node(b).value.order();
  const auto free_a = free_axes_of(order_a, axes_a);
  const auto free_b = free_axes_of(order_b, axes_b);

  // dA = contract(g, B over B's free axes), whose axes come out as
  // [free_a..., axes_b sorted by position in B]; remap the trailing block to
  // the paired axes of A and permute into A's natural order.
  std::vector<std::size_t> g_axes_for_da(free_b.size());
  for (std::size_t t = 0; t < free_b.size(); ++t)
    g_axes_for_da[t] = free_a.size() + t;
  std::vector<std::size_t> b_sorted = axes_b;
  std::sort(b_sorted.begin(), b_sorted.end());
  std::vector<std::size_t> da_axis_ids(free_a.begin(), free_a.end());
  for (std::size_t bpos : b_sorted) {
    const std::size_t i =
        std::find(axes_b.begin(), axes_b.end(), bpos) - axes_b.begin();
    da_axis_ids.push_back(axes_a[i]);
  }
  const auto da_perm = to_natural_order(da_axis_ids);

  // dB = contract(A over its free axes, g): axes come out as
  // [axes_a sorted by position in A..., free_b...].
  std::vector<std::size_t> g_axes_for_db(free_a.size());
  for (std::size_t t = 0; t < free_a.size(); ++t) g_axes_for_db[t] = t;
  std::vector<std::size_t> a_sorted = axes_a;
  std::sort(a_sorted.begin(), a_sorted.end());
  std::vector<std::size_t> db_axis_ids;
  for (std::size_t apos : a_sorted) {
    const std::size_t i =
        std::find(axes_a.begin(), axes_a.end(), apos) - axes_a.begin();
    db_axis_ids.push_back(axes_b[i]);
  }
  db_axis_ids.insert(db_axis_ids.end(), free_b.begin(), free_b.end());
  const auto db_perm = to_natural_order(db_axis_ids);

  const bool rg = node(a).requires_grad || node(b).requires_grad;
  const std::uint32_t pa = a.id, pb = b.id;
  return emit(
      std::move(v), rg,
      [pa, pb, free_a, free_b, b_sorted, a_sorted, g_axes_for_da, g_axes_for_db,
       da_perm, db_perm](Graph& g, std::uint32_t self) {
        const Tensor& gr = g.adj(self);
        if (g.nodes_[pa].requires_grad) {
          Tensor da =
              opdf::contract(gr, g.nodes_[pb].value, g_axes_for_da, free_b);
          g.adj_accumulate(pa, opdf::permute(da, da_perm));
        }
        if (g.nodes_[pb].requires_grad) {
          Tensor db =
              opdf::contract(g.nodes_[pa].value, gr, free_a, g_axes_for_db);
          g.adj_accumulate(pb, opdf::permute(db, db_perm));
        }
      });
}

Var Graph::square(Var a) {
  Tensor v = node(a).value;
  for (double& x : v.data()) x *= x;
  const std::uint32_t pa = a.id;
  return emit(std::move(v), node(a).requires_grad,
              [pa](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                const Tensor& gr = g.adj(self);
                const Tensor& x = g.nodes_[pa].value;
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < dx.size(); ++i)
                  dx[i] = 2.0 * x[i] * gr[i];
                g.adj_accumulate(pa, std::move(dx));
              });
}

Var Graph::mean_all(Var a) {
  const Tensor& x = node(a).value;
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  const std::uint32_t pa = a.id;
  const Shape xshape = x.shape();
  return emit(Tensor::scalar(s * inv), node(a).requires_grad,
              [pa, inv, xshape](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                const double gs = g.adj(self)[0] * inv;
                g.adj_accumulate(pa, Tensor::full(xshape, gs));
              });
}

Var Graph::weighted_sum(Var a, Tensor weights) {
  const Tensor& x = node(a).value;
  require(x.same_shape(weights), ErrKind::ExtentMismatch,
          "weighted_sum shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights[i];
  const std::uint32_t pa = a.id;
  auto w = std::make_shared<Tensor>(std::move(weights));
  return emit(Tensor::scalar(s), node(a).requires_grad,
              [pa, w](Graph& g, std::uint32_t self) {
                if (!g.nodes_[pa].requires_grad) return;
                g.adj_accumulate(pa, opdf::scale(*w, g.adj(self)[0]));
              });
}

Var Graph::contract_chain(std::span<const Var> cores) {
  require(!cores.empty(), ErrKind::ExtentMismatch, "contract_chain needs cores");
  for (Var c : cores)
    require(node(c).value.order() == 4, ErrKind::BondMismatch,
            "contract_chain expects 4-order cores");
  require(node(cores.front()).value.extent(0) == 1, ErrKind::BondMismatch,
          "leading bond must have extent 1");
  require(node(cores.back()).value.extent(3) == 1, ErrKind::BondMismatch,
          "trailing bond must have extent 1");

  Var acc = cores[0];
  for (std::size_t k = 1; k < cores.size(); ++k) {
    const Tensor& av = node(acc).value;
    const Tensor& cv = node(cores[k]).value;
    require(av.extent(av.order() - 1) == cv.extent(0), ErrKind::BondMismatch,
            "bond extent mismatch between cores ", k, " and ", k + 1);
    acc = contract(acc, cores[k], {av.order() - 1}, {0});
  }
  // acc: (1, i_1, j_1, ..., i_n, j_n, 1)
  const std::size_t n = cores.size();
  const Shape& full = node(acc).value.shape();
  Shape inter(full.begin() + 1, full.end() - 1);
  acc = reshape(acc, inter);
  std::vector<std::size_t> to_blocks(2 * n);
  std::size_t rows = 1, cols = 1;
  for (std::size_t k = 0; k < n; ++k) {
    to_blocks[k] = 2 * k;
    to_blocks[n + k] = 2 * k + 1;
    rows *= inter[2 * k];
    cols *= inter[2 * k + 1];
  }
  acc = permute(acc, to_blocks);
  return reshape(acc, {rows, cols});
}

Var Graph::mse_loss(Var a, Var b) {
  require(node(a).value.same_shape(node(b).value), ErrKind::ExtentMismatch,
          "mse_loss shapes differ: ", shape_str(node(a).value.shape()), " vs ",
          shape_str(node(b).value.shape()));
  return mean_all(square(sub(a, b)));
}

Var Graph::softmax_ce_loss(Var logits, const std::vector<std::size_t>& labels) {
  return scalar_mul(mean_all(gather_rows(log_softmax(logits), labels)), -1.0);
}

Var Graph::kl_distill_loss(Var student_logits, const Tensor& teacher_logits,
                           double temperature) {
  require(temperature > 0.0, ErrKind::NonPositiveTemperature,
          "temperature must be > 0, got ", temperature);
  const Tensor& sv = node(student_logits).value;
  require(sv.same_shape(teacher_logits), ErrKind::ExtentMismatch,
          "student/teacher logit shapes differ");
  require(sv.order() == 2, ErrKind::ExtentMismatch, "logits must be [m,c]");
  const std::size_t rows = sv.extent(0), cols = sv.extent(1);

  // teacher soft targets p and their entropy term sum(p log p), eagerly
  Tensor p({rows, cols});
  double p_logp = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double mx = teacher_logits[i * cols] / temperature;
    for (std::size_t j = 1; j < cols; ++j)
      mx = std::max(mx, teacher_logits[i * cols + j] / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      z += std::exp(teacher_logits[i * cols + j] / temperature - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) {
      const double lp = teacher_logits[i * cols + j] / temperature - log_z;
      p[i * cols + j] = std::exp(lp);
      p_logp += p[i * cols + j] * lp;
    }
  }

  // mean over rows of T^2 * KL(p || softmax(student/T))
  Var student_log_probs =
      log_softmax(scalar_mul(student_logits, 1.0 / temperature));
  Var cross = weighted_sum(student_log_probs, std::move(p));
  const double coeff = temperature * temperature / static_cast<double>(rows);
  return scalar_mul(add_scalar(scalar_mul(cross, -1.0), p_logp), coeff);
}

double grad_check(const GraphBuilder& f, const std::vector<Tensor>& params,
                  double h) {
  // analytic gradients
  Graph g;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(g.input(p, true));
  Var loss = f(g, vars);
  g.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Var v : vars) analytic.push_back(g.grad(v));

  auto eval = [&](const std::vector<Tensor>& pts) {
    Graph gg;
    std::vector<Var> vv;
    for (const Tensor& p : pts) vv.push_back(gg.input(p, false));
    return gg.value(f(gg, vv))[0];
  };

  double worst = 0.0;
  std::vector<Tensor> work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + h;
      const double up = eval(work);
      work[p][i] = orig - h;
      const double dn = eval(work);
      work[p][i] = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double an = analytic[p][i];
      const double denom = std::max({1e-8, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(an - fd) / denom);
    }
  }
  return worst;
}

}  // namespace opdf::ad
