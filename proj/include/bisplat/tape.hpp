#pragma once
// Reverse-mode value graph over dense 2-D tensors.
//
// Ops evaluate eagerly and record a backward closure. Nodes are referenced by
// index; the node vector is topologically ordered by construction, so
// backward() is a single reverse sweep. One backward per tape.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>

#include "bisplat/tensor.hpp"

namespace bisplat {

template <class T>
class Tape {
 public:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<T> val;
    std::vector<T> grad;  // allocated by backward() for nodes that need it
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;  // empty for leaves and constants
  };

  std::vector<Node> nodes;

  int leaf(const Tensor<T>& t) { return push(t.rows, t.cols, t.v, true); }
  int constant(const Tensor<T>& t) { return push(t.rows, t.cols, t.v, false); }
  int constant(int rows, int cols, std::vector<T> data) { return push(rows, cols, std::move(data), false); }

  int rows(int id) const { return nodes[id].rows; }
  int cols(int id) const { return nodes[id].cols; }
  const std::vector<T>& val(int id) const { return nodes[id].val; }
  const std::vector<T>& grad(int id) const {
    if (nodes[id].grad.empty()) fail("tape: gradient not populated for this node");
    return nodes[id].grad;
  }

  // --- elementwise binary ---

  int add(int a, int b) {
    return ew2(a, b, [](T x, T y) { return x + y; },
               [](Tape& tp, int a, int b, const Node& n) {
                 tp.axpy(a, T(1), n.grad);
                 tp.axpy(b, T(1), n.grad);
               });
  }

  int sub(int a, int b) {
    return ew2(a, b, [](T x, T y) { return x - y; },
               [](Tape& tp, int a, int b, const Node& n) {
                 tp.axpy(a, T(1), n.grad);
                 tp.axpy(b, T(-1), n.grad);
               });
  }

  int mul(int a, int b) {
    return ew2(a, b, [](T x, T y) { return x * y; },
               [](Tape& tp, int a, int b, const Node& n) {
                 if (T* ga = tp.gptr(a)) {
                   const auto& bv = tp.nodes[b].val;
                   for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * bv[i];
                 }
                 if (T* gb = tp.gptr(b)) {
                   const auto& av = tp.nodes[a].val;
                   for (size_t i = 0; i < n.grad.size(); ++i) gb[i] += n.grad[i] * av[i];
                 }
               });
  }

  int div(int a, int b) {
    return ew2(a, b, [](T x, T y) { return x / y; },
               [](Tape& tp, int a, int b, const Node& n) {
                 const auto& bv = tp.nodes[b].val;
                 if (T* ga = tp.gptr(a)) {
                   for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] / bv[i];
                 }
                 if (T* gb = tp.gptr(b)) {
                   for (size_t i = 0; i < n.grad.size(); ++i) gb[i] -= n.grad[i] * n.val[i] / bv[i];
                 }
               });
  }

  // --- row-vector broadcasts ---

  int add_row(int a, int b) {
    check_row(a, b, "add_row");
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    std::vector<T> out(na.val.size());
    for (int i = 0; i < na.rows; ++i)
      for (int j = 0; j < na.cols; ++j)
        out[size_t(i) * na.cols + j] = na.val[size_t(i) * na.cols + j] + nb.val[j];
    int id = push(na.rows, na.cols, std::move(out), na.needs_grad || nb.needs_grad);
    set_back(id, {a, b}, [a, b](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      tp.axpy(a, T(1), n.grad);
      if (T* gb = tp.gptr(b)) {
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j) gb[j] += n.grad[size_t(i) * n.cols + j];
      }
    });
    return id;
  }

  int mul_row(int a, int b) {
    check_row(a, b, "mul_row");
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    std::vector<T> out(na.val.size());
    for (int i = 0; i < na.rows; ++i)
      for (int j = 0; j < na.cols; ++j)
        out[size_t(i) * na.cols + j] = na.val[size_t(i) * na.cols + j] * nb.val[j];
    int id = push(na.rows, na.cols, std::move(out), na.needs_grad || nb.needs_grad);
    set_back(id, {a, b}, [a, b](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      const auto& av = tp.nodes[a].val;
      const auto& bv = tp.nodes[b].val;
      if (T* ga = tp.gptr(a)) {
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            ga[size_t(i) * n.cols + j] += n.grad[size_t(i) * n.cols + j] * bv[j];
      }
      if (T* gb = tp.gptr(b)) {
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            gb[j] += n.grad[size_t(i) * n.cols + j] * av[size_t(i) * n.cols + j];
      }
    });
    return id;
  }

  // y = scale*x + shift, elementwise with scalar constants
  int affine(int a, T scale, T shift) {
    const Node& na = nodes[a];
    std::vector<T> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = scale * na.val[i] + shift;
    int id = push(na.rows, na.cols, std::move(out), na.needs_grad);
    set_back(id, {a}, [a, scale](Tape& tp, int self) {
      tp.axpy(a, scale, tp.nodes[self].grad);
    });
    return id;
  }

  // --- elementwise unary ---

  int relu(int a) {
    return ew1(a, [](T x) { return x > T(0) ? x : T(0); },
               [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }
  int abs_(int a) {
    return ew1(a, [](T x) { return std::abs(x); },
               [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
  }
  int sin_(int a) {
    return ew1(a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
  }
  int cos_(int a) {
    return ew1(a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
  }
  int tanh_(int a) {
    return ew1(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
  }
  int exp_(int a) {
    return ew1(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
  }
  int logistic(int a) {
    return ew1(a, [](T x) { return sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
  }
  int softplus(int a) {
    return ew1(a, [](T x) { return x > T(30) ? x : std::log1p(std::exp(x)); },
               [](T x, T) { return sigmoid(x); });
  }

  // --- matmul ---

  int matmul(int a, int b) {
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    if (na.cols != nb.rows)
      fail(strf("matmul: shape (%d,%d) vs (%d,%d)", na.rows, na.cols, nb.rows, nb.cols));
    const int n = na.rows, k = na.cols, m = nb.cols;
    std::vector<T> out(size_t(n) * m);
    mm_nn(na.val.data(), nb.val.data(), out.data(), n, k, m, false);
    int id = push(n, m, std::move(out), na.needs_grad || nb.needs_grad);
    set_back(id, {a, b}, [a, b, n, k, m](Tape& tp, int self) {
      const T* g = tp.nodes[self].grad.data();
      if (T* ga = tp.gptr(a)) mm_nt(g, tp.nodes[b].val.data(), ga, n, m, k, true);
      if (T* gb = tp.gptr(b)) mm_tn(tp.nodes[a].val.data(), g, gb, n, k, m, true);
    });
    return id;
  }

  // A * B^T with A n×k, B m×k -> n×m
  int matmul_nt(int a, int b) {
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    if (na.cols != nb.cols)
      fail(strf("matmul_nt: shape (%d,%d) vs (%d,%d)", na.rows, na.cols, nb.rows, nb.cols));
    const int n = na.rows, k = na.cols, m = nb.rows;
    std::vector<T> out(size_t(n) * m);
    mm_nt(na.val.data(), nb.val.data(), out.data(), n, k, m, false);
    int id = push(n, m, std::move(out), na.needs_grad || nb.needs_grad);
    set_back(id, {a, b}, [a, b, n, k, m](Tape& tp, int self) {
      const T* g = tp.nodes[self].grad.data();
      if (T* ga = tp.gptr(a)) mm_nn(g, tp.nodes[b].val.data(), ga, n, m, k, true);
      if (T* gb = tp.gptr(b)) mm_tn(g, tp.nodes[a].val.data(), gb, n, m, k, true);
    });
    return id;
  }

  // --- row-wise normalizations ---

  int layer_norm(int a, T eps = T(1e-5)) {
    const Node& na = nodes[a];
    const int R = na.rows, C = na.cols;
    std::vector<T> out(na.val.size());
    std::vector<T> inv_sd(R);
    for (int i = 0; i < R; ++i) {
      const T* x = &na.val[size_t(i) * C];
      T m = T(0);
      for (int j = 0; j < C; ++j) m += x[j];
      m /= T(C);
      T var = T(0);
      for (int j = 0; j < C; ++j) var += (x[j] - m) * (x[j] - m);
      var /= T(C);
      const T inv = T(1) / std::sqrt(var + eps);
      inv_sd[i] = inv;
      for (int j = 0; j < C; ++j) out[size_t(i) * C + j] = (x[j] - m) * inv;
    }
    int id = push(R, C, std::move(out), na.needs_grad);
    set_back(id, {a}, [a, inv_sd = std::move(inv_sd)](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      T* ga = tp.gptr(a);
      if (!ga) return;
      const int C = n.cols;
      for (int i = 0; i < n.rows; ++i) {
        const T* y = &n.val[size_t(i) * C];
        const T* g = &n.grad[size_t(i) * C];
        T mg = T(0), mgy = T(0);
        for (int j = 0; j < C; ++j) {
          mg += g[j];
          mgy += g[j] * y[j];
        }
        mg /= T(C);
        mgy /= T(C);
        for (int j = 0; j < C; ++j)
          ga[size_t(i) * C + j] += inv_sd[i] * (g[j] - mg - y[j] * mgy);
      }
    });
    return id;
  }

  int softmax_rows(int a) {
    const Node& na = nodes[a];
    const int R = na.rows, C = na.cols;
    std::vector<T> out(na.val.size());
    for (int i = 0; i < R; ++i) {
      const T* x = &na.val[size_t(i) * C];
      T* y = &out[size_t(i) * C];
      T mx = x[0];
      for (int j = 1; j < C; ++j) mx = std::max(mx, x[j]);
      T s = T(0);
      for (int j = 0; j < C; ++j) {
        y[j] = std::exp(x[j] - mx);
        s += y[j];
      }
      for (int j = 0; j < C; ++j) y[j] /= s;
    }
    int id = push(R, C, std::move(out), na.needs_grad);
    set_back(id, {a}, [a](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      T* ga = tp.gptr(a);
      if (!ga) return;
      const int C = n.cols;
      for (int i = 0; i < n.rows; ++i) {
        const T* y = &n.val[size_t(i) * C];
        const T* g = &n.grad[size_t(i) * C];
        T dot = T(0);
        for (int j = 0; j < C; ++j) dot += g[j] * y[j];
        for (int j = 0; j < C; ++j) ga[size_t(i) * C + j] += y[j] * (g[j] - dot);
      }
    });
    return id;
  }

  // --- structure ---

  int concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) fail("concat_cols: no inputs");
    const int R = nodes[parts[0]].rows;
    int W = 0;
    bool ng = false;
    for (int p : parts) {
      if (nodes[p].rows != R)
        fail(strf("concat_cols: shape (%d,%d) vs (%d,%d)", R, nodes[parts[0]].cols,
                  nodes[p].rows, nodes[p].cols));
      W += nodes[p].cols;
      ng = ng || nodes[p].needs_grad;
    }
    std::vector<T> out(size_t(R) * W);
    int off = 0;
    for (int p : parts) {
      const Node& np = nodes[p];
      for (int i = 0; i < R; ++i)
        std::copy(&np.val[size_t(i) * np.cols], &np.val[size_t(i) * np.cols] + np.cols,
                  &out[size_t(i) * W + off]);
      off += np.cols;
    }
    int id = push(R, W, std::move(out), ng);
    set_back(id, parts, [parts](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      int off = 0;
      for (int p : parts) {
        Node& np = tp.nodes[p];
        if (T* gp = tp.gptr(p)) {
          for (int i = 0; i < n.rows; ++i)
            for (int j = 0; j < np.cols; ++j)
              gp[size_t(i) * np.cols + j] += n.grad[size_t(i) * n.cols + off + j];
        }
        off += np.cols;
      }
    });
    return id;
  }

  int slice_cols(int a, int c0, int c1) {
    const Node& na = nodes[a];
    if (c0 < 0 || c1 > na.cols || c0 >= c1)
      fail(strf("slice_cols: range [%d,%d) outside width %d", c0, c1, na.cols));
    const int R = na.rows, W = c1 - c0;
    std::vector<T> out(size_t(R) * W);
    for (int i = 0; i < R; ++i)
      std::copy(&na.val[size_t(i) * na.cols + c0], &na.val[size_t(i) * na.cols + c1],
                &out[size_t(i) * W]);
    int id = push(R, W, std::move(out), na.needs_grad);
    set_back(id, {a}, [a, c0](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      if (T* ga = tp.gptr(a)) {
        const int pc = tp.nodes[a].cols;
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j)
            ga[size_t(i) * pc + c0 + j] += n.grad[size_t(i) * n.cols + j];
      }
    });
    return id;
  }

  int repeat_rows(int a, int n_rows) {
    const Node& na = nodes[a];
    if (na.rows != 1) fail(strf("repeat_rows: input must be a row vector, got (%d,%d)", na.rows, na.cols));
    std::vector<T> out(size_t(n_rows) * na.cols);
    for (int i = 0; i < n_rows; ++i)
      std::copy(na.val.begin(), na.val.end(), &out[size_t(i) * na.cols]);
    int id = push(n_rows, na.cols, std::move(out), na.needs_grad);
    set_back(id, {a}, [a](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      if (T* ga = tp.gptr(a)) {
        for (int i = 0; i < n.rows; ++i)
          for (int j = 0; j < n.cols; ++j) ga[j] += n.grad[size_t(i) * n.cols + j];
      }
    });
    return id;
  }

  int reshape(int a, int r, int c) {
    const Node& na = nodes[a];
    if (size_t(r) * size_t(c) != na.val.size())
      fail(strf("reshape: (%d,%d) -> (%d,%d) changes element count", na.rows, na.cols, r, c));
    int id = push(r, c, na.val, na.needs_grad);
    set_back(id, {a}, [a](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      if (T* ga = tp.gptr(a)) {
        for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
      }
    });
    return id;
  }

  int reduce_sum(int a) {
    const Node& na = nodes[a];
    T s = T(0);
    for (T x : na.val) s += x;
    int id = push(1, 1, {s}, na.needs_grad);
    set_back(id, {a}, [a](Tape& tp, int self) {
      const T g = tp.nodes[self].grad[0];
      if (T* ga = tp.gptr(a)) {
        for (size_t i = 0; i < tp.nodes[a].val.size(); ++i) ga[i] += g;
      }
    });
    return id;
  }

  int reduce_mean(int a) {
    const T inv = T(1) / T(nodes[a].val.size());
    return affine(reduce_sum(a), inv, T(0));
  }

  // Custom op: caller supplies the computed value and a backward closure that
  // reads this node's grad and accumulates into the parents' grads.
  int custom(int rows, int cols, std::vector<T> value, const std::vector<int>& parents,
             std::function<void(Tape&, int)> back_fn) {
    bool ng = false;
    for (int p : parents) ng = ng || nodes[p].needs_grad;
    int id = push(rows, cols, std::move(value), ng);
    if (ng) nodes[id].back = std::move(back_fn);
    return id;
  }

  void backward(int root) {
    if (backward_done_) fail("tape: backward called twice without reset");
    Node& r = nodes[root];
    if (r.rows != 1 || r.cols != 1)
      fail(strf("tape: backward root must be scalar, got (%d,%d)", r.rows, r.cols));
    if (!r.needs_grad) fail("tape: backward root does not depend on any leaf");
    for (auto& n : nodes)
      if (n.needs_grad) n.grad.assign(n.val.size(), T(0));
    r.grad[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes[i];
      if (n.back && n.needs_grad) n.back(*this, i);
    }
    backward_done_ = true;
  }

  bool backward_done() const { return backward_done_; }

  T* gptr(int id) {
    Node& n = nodes[id];
    return n.grad.empty() ? nullptr : n.grad.data();
  }

  static T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

 private:
  bool backward_done_ = false;

  int push(int rows, int cols, std::vector<T> value, bool needs_grad) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val = std::move(value);
    n.needs_grad = needs_grad;
    nodes.push_back(std::move(n));
    return int(nodes.size()) - 1;
  }

  void set_back(int id, const std::vector<int>&, std::function<void(Tape&, int)> fn) {
    if (nodes[id].needs_grad) nodes[id].back = std::move(fn);
  }

  void axpy(int target, T a, const std::vector<T>& g) {
    if (T* gt = gptr(target)) {
      for (size_t i = 0; i < g.size(); ++i) gt[i] += a * g[i];
    }
  }

  void check_same(int a, int b, const char* op) {
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    if (na.rows != nb.rows || na.cols != nb.cols)
      fail(strf("%s: shape (%d,%d) vs (%d,%d)", op, na.rows, na.cols, nb.rows, nb.cols));
  }

  void check_row(int a, int b, const char* op) {
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    if (nb.rows != 1 || nb.cols != na.cols)
      fail(strf("%s: shape (%d,%d) vs row (%d,%d)", op, na.rows, na.cols, nb.rows, nb.cols));
  }

  template <class F, class B>
  int ew2(int a, int b, F fwd, B bwd) {
    check_same(a, b, "elementwise");
    const Node& na = nodes[a];
    const Node& nb = nodes[b];
    std::vector<T> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(na.val[i], nb.val[i]);
    int id = push(na.rows, na.cols, std::move(out), na.needs_grad || nb.needs_grad);
    set_back(id, {a, b}, [a, b, bwd](Tape& tp, int self) { bwd(tp, a, b, tp.nodes[self]); });
    return id;
  }

  // dmap receives (input, output)
  template <class F, class D>
  int ew1(int a, F map, D dmap) {
    const Node& na = nodes[a];
    std::vector<T> out(na.val.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = map(na.val[i]);
    int id = push(na.rows, na.cols, std::move(out), na.needs_grad);
    set_back(id, {a}, [a, dmap](Tape& tp, int self) {
      const Node& n = tp.nodes[self];
      if (T* ga = tp.gptr(a)) {
        const auto& av = tp.nodes[a].val;
        for (size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * dmap(av[i], n.val[i]);
      }
    });
    return id;
  }
};

}  // namespace bisplat
