#pragma once
// Bilinear Spatial Transformer: project joint embeddings to local features,
// pool them onto the cluster grid with tent weights, mix globally with a
// pre-norm Transformer encoder over the N_c tokens, and distribute back to
// per-primitive features. Token count stays N_c regardless of N_p.

#include <array>

#include "bisplat/grid.hpp"
#include "bisplat/params.hpp"
#include "bisplat/tape.hpp"

namespace bisplat {

struct AttentionConfig {
  int layers = 3;
  int heads = 4;
  int ffn_width = 256;
};

namespace detail {

// Per-primitive tent supports plus per-cluster member lists, shared by the
// aggregate and distribute adjoints.
struct TentIndex {
  int n_primitives = 0;
  ClusterGrid grid;
  std::vector<std::array<TentSupport, 4>> supports;
  std::vector<int> support_count;
  std::vector<double> weight_sum;                       // per primitive
  std::vector<std::vector<std::pair<int, int>>> members;  // cluster -> (primitive, slot)

  template <class T>
  static TentIndex build(const std::vector<T>& phi, const std::vector<T>& theta,
                         const ClusterGrid& grid) {
    TentIndex idx;
    idx.n_primitives = int(phi.size());
    idx.grid = grid;
    idx.supports.resize(phi.size());
    idx.support_count.resize(phi.size());
    idx.weight_sum.assign(phi.size(), 0.0);
    idx.members.resize(grid.n_clusters);
    for (size_t i = 0; i < phi.size(); ++i) {
      const int c = tent_neighbors(double(phi[i]), double(theta[i]), grid, idx.supports[i]);
      idx.support_count[i] = c;
      for (int s = 0; s < c; ++s) {
        idx.weight_sum[i] += idx.supports[i][s].w;
        idx.members[idx.supports[i][s].cluster].emplace_back(int(i), s);
      }
      if (idx.weight_sum[i] <= 0.0)
        fail(strf("bst: primitive %zu at (%g, %g) has zero tent weight; position out of domain",
                  i, double(phi[i]), double(theta[i])));
    }
    return idx;
  }
};

}  // namespace detail

// g_j = sum_i w_ij f_i / sum_i w_ij over the tent supports; empty clusters
// yield the zero vector. Gradients flow into F and into the positions.
template <class T>
int bilinear_aggregate(Tape<T>& tape, int features, int az_node, int el_node,
                       const ClusterGrid& grid) {
  const int np = tape.rows(features);
  const int dim = tape.cols(features);
  if (tape.rows(az_node) != np || tape.rows(el_node) != np)
    fail(strf("bilinear_aggregate: positions (%d,%d) vs features rows %d", tape.rows(az_node),
              tape.rows(el_node), np));

  auto idx = std::make_shared<detail::TentIndex>(
      detail::TentIndex::build(tape.val(az_node), tape.val(el_node), grid));

  const auto& fv = tape.val(features);
  std::vector<T> gval(size_t(grid.n_clusters) * dim, T(0));
  std::vector<T> wsum(grid.n_clusters, T(0));
  parallel_for(grid.n_clusters, [&](int64_t j0, int64_t j1) {
    for (int64_t j = j0; j < j1; ++j) {
      T* gj = &gval[size_t(j) * dim];
      T ws = T(0);
      for (const auto& [i, s] : idx->members[j]) {
        const T w = T(idx->supports[i][s].w);
        ws += w;
        const T* fi = &fv[size_t(i) * dim];
        for (int d = 0; d < dim; ++d) gj[d] += w * fi[d];
      }
      if (ws > T(0)) {
        for (int d = 0; d < dim; ++d) gj[d] /= ws;
      }
      wsum[j] = ws;
    }
  });

  auto saved_g = std::make_shared<std::vector<T>>(gval);
  auto saved_wsum = std::make_shared<std::vector<T>>(std::move(wsum));

  return tape.custom(
      grid.n_clusters, dim, std::move(gval), {features, az_node, el_node},
      [features, az_node, el_node, dim, idx, saved_g, saved_wsum](Tape<T>& tp, int self) {
        const auto& up = tp.nodes[self].grad;
        const auto& fv = tp.val(features);
        T* gf = tp.gptr(features);
        T* gaz = tp.gptr(az_node);
        T* gel = tp.gptr(el_node);
        const auto& gval = *saved_g;
        const auto& wsum = *saved_wsum;
        parallel_for(idx->n_primitives, [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) {
            const T* fi = &fv[size_t(i) * dim];
            for (int s = 0; s < idx->support_count[i]; ++s) {
              const auto& sup = idx->supports[i][s];
              const int j = sup.cluster;
              const T ws = wsum[j];
              if (ws <= T(0)) continue;
              const T* uj = &up[size_t(j) * dim];
              const T* gj = &gval[size_t(j) * dim];
              if (gf) {
                const T r = T(sup.w) / ws;
                T* gfi = gf + size_t(i) * dim;
                for (int d = 0; d < dim; ++d) gfi[d] += r * uj[d];
              }
              if (gaz || gel) {
                // d g_j / d w_ij = (f_i - g_j) / W_j
                T dot = T(0);
                for (int d = 0; d < dim; ++d) dot += uj[d] * (fi[d] - gj[d]);
                dot /= ws;
                if (gaz) gaz[i] += T(sup.dw_dphi) * dot;
                if (gel) gel[i] += T(sup.dw_dtheta) * dot;
              }
            }
          }
        });
      });
}

// f'_i = sum_j w_ij g'_j / sum_j w_ij. Every in-domain primitive has a
// positive weight sum on this grid; build() enforces it.
template <class T>
int bilinear_distribute(Tape<T>& tape, int cluster_features, int az_node, int el_node,
                        const ClusterGrid& grid) {
  const int dim = tape.cols(cluster_features);
  if (tape.rows(cluster_features) != grid.n_clusters)
    fail(strf("bilinear_distribute: expected %d cluster rows, got %d", grid.n_clusters,
              tape.rows(cluster_features)));
  const int np = tape.rows(az_node);

  auto idx = std::make_shared<detail::TentIndex>(
      detail::TentIndex::build(tape.val(az_node), tape.val(el_node), grid));

  const auto& gv = tape.val(cluster_features);
  std::vector<T> fval(size_t(np) * dim, T(0));
  parallel_for(np, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* fi = &fval[size_t(i) * dim];
      for (int s = 0; s < idx->support_count[i]; ++s) {
        const auto& sup = idx->supports[i][s];
        const T w = T(sup.w);
        const T* gj = &gv[size_t(sup.cluster) * dim];
        for (int d = 0; d < dim; ++d) fi[d] += w * gj[d];
      }
      const T vi = T(idx->weight_sum[i]);
      for (int d = 0; d < dim; ++d) fi[d] /= vi;
    }
  });

  auto saved_f = std::make_shared<std::vector<T>>(fval);

  return tape.custom(
      np, dim, std::move(fval), {cluster_features, az_node, el_node},
      [cluster_features, az_node, el_node, dim, idx, saved_f](Tape<T>& tp, int self) {
        const auto& up = tp.nodes[self].grad;
        const auto& gv = tp.val(cluster_features);
        const auto& fv = *saved_f;
        T* gg = tp.gptr(cluster_features);
        T* gaz = tp.gptr(az_node);
        T* gel = tp.gptr(el_node);
        if (gg) {
          parallel_for(int64_t(idx->members.size()), [&](int64_t j0, int64_t j1) {
            for (int64_t j = j0; j < j1; ++j) {
              T* ggj = gg + size_t(j) * dim;
              for (const auto& [i, s] : idx->members[j]) {
                const T r = T(idx->supports[i][s].w) / T(idx->weight_sum[i]);
                const T* ui = &up[size_t(i) * dim];
                for (int d = 0; d < dim; ++d) ggj[d] += r * ui[d];
              }
            }
          });
        }
        if (gaz || gel) {
          parallel_for(idx->n_primitives, [&](int64_t i0, int64_t i1) {
            for (int64_t i = i0; i < i1; ++i) {
              const T* ui = &up[size_t(i) * dim];
              const T* fi = &fv[size_t(i) * dim];
              const T vi = T(idx->weight_sum[i]);
              for (int s = 0; s < idx->support_count[i]; ++s) {
                const auto& sup = idx->supports[i][s];
                const T* gj = &gv[size_t(sup.cluster) * dim];
                T dot = T(0);
                for (int d = 0; d < dim; ++d) dot += ui[d] * (gj[d] - fi[d]);
                dot /= vi;
                if (gaz) gaz[i] += T(sup.dw_dphi) * dot;
                if (gel) gel[i] += T(sup.dw_dtheta) * dot;
              }
            }
          });
        }
      });
}

// --- parameter construction -------------------------------------------------

template <class T>
Tensor<T> xavier_uniform(int rows, int cols, Rng& rng) {
  Tensor<T> t(rows, cols);
  const double bound = std::sqrt(6.0 / double(rows + cols));
  for (auto& x : t.v) x = T(rng.uniform(-bound, bound));
  return t;
}

template <class T>
void add_linear(ParamStore<T>& store, const std::string& prefix, int in, int out, Rng& rng,
                bool zero_init = false) {
  store.add(prefix + ".w", zero_init ? Tensor<T>(in, out) : xavier_uniform<T>(in, out, rng),
            ParamGroup::network);
  store.add(prefix + ".b", Tensor<T>(1, out), ParamGroup::network);
}

template <class T>
void add_layer_norm(ParamStore<T>& store, const std::string& prefix, int dim) {
  store.add(prefix + ".g", Tensor<T>::full(1, dim, T(1)), ParamGroup::network);
  store.add(prefix + ".b", Tensor<T>(1, dim), ParamGroup::network);
}

// --- forward assembly --------------------------------------------------------

// Leaf lookup shared by all network builders: maps a parameter name to its
// tape node for the current step.
template <class T>
struct LeafMap {
  Tape<T>* tape = nullptr;
  const ParamStore<T>* store = nullptr;
  std::unordered_map<std::string, int> ids;

  int operator()(const std::string& name) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    int id = tape->leaf(store->get(name).value);
    ids[name] = id;
    return id;
  }
};

template <class T>
int linear_node(Tape<T>& tape, LeafMap<T>& leaves, const std::string& prefix, int x) {
  return tape.add_row(tape.matmul(x, leaves(prefix + ".w")), leaves(prefix + ".b"));
}

template <class T>
int layer_norm_node(Tape<T>& tape, LeafMap<T>& leaves, const std::string& prefix, int x) {
  return tape.add_row(tape.mul_row(tape.layer_norm(x), leaves(prefix + ".g")),
                      leaves(prefix + ".b"));
}

// Pre-norm encoder layer: x += MHA(LN(x)); x += FFN(LN(x)).
template <class T>
int encoder_layer_node(Tape<T>& tape, LeafMap<T>& leaves, const std::string& prefix, int x,
                       int dim, int heads) {
  if (dim % heads != 0)
    fail(strf("transformer: width %d not divisible by %d heads", dim, heads));
  const int dh = dim / heads;
  int h = layer_norm_node(tape, leaves, prefix + ".ln1", x);
  int q = linear_node(tape, leaves, prefix + ".wq", h);
  int k = linear_node(tape, leaves, prefix + ".wk", h);
  int v = linear_node(tape, leaves, prefix + ".wv", h);
  std::vector<int> head_outs;
  for (int a = 0; a < heads; ++a) {
    int qa = tape.slice_cols(q, a * dh, (a + 1) * dh);
    int ka = tape.slice_cols(k, a * dh, (a + 1) * dh);
    int va = tape.slice_cols(v, a * dh, (a + 1) * dh);
    int scores = tape.affine(tape.matmul_nt(qa, ka), T(1.0 / std::sqrt(double(dh))), T(0));
    head_outs.push_back(tape.matmul(tape.softmax_rows(scores), va));
  }
  int attn = linear_node(tape, leaves, prefix + ".wo", tape.concat_cols(head_outs));
  x = tape.add(x, attn);
  int f = layer_norm_node(tape, leaves, prefix + ".ln2", x);
  int f1 = tape.relu(linear_node(tape, leaves, prefix + ".ffn1", f));
  int f2 = linear_node(tape, leaves, prefix + ".ffn2", f1);
  return tape.add(x, f2);
}

struct BstResult {
  int local = -1;   // F, the linear projection (N_p x D)
  int global = -1;  // F', globally mixed features (equals F when bypassed)
  int seq_len = 0;  // transformer sequence length actually used
};

// gs_pe: (N_p, 51); tx_pe: (1, 39) broadcast to all rows.
template <class T>
BstResult bst_forward(Tape<T>& tape, LeafMap<T>& leaves, int gs_pe, int tx_pe, int az_node,
                      int el_node, const ClusterGrid& grid, int dim,
                      const AttentionConfig& attn, bool bypass) {
  const int np = tape.rows(gs_pe);
  int joint = tape.concat_cols({gs_pe, tape.repeat_rows(tx_pe, np)});
  BstResult r;
  r.local = linear_node(tape, leaves, "bst.proj", joint);
  if (bypass) {
    r.global = r.local;
    r.seq_len = 0;
    return r;
  }
  int g = bilinear_aggregate(tape, r.local, az_node, el_node, grid);
  r.seq_len = tape.rows(g);
  if (r.seq_len != grid.n_clusters)
    fail(strf("bst: token count %d != cluster count %d", r.seq_len, grid.n_clusters));
  for (int l = 0; l < attn.layers; ++l)
    g = encoder_layer_node(tape, leaves, strf("bst.enc%d", l), g, dim, attn.heads);
  r.global = bilinear_distribute(tape, g, az_node, el_node, grid);
  return r;
}

template <class T>
void add_bst_params(ParamStore<T>& store, int joint_width, int dim, const AttentionConfig& attn,
                    Rng& rng) {
  add_linear(store, "bst.proj", joint_width, dim, rng);
  for (int l = 0; l < attn.layers; ++l) {
    const std::string p = strf("bst.enc%d", l);
    add_layer_norm(store, p + ".ln1", dim);
    add_linear(store, p + ".wq", dim, dim, rng);
    add_linear(store, p + ".wk", dim, dim, rng);
    add_linear(store, p + ".wv", dim, dim, rng);
    add_linear(store, p + ".wo", dim, dim, rng);
    add_layer_norm(store, p + ".ln2", dim);
    add_linear(store, p + ".ffn1", dim, attn.ffn_width, rng);
    add_linear(store, p + ".ffn2", attn.ffn_width, dim, rng);
  }
}

}  // namespace bisplat
