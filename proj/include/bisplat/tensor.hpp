#pragma once
// Dense row-major 2-D tensors plus the matmul kernels the tape needs.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bisplat/common.hpp"

namespace bisplat {

template <class T>
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), T(0)) {}
  Tensor(int r, int c, std::vector<T> data) : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != size_t(r) * size_t(c)) fail("tensor: data length does not match shape");
  }

  size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& at(int r, int c) { return v[size_t(r) * cols + c]; }
  T at(int r, int c) const { return v[size_t(r) * cols + c]; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  static Tensor full(int r, int c, T value) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }
};

// C (+)= A * B with A n×k, B k×m. Row-parallel; per-element accumulation
// order is the ascending k loop, independent of the worker count.
template <class T>
void mm_nn(const T* A, const T* B, T* C, int n, int k, int m, bool accumulate) {
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = C + size_t(i) * m;
      if (!accumulate) std::fill(crow, crow + m, T(0));
      const T* arow = A + size_t(i) * k;
      for (int t = 0; t < k; ++t) {
        const T a = arow[t];
        if (a == T(0)) continue;
        const T* brow = B + size_t(t) * m;
        for (int j = 0; j < m; ++j) crow[j] += a * brow[j];
      }
    }
  });
}

// C (+)= A * B^T with A n×k, B m×k.
template <class T>
void mm_nt(const T* A, const T* B, T* C, int n, int k, int m, bool accumulate) {
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* arow = A + size_t(i) * k;
      T* crow = C + size_t(i) * m;
      for (int j = 0; j < m; ++j) {
        const T* brow = B + size_t(j) * k;
        T acc = T(0);
        for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  });
}

// C (+)= A^T * B with A k×n, B k×m. Parallel over output rows (columns of A).
template <class T>
void mm_tn(const T* A, const T* B, T* C, int k, int n, int m, bool accumulate) {
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* crow = C + size_t(i) * m;
      if (!accumulate) std::fill(crow, crow + m, T(0));
      for (int t = 0; t < k; ++t) {
        const T a = A[size_t(t) * n + i];
        if (a == T(0)) continue;
        const T* brow = B + size_t(t) * m;
        for (int j = 0; j < m; ++j) crow[j] += a * brow[j];
      }
    }
  });
}

}  // namespace bisplat
