#pragma once
// Sinusoidal positional encoding gamma(t) = [t, sin(2^k pi t), cos(2^k pi t)]
// for k = 0..L-1, applied elementwise to a 3-vector. Layout per row:
// [raw(3) | sin block, frequency-major (3L) | cos block, frequency-major (3L)].

#include <vector>

#include "bisplat/tape.hpp"

namespace bisplat {

inline int encoding_length(int order) { return 3 * (2 * order + 1); }

// Plain evaluation for a single coordinate triple.
inline std::vector<double> positional_encode(const double t[3], int order) {
  if (order < 1) fail("positional_encode: order must be >= 1");
  std::vector<double> out;
  out.reserve(encoding_length(order));
  for (int a = 0; a < 3; ++a) out.push_back(t[a]);
  for (int k = 0; k < order; ++k) {
    const double f = std::ldexp(M_PI, k);  // 2^k * pi
    for (int a = 0; a < 3; ++a) out.push_back(std::sin(f * t[a]));
  }
  for (int k = 0; k < order; ++k) {
    const double f = std::ldexp(M_PI, k);
    for (int a = 0; a < 3; ++a) out.push_back(std::cos(f * t[a]));
  }
  return out;
}

// Graph version: t_node is (n,3) of pre-normalized coordinates; output (n, 3*(2L+1)).
template <class T>
int encode_node(Tape<T>& tape, int t_node, int order) {
  if (order < 1) fail("positional_encode: order must be >= 1");
  if (tape.cols(t_node) != 3)
    fail(strf("positional_encode: expected (n,3) input, got (%d,%d)", tape.rows(t_node),
              tape.cols(t_node)));
  std::vector<int> parts;
  parts.push_back(t_node);
  for (int k = 0; k < order; ++k)
    parts.push_back(tape.sin_(tape.affine(t_node, T(std::ldexp(M_PI, k)), T(0))));
  for (int k = 0; k < order; ++k)
    parts.push_back(tape.cos_(tape.affine(t_node, T(std::ldexp(M_PI, k)), T(0))));
  return tape.concat_cols(parts);
}

}  // namespace bisplat
