// SPDX-License-Identifier: Apache-2.0

#include "mmg/linalg.hpp"

#include <cmath>
#include <cstdlib>
#include <utility>

namespace mmg {

LuFactor LuFactor::factor(DenseMatrix m) {
  const int n = m.n;
  LuFactor f;
  f.perm.resize(n);
  for (int i = 0; i < n; ++i) f.perm[i] = i;

  for (int col = 0; col < n; ++col) {
    int pivot = col;
    double best = std::abs(m.at(col, col));
    for (int r = col + 1; r < n; ++r) {
      const double v = std::abs(m.at(r, col));
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best == 0.0) {
      f.singular = true;
      f.lu = std::move(m);
      return f;
    }
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(m.at(pivot, c), m.at(col, c));
      std::swap(f.perm[pivot], f.perm[col]);
    }
    const double inv = 1.0 / m.at(col, col);
    for (int r = col + 1; r < n; ++r) {
      const double factor = m.at(r, col) * inv;
      m.at(r, col) = factor;
      if (factor == 0.0) continue;
      for (int c = col + 1; c < n; ++c) m.at(r, c) -= factor * m.at(col, c);
    }
  }
  f.lu = std::move(m);
  return f;
}

void LuFactor::solve(std::vector<double>& b) const {
  const int n = lu.n;
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = b[perm[i]];
  // forward substitution, unit lower triangle
  for (int i = 0; i < n; ++i) {
    double s = y[i];
    for (int c = 0; c < i; ++c) s -= lu.at(i, c) * y[c];
    y[i] = s;
  }
  // back substitution
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int c = i + 1; c < n; ++c) s -= lu.at(i, c) * y[c];
    y[i] = s / lu.at(i, i);
  }
  b = std::move(y);
}

} // namespace mmg
