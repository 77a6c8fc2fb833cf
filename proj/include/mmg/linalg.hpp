// SPDX-License-Identifier: Apache-2.0

#ifndef MMG_LINALG_HPP
#define MMG_LINALG_HPP

#include <cstddef>
#include <vector>

namespace mmg {

/// Row-major dense matrix, just enough for the solver's small KKT blocks.
struct DenseMatrix {
  int n = 0;
  std::vector<double> a; // n*n, row-major

  explicit DenseMatrix(int size = 0) : n(size), a(static_cast<std::size_t>(size) * size, 0.0) {}
  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * n + c]; }
  double at(int r, int c) const { return a[static_cast<std::size_t>(r) * n + c]; }
};

/// In-place LU factorization with partial pivoting.
struct LuFactor {
  DenseMatrix lu;
  std::vector<int> perm;
  bool singular = false;

  static LuFactor factor(DenseMatrix m);
  /// Solves A x = b in place.
  void solve(std::vector<double>& b) const;
};

} // namespace mmg

#endif // MMG_LINALG_HPP
