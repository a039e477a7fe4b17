#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace retmle::detail {

// In-place solve of H x = b by Gaussian elimination with partial pivoting;
// returns false when the pivot degenerates. Small systems only.
inline bool dense_solve(std::vector<double>& H, std::vector<double>& b, int p) {
  for (int col = 0; col < p; ++col) {
    int pivot = col;
    for (int r = col + 1; r < p; ++r) {
      if (std::abs(H[static_cast<size_t>(r * p + col)]) >
          std::abs(H[static_cast<size_t>(pivot * p + col)])) {
        pivot = r;
      }
    }
    if (std::abs(H[static_cast<size_t>(pivot * p + col)]) < 1e-12) return false;
    if (pivot != col) {
      for (int c = 0; c < p; ++c) {
        std::swap(H[static_cast<size_t>(col * p + c)], H[static_cast<size_t>(pivot * p + c)]);
      }
      std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(pivot)]);
    }
    for (int r = col + 1; r < p; ++r) {
      double f = H[static_cast<size_t>(r * p + col)] / H[static_cast<size_t>(col * p + col)];
      for (int c = col; c < p; ++c) {
        H[static_cast<size_t>(r * p + c)] -= f * H[static_cast<size_t>(col * p + c)];
      }
      b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
    }
  }
  for (int r = p - 1; r >= 0; --r) {
    double s = b[static_cast<size_t>(r)];
    for (int c = r + 1; c < p; ++c) {
      s -= H[static_cast<size_t>(r * p + c)] * b[static_cast<size_t>(c)];
    }
    b[static_cast<size_t>(r)] = s / H[static_cast<size_t>(r * p + r)];
  }
  return true;
}

}  // namespace retmle::detail
