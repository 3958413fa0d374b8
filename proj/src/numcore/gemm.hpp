#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <cstdint>

namespace meaformer::nc::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[M,N] (+)= op(A) * op(B) on row-major buffers. A is M x K (K x M when
/// trans_a); B is K x N (N x K when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  using Map = Eigen::Map<const RowMatrix<T>>;
  Eigen::Map<RowMatrix<T>> out(c, m, n);
  const Map ma(a, trans_a ? k : m, trans_a ? m : k);
  const Map mb(b, trans_b ? n : k, trans_b ? k : n);
  auto assign = [&](const auto& product) {
    if (accumulate)
      out.noalias() += product;
    else
      out.noalias() = product;
  };
  if (!trans_a && !trans_b)
    assign(ma * mb);
  else if (!trans_a && trans_b)
    assign(ma * mb.transpose());
  else if (trans_a && !trans_b)
    assign(ma.transpose() * mb);
  else
    assign(ma.transpose() * mb.transpose());
}

}  // namespace meaformer::nc::detail
