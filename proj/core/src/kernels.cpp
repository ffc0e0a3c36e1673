#include "gnndiff/kernels.hpp"

#include <Eigen/Core>

namespace gnndiff::kernels {

namespace {
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
          const float* b, float* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map out(c, M, N);
  if (!accumulate) out.setZero();
  if (k == 0) return;
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  } else {
    out.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
  }
}

}  // namespace gnndiff::kernels
