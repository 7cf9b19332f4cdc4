#pragma once

//! Row-major complex GEMM backend (CBLAS).

#include <complex>

#include <cblas.h>

namespace entmix::detail {

inline void gemm_row_major(const std::complex<double>* a, const std::complex<double>* b,
                           std::complex<double>* c, long m, long k, long n) {
  const std::complex<double> one(1.0, 0.0), zero(0.0, 0.0);
  cblas_zgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
              &one, a, static_cast<int>(k), b, static_cast<int>(n),
              &zero, c, static_cast<int>(n));
}

}  // namespace entmix::detail
