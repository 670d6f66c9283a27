#pragma once

// Dense linear-algebra kernels. Every kernel has a serial reference in
// imm::kernels::serial and an OpenMP version in imm::kernels::parallel.
// The parallel versions split work over output rows and accumulate each output
// element in the same order as the reference, so results are bitwise identical.

#include "imm/matrix.hpp"

namespace imm::kernels {

namespace serial {
// C = A·B
template <class T> Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);
// C = Aᵀ·B
template <class T> Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b);
// C = A·Bᵀ
template <class T> Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b);
}  // namespace serial

namespace parallel {
template <class T> Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);
template <class T> Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b);
template <class T> Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b);
}  // namespace parallel

// Entry points used by the rest of the library.
template <class T> Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) { return parallel::matmul(a, b); }
template <class T> Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) { return parallel::matmul_tn(a, b); }
template <class T> Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) { return parallel::matmul_nt(a, b); }

// In-place y += alpha * x.
template <class T> void axpy(T alpha, const Matrix<T>& x, Matrix<T>& y);

}  // namespace imm::kernels
