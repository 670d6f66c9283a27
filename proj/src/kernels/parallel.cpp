#include "imm/kernels.hpp"

#include <cstdint>

namespace imm::kernels::parallel {

namespace {
// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelThreshold = 1u << 15;

void require(bool ok, const char* what) {
    if (!ok) throw Error(Errc::DimensionMismatch, what);
}
}  // namespace

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    const auto m = static_cast<std::int64_t>(a.rows());
    const std::size_t n = b.cols(), inner = a.cols();
    Matrix<T> c(a.rows(), n);
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
#pragma omp parallel for schedule(static) if (a.rows() * n * inner > kParallelThreshold)
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        const T* arow = pa + i * inner;
        for (std::size_t k = 0; k < inner; ++k) {
            const T aik = arow[k];
            const T* brow = pb + k * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.rows() == b.rows(), "matmul_tn: row counts differ");
    const auto m = static_cast<std::int64_t>(a.cols());
    const std::size_t n = b.cols(), inner = a.rows(), lda = a.cols();
    Matrix<T> c(a.cols(), n);
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
#pragma omp parallel for schedule(static) if (a.cols() * n * inner > kParallelThreshold)
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::size_t k = 0; k < inner; ++k) {
            const T aki = pa[k * lda + i];
            const T* brow = pb + k * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
    return c;
}

template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    require(a.cols() == b.cols(), "matmul_nt: column counts differ");
    const auto m = static_cast<std::int64_t>(a.rows());
    const std::size_t n = b.rows(), inner = a.cols();
    Matrix<T> c(a.rows(), n);
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
#pragma omp parallel for schedule(static) if (a.rows() * n * inner > kParallelThreshold)
    for (std::int64_t i = 0; i < m; ++i) {
        const T* arow = pa + i * inner;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = pb + j * inner;
            T acc{};
            for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
            pc[i * n + j] = acc;
        }
    }
    return c;
}

template Matrix<float> matmul(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> matmul_tn(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul_tn(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> matmul_nt(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul_nt(const Matrix<double>&, const Matrix<double>&);

}  // namespace imm::kernels::parallel
