#include "imm/kernels.hpp"

namespace imm::kernels {

namespace {
template <class T>
void check(bool ok, const char* what) {
    if (!ok) throw Error(Errc::DimensionMismatch, what);
}
}  // namespace

namespace serial {

template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    check<T>(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix<T> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc{};
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
    check<T>(a.rows() == b.rows(), "matmul_tn: row counts differ");
    Matrix<T> c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc{};
            for (std::size_t k = 0; k < a.rows(); ++k) acc += a(k, i) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
    check<T>(a.cols() == b.cols(), "matmul_nt: column counts differ");
    Matrix<T> c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            T acc{};
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
            c(i, j) = acc;
        }
    return c;
}

template Matrix<float> matmul(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> matmul_tn(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul_tn(const Matrix<double>&, const Matrix<double>&);
template Matrix<float> matmul_nt(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> matmul_nt(const Matrix<double>&, const Matrix<double>&);

}  // namespace serial

template <class T>
void axpy(T alpha, const Matrix<T>& x, Matrix<T>& y) {
    check<T>(x.same_shape(y), "axpy: shapes differ");
    auto xs = x.flat();
    auto ys = y.flat();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

template void axpy(float, const Matrix<float>&, Matrix<float>&);
template void axpy(double, const Matrix<double>&, Matrix<double>&);

}  // namespace imm::kernels
