#include <cmath>

#include <doctest.h>

#include "imm/adapters.hpp"
#include "imm/kernels.hpp"
#include "imm/rng.hpp"
#include "test_util.hpp"

using namespace imm;
using imm::testing::error_code_of;

namespace {

template <class T>
Matrix<T> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    Matrix<T> m(r, c);
    for (auto& v : m.flat()) v = static_cast<T>(rng.normal(0.0, 1.0));
    return m;
}

// Naive triple loop, independent of the library kernels.
MatrixD naive(const MatrixD& a, const MatrixD& b) {
    MatrixD c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j)
            for (std::size_t t = 0; t < a.cols(); ++t) c(i, j) += a(i, t) * b(t, j);
    return c;
}

MatrixD transpose(const MatrixD& a) {
    MatrixD t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

double max_rel(const std::vector<double>& got, const MatrixD& want) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num = std::max(num, std::abs(got[i] - want.flat()[i]));
        den = std::max(den, std::abs(want.flat()[i]));
    }
    return den == 0 ? num : num / den;
}

MatrixD dense(const BaseLinear<double>& base, const std::vector<LowRankAdapter<double>>& ads) {
    MatrixD w = base.weight;
    for (const auto& a : ads) {
        auto ab = naive(a.a, a.b);
        for (std::size_t i = 0; i < w.size(); ++i) w.flat()[i] += a.scale * ab.flat()[i];
    }
    return w;
}

MatrixD row(const std::vector<double>& v) { return MatrixD(1, v.size(), v); }

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("serial and parallel kernels agree bitwise with each other and with a naive product") {
    Rng rng(1);
    for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 2}, {64, 33, 17}, {200, 64, 96}}) {
        auto a = random_matrix<double>(rng, m, k), b = random_matrix<double>(rng, k, n);
        auto s = kernels::serial::matmul(a, b);
        CHECK(s == kernels::parallel::matmul(a, b));
        CHECK(max_rel(std::vector<double>(s.flat().begin(), s.flat().end()), naive(a, b)) < 1e-12);

        auto at = random_matrix<double>(rng, k, m);
        CHECK(kernels::serial::matmul_tn(at, b) == kernels::parallel::matmul_tn(at, b));
        auto tn = kernels::serial::matmul_tn(at, b);
        CHECK(max_rel(std::vector<double>(tn.flat().begin(), tn.flat().end()), naive(transpose(at), b)) < 1e-12);

        auto bt = random_matrix<double>(rng, n, k);
        CHECK(kernels::serial::matmul_nt(a, bt) == kernels::parallel::matmul_nt(a, bt));
        auto nt = kernels::serial::matmul_nt(a, bt);
        CHECK(max_rel(std::vector<double>(nt.flat().begin(), nt.flat().end()), naive(a, transpose(bt))) < 1e-12);

        auto af = random_matrix<float>(rng, m, k), bf = random_matrix<float>(rng, k, n);
        CHECK(kernels::serial::matmul(af, bf) == kernels::parallel::matmul(af, bf));
    }
}

TEST_CASE("shape errors") {
    MatrixD a(2, 3), b(4, 2);
    CHECK(error_code_of([&] { kernels::matmul(a, b); }) == Errc::DimensionMismatch);
    CHECK(error_code_of([&] { kernels::matmul_tn(a, b); }) == Errc::DimensionMismatch);
    CHECK(error_code_of([&] { kernels::matmul_nt(a, b); }) == Errc::DimensionMismatch);
}

TEST_CASE("axpy") {
    MatrixD x(1, 3, std::vector<double>{1, 2, 3}), y(1, 3, std::vector<double>{1, 1, 1});
    kernels::axpy(2.0, x, y);
    CHECK(y == MatrixD(1, 3, std::vector<double>{3, 5, 7}));
}

}

TEST_SUITE("adapters") {

TEST_CASE("zero B or zero scale leaves the base map") {
    Rng rng(2);
    BaseLinear<double> base{random_matrix<double>(rng, 4, 3), std::nullopt};
    auto ad = init_adapter<double>(4, 3, 2, 1.0, 7);
    std::vector<double> x{0.5, -1, 2, 0.25};
    CHECK(adapter_forward<double>(base, ad, x) == base_forward<double>(base, x));
    ad.b = random_matrix<double>(rng, 2, 3);
    ad.scale = 0.0;
    CHECK(adapter_forward<double>(base, ad, x) == base_forward<double>(base, x));
}

TEST_CASE("adapter_forward equals the dense product") {
    Rng rng(3);
    BaseLinear<double> base{random_matrix<double>(rng, 4, 3), std::nullopt};
    LowRankAdapter<double> ad{random_matrix<double>(rng, 4, 2), random_matrix<double>(rng, 2, 3), 1.0};
    std::vector<double> x{0.3, -0.7, 1.1, 2.0};
    auto want = naive(row(x), dense(base, {ad}));
    CHECK(max_rel(adapter_forward<double>(base, ad, x), want) < 1e-6);
}

TEST_CASE("stacked_forward") {
    Rng rng(4);
    BaseLinear<double> base{random_matrix<double>(rng, 5, 4), std::vector<double>{1, 2, 3, 4}};
    LowRankAdapter<double> a1{random_matrix<double>(rng, 5, 2), random_matrix<double>(rng, 2, 4), 0.5};
    LowRankAdapter<double> a2{random_matrix<double>(rng, 5, 2), random_matrix<double>(rng, 2, 4), 2.0};
    std::vector<double> y{1, -1, 0.5, 0.25, 2};
    AdapterStack<double> st{base, {a1, a2}, {false, true}};
    auto want = naive(row(y), dense({base.weight, std::nullopt}, {a1, a2}));
    for (std::size_t j = 0; j < 4; ++j) want(0, j) += (*base.bias)[j];
    CHECK(max_rel(stacked_forward<double>(st, y), want) < 1e-6);

    auto zeroed = st;
    zeroed.adapters[1].b.fill(0.0);
    CHECK(stacked_forward<double>(zeroed, y) == adapter_forward<double>(base, a1, y));
    zeroed.adapters[0].b.fill(0.0);
    CHECK(stacked_forward<double>(zeroed, y) == base_forward<double>(base, y));
}

TEST_CASE("merge_adapter") {
    Rng rng(5);
    BaseLinear<double> base{random_matrix<double>(rng, 6, 5), std::nullopt};
    auto zero = init_adapter<double>(6, 5, 2, 1.0, 1);
    CHECK(merge_adapter(base, zero).weight == base.weight);

    LowRankAdapter<double> ad{random_matrix<double>(rng, 6, 3), random_matrix<double>(rng, 3, 5), 0.75};
    auto merged = merge_adapter(base, ad);
    for (int t = 0; t < 100; ++t) {
        auto x = random_matrix<double>(rng, 1, 6);
        std::span<const double> xs = x.row(0);
        auto got = base_forward<double>(merged, xs);
        CHECK(max_rel(got, row(adapter_forward<double>(base, ad, xs))) < 1e-6);
    }

    LowRankAdapter<double> second{random_matrix<double>(rng, 6, 2), random_matrix<double>(rng, 2, 5), 1.5};
    AdapterStack<double> both{base, {ad, second}, {false, true}};
    auto y = random_matrix<double>(rng, 1, 6);
    std::span<const double> ys = y.row(0);
    CHECK(max_rel(adapter_forward<double>(merged, second, ys), row(stacked_forward<double>(both, ys))) < 1e-12);
}

TEST_CASE("init_adapter") {
    auto ad = init_adapter<double>(4, 3, 2, 0.5, 11);
    CHECK(ad.a.rows() == 4);
    CHECK(ad.a.cols() == 2);
    CHECK(ad.b.rows() == 2);
    CHECK(ad.b.cols() == 3);
    CHECK(ad.parameter_count() == 14);
    for (double v : ad.b.flat()) CHECK(v == 0.0);
    CHECK(init_adapter<double>(4, 3, 2, 0.5, 11).a == ad.a);
    CHECK(init_adapter<double>(4, 3, 2, 0.5, 12).a != ad.a);
    CHECK(error_code_of([] { init_adapter<double>(4, 3, 3, 1.0, 1); }) == Errc::RankTooLarge);
    CHECK(error_code_of([] { init_adapter<double>(4, 3, 0, 1.0, 1); }) == Errc::InvalidArgument);
    CHECK(default_adapter_scale(16) == 0.125);
}

TEST_CASE("stack validation and freezing") {
    AdapterStack<double> st{{MatrixD(4, 3), std::nullopt},
                            {init_adapter<double>(4, 3, 2, 1.0, 1), init_adapter<double>(4, 3, 1, 1.0, 2)},
                            {true, true}};
    st.freeze_all_but_last();
    CHECK(st.trainable == std::vector<bool>{false, true});
    st.validate();
    st.adapters.push_back(init_adapter<double>(5, 3, 2, 1.0, 3));
    st.trainable.push_back(true);
    CHECK(error_code_of([&] { st.validate(); }) == Errc::DimensionMismatch);
}

TEST_CASE("adapter gradients match finite differences") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.below(6), k = 2 + rng.below(6);
        const std::size_t r = 1 + rng.below(std::min(d, k) - 1);
        AdapterStack<double> st{{random_matrix<double>(rng, d, k), std::nullopt},
                                {{random_matrix<double>(rng, d, r), random_matrix<double>(rng, r, k), 0.5},
                                 {random_matrix<double>(rng, d, r), random_matrix<double>(rng, r, k), 1.25}},
                                {false, true}};
        auto yv = random_matrix<double>(rng, 1, d), gv = random_matrix<double>(rng, 1, k);
        std::span<const double> y = yv.row(0), g = gv.row(0);
        for (std::size_t which = 0; which < 2; ++which) {
            auto grad = adapter_gradient<double>(st, which, y, g);
            auto f = [&] {
                auto h = stacked_forward<double>(st, y);
                double v = 0;
                for (std::size_t j = 0; j < k; ++j) v += h[j] * g[j];
                return v;
            };
            for (auto [param, analytic] : {std::pair{&st.adapters[which].a, &grad.da}, {&st.adapters[which].b, &grad.db}}) {
                for (std::size_t i = 0; i < param->size(); ++i) {
                    const double keep = param->flat()[i];
                    param->flat()[i] = keep + 1e-6;
                    const double up = f();
                    param->flat()[i] = keep - 1e-6;
                    const double down = f();
                    param->flat()[i] = keep;
                    CHECK((up - down) / 2e-6 == doctest::Approx(analytic->flat()[i]).epsilon(1e-4));
                }
            }
        }
    }
}

TEST_CASE("float path stays close to the double path") {
    Rng rng(10);
    BaseLinear<double> base{random_matrix<double>(rng, 32, 24), std::nullopt};
    LowRankAdapter<double> ad{random_matrix<double>(rng, 32, 4), random_matrix<double>(rng, 4, 24), 0.5};
    auto x = random_matrix<double>(rng, 5, 32);
    auto yd = adapter_forward(base, ad, x);
    BaseLinear<float> bf{matrix_cast<float>(base.weight), std::nullopt};
    LowRankAdapter<float> af{matrix_cast<float>(ad.a), matrix_cast<float>(ad.b), 0.5f};
    auto yf = adapter_forward(bf, af, matrix_cast<float>(x));
    double worst = 0, scale = 0;
    for (std::size_t i = 0; i < yd.size(); ++i) {
        worst = std::max(worst, std::abs(yd.flat()[i] - static_cast<double>(yf.flat()[i])));
        scale = std::max(scale, std::abs(yd.flat()[i]));
    }
    CHECK(worst / scale < 1e-5);
}

}
