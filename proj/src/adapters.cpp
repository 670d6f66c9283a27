#include "imm/adapters.hpp"

#include "imm/error.hpp"
#include "imm/kernels.hpp"
#include "imm/rng.hpp"

namespace imm {

namespace {

template <class T>
void check_adapter(const BaseLinear<T>& base, const LowRankAdapter<T>& ad) {
    if (ad.in_dim() != base.in_dim() || ad.out_dim() != base.out_dim() || ad.a.cols() != ad.b.rows())
        throw Error(Errc::DimensionMismatch, "adapter shape does not match the base linear map");
    if (base.bias && base.bias->size() != base.out_dim())
        throw Error(Errc::DimensionMismatch, "bias length differs from output dimension");
}

template <class T>
Matrix<T> as_row(std::span<const T> x) {
    return Matrix<T>(1, x.size(), std::vector<T>(x.begin(), x.end()));
}

template <class T>
std::vector<T> first_row(const Matrix<T>& m) {
    return std::vector<T>(m.row(0).begin(), m.row(0).end());
}

// Shared accumulation order: base product, then each adapter in turn, then bias.
template <class T>
Matrix<T> forward_rows(const BaseLinear<T>& base, std::span<const LowRankAdapter<T>* const> adapters,
                       const Matrix<T>& x) {
    if (x.cols() != base.in_dim()) throw Error(Errc::DimensionMismatch, "input length differs from the input dimension");
    Matrix<T> out = kernels::matmul(x, base.weight);
    for (const auto* ad : adapters) {
        const Matrix<T> projected = kernels::matmul(kernels::matmul(x, ad->a), ad->b);
        kernels::axpy(ad->scale, projected, out);
    }
    if (base.bias)
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += (*base.bias)[j];
    return out;
}

}  // namespace

template <class T>
void AdapterStack<T>::validate() const {
    if (trainable.size() != adapters.size())
        throw Error(Errc::InvalidArgument, "trainable mask needs one flag per adapter");
    for (const auto& ad : adapters) check_adapter(base, ad);
}

template <class T>
void AdapterStack<T>::freeze_all_but_last() {
    trainable.assign(adapters.size(), false);
    if (!trainable.empty()) trainable.back() = true;
}

template <class T>
LowRankAdapter<T> init_adapter(std::size_t d, std::size_t k, std::size_t r, T scale, std::uint64_t seed, double stddev) {
    if (r == 0) throw Error(Errc::InvalidArgument, "adapter rank must be positive");
    if (r >= std::min(d, k))
        throw Error(Errc::RankTooLarge, "rank " + std::to_string(r) + " must be below min(d, k) = " +
                                            std::to_string(std::min(d, k)));
    Rng rng(seed);
    LowRankAdapter<T> ad{Matrix<T>(d, r), Matrix<T>(r, k), scale};
    for (auto& v : ad.a.flat()) v = static_cast<T>(rng.normal(0.0, stddev));
    return ad;
}

template <class T>
std::vector<T> base_forward(const BaseLinear<T>& base, std::span<const T> x) {
    return first_row(forward_rows<T>(base, {}, as_row(x)));
}

template <class T>
Matrix<T> adapter_forward(const BaseLinear<T>& base, const LowRankAdapter<T>& adapter, const Matrix<T>& x) {
    check_adapter(base, adapter);
    const LowRankAdapter<T>* one[] = {&adapter};
    return forward_rows<T>(base, one, x);
}

template <class T>
std::vector<T> adapter_forward(const BaseLinear<T>& base, const LowRankAdapter<T>& adapter, std::span<const T> x) {
    return first_row(adapter_forward(base, adapter, as_row(x)));
}

template <class T>
Matrix<T> stacked_forward(const AdapterStack<T>& stack, const Matrix<T>& x) {
    stack.validate();
    std::vector<const LowRankAdapter<T>*> ptrs;
    for (const auto& ad : stack.adapters) ptrs.push_back(&ad);
    return forward_rows<T>(stack.base, ptrs, x);
}

template <class T>
std::vector<T> stacked_forward(const AdapterStack<T>& stack, std::span<const T> y) {
    return first_row(stacked_forward(stack, as_row(y)));
}

template <class T>
BaseLinear<T> merge_adapter(const BaseLinear<T>& base, const LowRankAdapter<T>& adapter) {
    check_adapter(base, adapter);
    BaseLinear<T> merged = base;
    kernels::axpy(adapter.scale, kernels::matmul(adapter.a, adapter.b), merged.weight);
    return merged;
}

template <class T>
AdapterGradient<T> adapter_gradient(const AdapterStack<T>& stack, std::size_t adapter_index, std::span<const T> y,
                                    std::span<const T> upstream) {
    stack.validate();
    if (adapter_index >= stack.adapters.size()) throw Error(Errc::InvalidArgument, "adapter index out of range");
    const auto& ad = stack.adapters[adapter_index];
    if (y.size() != ad.in_dim() || upstream.size() != ad.out_dim())
        throw Error(Errc::DimensionMismatch, "gradient inputs do not match adapter shape");
    const Matrix<T> yr = as_row(y);
    const Matrix<T> gr = as_row(upstream);
    // B·g as a 1×r row: g·Bᵀ.
    Matrix<T> bg = kernels::matmul_nt(gr, ad.b);
    Matrix<T> ya = kernels::matmul(yr, ad.a);
    AdapterGradient<T> grad{kernels::matmul_tn(yr, bg), kernels::matmul_tn(ya, gr)};
    for (auto& v : grad.da.flat()) v *= ad.scale;
    for (auto& v : grad.db.flat()) v *= ad.scale;
    return grad;
}

#define IMM_INSTANTIATE_ADAPTERS(T)                                                                                \
    template struct AdapterStack<T>;                                                                               \
    template LowRankAdapter<T> init_adapter(std::size_t, std::size_t, std::size_t, T, std::uint64_t, double);      \
    template std::vector<T> base_forward(const BaseLinear<T>&, std::span<const T>);                                \
    template std::vector<T> adapter_forward(const BaseLinear<T>&, const LowRankAdapter<T>&, std::span<const T>);  \
    template Matrix<T> adapter_forward(const BaseLinear<T>&, const LowRankAdapter<T>&, const Matrix<T>&);         \
    template std::vector<T> stacked_forward(const AdapterStack<T>&, std::span<const T>);                           \
    template Matrix<T> stacked_forward(const AdapterStack<T>&, const Matrix<T>&);                                  \
    template BaseLinear<T> merge_adapter(const BaseLinear<T>&, const LowRankAdapter<T>&);                          \
    template AdapterGradient<T> adapter_gradient(const AdapterStack<T>&, std::size_t, std::span<const T>,          \
                                                 std::span<const T>);

IMM_INSTANTIATE_ADAPTERS(float)
IMM_INSTANTIATE_ADAPTERS(double)

}  // namespace imm
