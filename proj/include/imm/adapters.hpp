#pragma once

// Low-rank adapter algebra on a single linear map, using the row-vector
// convention h = x·W with W of shape d×k (input d, output k):
//
//   one adapter:   h = x·W + s·(x·A)·B + bias
//   stacked:       h = x·W + Σᵢ sᵢ·(x·Aᵢ)·Bᵢ + bias
//
// The d×k product A·B is never formed on the forward path; merge_adapter is the
// dense route used to cross-check it.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "imm/matrix.hpp"

namespace imm {

template <class T>
struct LowRankAdapter {
    Matrix<T> a;  // d×r
    Matrix<T> b;  // r×k
    T scale = T(1);

    std::size_t in_dim() const noexcept { return a.rows(); }
    std::size_t out_dim() const noexcept { return b.cols(); }
    std::size_t rank() const noexcept { return a.cols(); }
    std::size_t parameter_count() const noexcept { return a.size() + b.size(); }
};

template <class T>
struct BaseLinear {
    Matrix<T> weight;            // d×k, frozen
    std::optional<std::vector<T>> bias;  // k

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }
};

template <class T>
struct AdapterStack {
    BaseLinear<T> base;
    std::vector<LowRankAdapter<T>> adapters;
    std::vector<bool> trainable;  // one flag per adapter

    // Throws DimensionMismatch unless every adapter matches the base shape, or
    // InvalidArgument when `trainable` is not one flag per adapter.
    void validate() const;
    // Marks only the last adapter trainable (the phase-2 arrangement).
    void freeze_all_but_last();
};

// Default adapter scale when none is configured: 2/r.
inline double default_adapter_scale(std::size_t rank) { return 2.0 / static_cast<double>(rank); }

// A ~ N(0, stddev²), B = 0. Throws RankTooLarge unless r < min(d, k).
template <class T>
LowRankAdapter<T> init_adapter(std::size_t d, std::size_t k, std::size_t r, T scale, std::uint64_t seed,
                               double stddev = 0.02);

template <class T>
std::vector<T> base_forward(const BaseLinear<T>& base, std::span<const T> x);

template <class T>
std::vector<T> adapter_forward(const BaseLinear<T>& base, const LowRankAdapter<T>& adapter, std::span<const T> x);

template <class T>
std::vector<T> stacked_forward(const AdapterStack<T>& stack, std::span<const T> y);

// Row-batched forms: each row of `x` is one input vector.
template <class T>
Matrix<T> adapter_forward(const BaseLinear<T>& base, const LowRankAdapter<T>& adapter, const Matrix<T>& x);
template <class T>
Matrix<T> stacked_forward(const AdapterStack<T>& stack, const Matrix<T>& x);

// W' = W + s·A·B; the inputs are left untouched.
template <class T>
BaseLinear<T> merge_adapter(const BaseLinear<T>& base, const LowRankAdapter<T>& adapter);

// Gradients of the scalar gᵀh with respect to one adapter's factors, where h is
// the stacked forward of `y`:  ∂/∂A = s·y ⊗ (B·g),  ∂/∂B = s·(y·A) ⊗ g.
template <class T>
struct AdapterGradient {
    Matrix<T> da;
    Matrix<T> db;
};

template <class T>
AdapterGradient<T> adapter_gradient(const AdapterStack<T>& stack, std::size_t adapter_index, std::span<const T> y,
                                    std::span<const T> upstream);

}  // namespace imm
