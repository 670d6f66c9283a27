#pragma once

// Minimal reverse-mode differentiation over dense double matrices, sized for the
// small decoder used in tests and desk-scale runs. A Var is a node in a graph
// built during the forward pass; backward() walks it in reverse topological
// order. Leaves created with requires_grad = false (frozen parameters, data)
// never receive gradient, and no gradient flows through them.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "imm/matrix.hpp"

namespace imm::ag {

using Tensor = MatrixD;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily; empty means "never touched"
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);

// Seeds d(loss)/d(loss) = 1 on a 1×1 node and accumulates into every leaf that
// requires grad.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);     // a·b
Var matmul_nt(const Var& a, const Var& b);  // a·bᵀ
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1×n row over every row of a
Var scale(const Var& a, double s);
Var silu(const Var& a);
Var rmsnorm(const Var& x, const Var& gain, double eps = 1e-5);  // per row; gain is 1×n
Var gather_rows(const Var& table, std::span<const int> ids);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
Var causal_softmax(const Var& scores);  // row i attends to columns 0..i
Var select_row(const Var& a, std::size_t row);
Var mean_rows(const Var& a);

// Mean token cross-entropy over rows whose mask is set. targets[i] is the class
// of row i. Rows with mask false contribute neither loss nor gradient.
Var masked_cross_entropy(const Var& logits, std::span<const int> targets, const std::vector<bool>& mask);

// Mean sigmoid cross-entropy over the columns of a 1×L logit row.
Var bce_with_logits(const Var& logits, std::span<const double> targets);

}  // namespace imm::ag
