#include "imm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "imm/error.hpp"
#include "imm/kernels.hpp"

namespace imm::ag {

Tensor& Node::grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor(value.rows(), value.cols());
    return grad;
}

namespace {

Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(fn);
    }
    return n;
}

void accumulate(Node& target, const Tensor& delta) {
    if (!target.requires_grad) return;
    kernels::axpy(1.0, delta, target.grad_buffer());
}

void require(bool ok, const char* what) {
    if (!ok) throw Error(Errc::DimensionMismatch, what);
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

void backward(const Var& loss) {
    require(loss->value.rows() == 1 && loss->value.cols() == 1, "backward: loss must be 1x1");
    if (!loss->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.get(), 0}};
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->grad_buffer()(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

Var matmul(const Var& a, const Var& b) {
    return make(kernels::matmul(a->value, b->value), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) accumulate(*a, kernels::matmul_nt(self.grad, b->value));
        if (b->requires_grad) accumulate(*b, kernels::matmul_tn(a->value, self.grad));
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    return make(kernels::matmul_nt(a->value, b->value), {a, b}, [a, b](Node& self) {
        if (a->requires_grad) accumulate(*a, kernels::matmul(self.grad, b->value));
        if (b->requires_grad) accumulate(*b, kernels::matmul_tn(self.grad, a->value));
    });
}

Var add(const Var& a, const Var& b) {
    require(a->value.same_shape(b->value), "add: shapes differ");
    Tensor out = a->value;
    kernels::axpy(1.0, b->value, out);
    return make(std::move(out), {a, b}, [a, b](Node& self) {
        accumulate(*a, self.grad);
        accumulate(*b, self.grad);
    });
}

Var add_row(const Var& a, const Var& row) {
    require(row->value.rows() == 1 && row->value.cols() == a->value.cols(), "add_row: row shape");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += row->value(0, j);
    return make(std::move(out), {a, row}, [a, row](Node& self) {
        accumulate(*a, self.grad);
        if (row->requires_grad) {
            Tensor g(1, self.grad.cols());
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
            accumulate(*row, g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (auto& v : out.flat()) v *= s;
    return make(std::move(out), {a}, [a, s](Node& self) { kernels::axpy(s, self.grad, a->grad_buffer()); });
}

Var silu(const Var& a) {
    Tensor out = a->value;
    for (auto& v : out.flat()) v = v * sigmoid(v);
    return make(std::move(out), {a}, [a](Node& self) {
        auto& g = a->grad_buffer();
        auto x = a->value.flat();
        auto dy = self.grad.flat();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double sg = sigmoid(x[i]);
            g.flat()[i] += dy[i] * sg * (1.0 + x[i] * (1.0 - sg));
        }
    });
}

Var rmsnorm(const Var& x, const Var& gain, double eps) {
    const std::size_t n = x->value.cols();
    require(gain->value.rows() == 1 && gain->value.cols() == n, "rmsnorm: gain shape");
    Tensor out(x->value.rows(), n);
    std::vector<double> inv_rms(x->value.rows());
    for (std::size_t i = 0; i < x->value.rows(); ++i) {
        double ss = 0.0;
        for (double v : x->value.row(i)) ss += v * v;
        inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
        for (std::size_t j = 0; j < n; ++j) out(i, j) = x->value(i, j) * inv_rms[i] * gain->value(0, j);
    }
    return make(std::move(out), {x, gain}, [x, gain, inv_rms = std::move(inv_rms), n](Node& self) {
        const auto& xv = x->value;
        const auto& gv = gain->value;
        if (x->requires_grad) {
            auto& dx = x->grad_buffer();
            for (std::size_t i = 0; i < xv.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += self.grad(i, j) * gv(0, j) * xv(i, j);
                const double r = inv_rms[i];
                const double coeff = dot * r * r * r / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) dx(i, j) += self.grad(i, j) * gv(0, j) * r - xv(i, j) * coeff;
            }
        }
        if (gain->requires_grad) {
            auto& dg = gain->grad_buffer();
            for (std::size_t i = 0; i < xv.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j) dg(0, j) += self.grad(i, j) * xv(i, j) * inv_rms[i];
        }
    });
}

Var gather_rows(const Var& table, std::span<const int> ids) {
    const auto& t = table->value;
    Tensor out(ids.size(), t.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows())
            throw Error(Errc::InvalidArgument, "gather_rows: id out of range");
        std::copy(t.row(ids[i]).begin(), t.row(ids[i]).end(), out.row(i).begin());
    }
    std::vector<int> idx(ids.begin(), ids.end());
    return make(std::move(out), {table}, [table, idx = std::move(idx)](Node& self) {
        auto& g = table->grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(idx[i], j) += self.grad(i, j);
    });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
    require(start + count <= a->value.cols(), "slice_cols: range");
    Tensor out(a->value.rows(), count);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = a->value(i, start + j);
    return make(std::move(out), {a}, [a, start, count](Node& self) {
        auto& g = a->grad_buffer();
        for (std::size_t i = 0; i < self.grad.rows(); ++i)
            for (std::size_t j = 0; j < count; ++j) g(i, start + j) += self.grad(i, j);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const std::size_t rows = parts[0]->value.rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        require(p->value.rows() == rows, "concat_cols: row counts differ");
        cols += p->value.cols();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < p->value.cols(); ++j) out(i, off + j) = p->value(i, j);
        off += p->value.cols();
    }
    return make(std::move(out), parts, [parts](Node& self) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += self.grad(i, offset + j);
            }
            offset += p->value.cols();
        }
    });
}

Var causal_softmax(const Var& scores) {
    const auto& s = scores->value;
    require(s.rows() <= s.cols(), "causal_softmax: more rows than columns");
    Tensor out(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        double mx = s(i, 0);
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, s(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += (out(i, j) = std::exp(s(i, j) - mx));
        for (std::size_t j = 0; j <= i; ++j) out(i, j) /= z;
    }
    return make(std::move(out), {scores}, [scores](Node& self) {
        auto& g = scores->grad_buffer();
        const auto& y = self.value;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) dot += y(i, j) * self.grad(i, j);
            for (std::size_t j = 0; j <= i; ++j) g(i, j) += y(i, j) * (self.grad(i, j) - dot);
        }
    });
}

Var select_row(const Var& a, std::size_t row) {
    require(row < a->value.rows(), "select_row: row out of range");
    Tensor out(1, a->value.cols());
    std::copy(a->value.row(row).begin(), a->value.row(row).end(), out.row(0).begin());
    return make(std::move(out), {a}, [a, row](Node& self) {
        auto& g = a->grad_buffer();
        for (std::size_t j = 0; j < g.cols(); ++j) g(row, j) += self.grad(0, j);
    });
}

Var mean_rows(const Var& a) {
    const auto& v = a->value;
    require(v.rows() > 0, "mean_rows: empty input");
    Tensor out(1, v.cols());
    for (std::size_t i = 0; i < v.rows(); ++i)
        for (std::size_t j = 0; j < v.cols(); ++j) out(0, j) += v(i, j);
    const double inv = 1.0 / static_cast<double>(v.rows());
    for (auto& x : out.flat()) x *= inv;
    return make(std::move(out), {a}, [a, inv](Node& self) {
        auto& g = a->grad_buffer();
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += self.grad(0, j) * inv;
    });
}

Var masked_cross_entropy(const Var& logits, std::span<const int> targets, const std::vector<bool>& mask) {
    const auto& z = logits->value;
    require(targets.size() == z.rows() && mask.size() == z.rows(), "masked_cross_entropy: length mismatch");
    const auto active = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    if (active == 0) throw Error(Errc::InvalidArgument, "masked_cross_entropy: mask selects no rows");
    Tensor probs(z.rows(), z.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= z.cols())
            throw Error(Errc::InvalidArgument, "masked_cross_entropy: target out of range");
        double mx = z(i, 0);
        for (double v : z.row(i)) mx = std::max(mx, v);
        double sum = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) sum += (probs(i, j) = std::exp(z(i, j) - mx));
        for (std::size_t j = 0; j < z.cols(); ++j) probs(i, j) /= sum;
        total += -(z(i, targets[i]) - mx - std::log(sum));
    }
    const double inv = 1.0 / static_cast<double>(active);
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<bool> msk = mask;
    return make(Tensor(1, 1, total * inv), {logits},
                [logits, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk), inv](Node& self) {
                    auto& g = logits->grad_buffer();
                    const double up = self.grad(0, 0) * inv;
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                        if (!msk[i]) continue;
                        for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += up * probs(i, j);
                        g(i, tgt[i]) -= up;
                    }
                });
}

Var bce_with_logits(const Var& logits, std::span<const double> targets) {
    const auto& z = logits->value;
    require(z.rows() == 1 && z.cols() == targets.size(), "bce_with_logits: shape");
    double total = 0.0;
    for (std::size_t j = 0; j < targets.size(); ++j) {
        const double x = z(0, j);
        total += std::max(x, 0.0) - x * targets[j] + std::log1p(std::exp(-std::abs(x)));
    }
    const double inv = 1.0 / static_cast<double>(targets.size());
    std::vector<double> y(targets.begin(), targets.end());
    return make(Tensor(1, 1, total * inv), {logits}, [logits, y = std::move(y), inv](Node& self) {
        auto& g = logits->grad_buffer();
        for (std::size_t j = 0; j < y.size(); ++j) g(0, j) += self.grad(0, 0) * inv * (sigmoid(logits->value(0, j)) - y[j]);
    });
}

}  // namespace imm::ag
