// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include "implant/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace implant::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

CMatMap cmat(const Tensor& t, int rows, int cols) { return CMatMap(t.data(), rows, cols); }
MatMap mat(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }

Var make(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    for (const auto& v : inputs) rg = rg || v.requires_grad();
    if (rg) {
        n->requires_grad = true;
        for (const auto& v : inputs) n->inputs.push_back(v.node());
        n->backward = std::move(bw);
    }
    return Var(std::move(n));
}

// Gradient buffer of the i-th input, or nullptr if it does not need one.
Tensor* in_grad(Node& n, std::size_t i) {
    Node& in = *n.inputs[i];
    if (!in.requires_grad) return nullptr;
    return &in.grad_buffer();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

void require_rank(const Var& a, int r, const char* op) {
    if (a.value().rank() != r) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                    shape_str(a.shape()));
    }
}

template <typename F, typename G>
Var unary(const Var& a, F f, G df) {
    Tensor out = Tensor::like(a.value());
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return make(std::move(out), {a}, [df](Node& n) {
        Tensor* ga = in_grad(n, 0);
        if (!ga) return;
        const Tensor& x = n.inputs[0]->value;
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += n.grad[i] * df(x[i], n.value[i]);
    });
}

}  // namespace

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var param(const Parameter& p) {
    auto n = std::make_shared<Node>();
    n->value = p.value;
    if (p.trainable) {
        n->param = &p;
        n->requires_grad = true;
    }
    return Var(std::move(n));
}

Var leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
    if (root.size() != 1) throw std::invalid_argument("backward: root must hold a single element");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* next = node->inputs[idx++].get();
            if (next->requires_grad && seen.insert(next).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->grad = Tensor::like(n->value);
    root.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
        if (n->param) {
            const Parameter& p = *n->param;
            if (p.grad.shape() != p.value.shape()) p.grad = Tensor::like(p.value);
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n->grad[i];
        }
    }
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k)
            if (Tensor* g = in_grad(n, k))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        if (Tensor* g = in_grad(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        if (Tensor* g = in_grad(n, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (Tensor* g = in_grad(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        if (Tensor* g = in_grad(n, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
    });
}

Var mul_const(const Var& a, const Tensor& m) {
    if (a.value().size() != m.size()) throw std::invalid_argument("mul_const: size mismatch");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    return make(std::move(out), {a}, [m](Node& n) {
        if (Tensor* g = in_grad(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * m[i];
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.storage()) v *= s;
    return make(std::move(out), {a}, [s](Node& n) {
        if (Tensor* g = in_grad(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.storage()) v += s;
    return make(std::move(out), {a}, [](Node& n) {
        if (Tensor* g = in_grad(n, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
    });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var silu(const Var& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var sum(const Var& a) {
    return make(Tensor::scalar(a.value().sum()), {a}, [](Node& n) {
        if (Tensor* g = in_grad(n, 0))
            for (double& v : g->storage()) v += n.grad[0];
    });
}

Var mean(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    return make(Tensor::scalar(a.value().sum() * inv), {a}, [inv](Node& n) {
        if (Tensor* g = in_grad(n, 0))
            for (double& v : g->storage()) v += n.grad[0] * inv;
    });
}

Var add_n(const std::vector<Var>& terms) {
    if (terms.empty()) return constant(Tensor::scalar(0.0));
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
}

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({m, n});
    mat(out, m, n).noalias() = cmat(a.value(), m, k) * cmat(b.value(), k, n);
    return make(std::move(out), {a, b}, [m, k, n](Node& node) {
        auto gout = cmat(node.grad, m, n);
        if (Tensor* g = in_grad(node, 0)) mat(*g, m, k).noalias() += gout * cmat(node.inputs[1]->value, k, n).transpose();
        if (Tensor* g = in_grad(node, 1)) mat(*g, k, n).noalias() += cmat(node.inputs[0]->value, m, k).transpose() * gout;
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw std::invalid_argument("matmul_nt: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({m, n});
    mat(out, m, n).noalias() = cmat(a.value(), m, k) * cmat(b.value(), n, k).transpose();
    return make(std::move(out), {a, b}, [m, k, n](Node& node) {
        auto gout = cmat(node.grad, m, n);
        if (Tensor* g = in_grad(node, 0)) mat(*g, m, k).noalias() += gout * cmat(node.inputs[1]->value, n, k);
        if (Tensor* g = in_grad(node, 1)) mat(*g, n, k).noalias() += gout.transpose() * cmat(node.inputs[0]->value, m, k);
    });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in) {
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                                    shape_str(w.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.value().rank() != 1 || bias.dim(0) != out_dim))
        throw std::invalid_argument("linear: bias shape " + shape_str(bias.shape()));
    Tensor out({n, out_dim});
    auto o = mat(out, n, out_dim);
    o.noalias() = cmat(x.value(), n, in) * cmat(w.value(), out_dim, in).transpose();
    if (has_bias) o.rowwise() += CVecMap(bias.value().data(), out_dim).transpose();
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make(std::move(out), inputs, [n, in, out_dim, has_bias](Node& node) {
        auto gout = cmat(node.grad, n, out_dim);
        if (Tensor* g = in_grad(node, 0)) mat(*g, n, in).noalias() += gout * cmat(node.inputs[1]->value, out_dim, in);
        if (Tensor* g = in_grad(node, 1)) mat(*g, out_dim, in).noalias() += gout.transpose() * cmat(node.inputs[0]->value, n, in);
        if (has_bias)
            if (Tensor* g = in_grad(node, 2)) VecMap(g->data(), out_dim) += gout.colwise().sum().transpose();
    });
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    mat(out, n, m) = cmat(a.value(), m, n).transpose();
    return make(std::move(out), {a}, [m, n](Node& node) {
        if (Tensor* g = in_grad(node, 0)) mat(*g, m, n) += cmat(node.grad, n, m).transpose();
    });
}

Var softmax_rows(const Var& a) {
    require_rank(a, 2, "softmax_rows");
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        double mx = a.value().at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, a.value().at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += (out.at(i, j) = std::exp(a.value().at(i, j) - mx));
        for (int j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    return make(std::move(out), {a}, [m, n](Node& node) {
        Tensor* g = in_grad(node, 0);
        if (!g) return;
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += node.grad.at(i, j) * node.value.at(i, j);
            for (int j = 0; j < n; ++j) g->at(i, j) += node.value.at(i, j) * (node.grad.at(i, j) - dot);
        }
    });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
    require_rank(x, 2, "layer_norm_rows");
    const int m = x.dim(0), d = x.dim(1);
    if (gain.size() != static_cast<std::size_t>(d) || bias.size() != static_cast<std::size_t>(d))
        throw std::invalid_argument("layer_norm_rows: affine size mismatch");
    Tensor normed({m, d});
    std::vector<double> inv_std(static_cast<std::size_t>(m));
    Tensor out({m, d});
    for (int i = 0; i < m; ++i) {
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += x.value().at(i, j);
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (x.value().at(i, j) - mu) * (x.value().at(i, j) - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < d; ++j) {
            normed.at(i, j) = (x.value().at(i, j) - mu) * is;
            out.at(i, j) = normed.at(i, j) * gain.value()[static_cast<std::size_t>(j)] + bias.value()[static_cast<std::size_t>(j)];
        }
    }
    return make(std::move(out), {x, gain, bias}, [m, d, normed, inv_std](Node& node) {
        const Tensor& gv = node.inputs[1]->value;
        if (Tensor* g = in_grad(node, 0)) {
            for (int i = 0; i < m; ++i) {
                double mean_dn = 0.0, mean_dn_n = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double dn = node.grad.at(i, j) * gv[static_cast<std::size_t>(j)];
                    mean_dn += dn;
                    mean_dn_n += dn * normed.at(i, j);
                }
                mean_dn /= d;
                mean_dn_n /= d;
                for (int j = 0; j < d; ++j) {
                    const double dn = node.grad.at(i, j) * gv[static_cast<std::size_t>(j)];
                    g->at(i, j) += inv_std[static_cast<std::size_t>(i)] * (dn - mean_dn - normed.at(i, j) * mean_dn_n);
                }
            }
        }
        if (Tensor* g = in_grad(node, 1))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < d; ++j) (*g)[static_cast<std::size_t>(j)] += node.grad.at(i, j) * normed.at(i, j);
        if (Tensor* g = in_grad(node, 2))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < d; ++j) (*g)[static_cast<std::size_t>(j)] += node.grad.at(i, j);
    });
}

Var select_rows(const Var& x, const std::vector<int>& rows) {
    require_rank(x, 2, "select_rows");
    const int n = x.dim(0), d = x.dim(1);
    Tensor out({static_cast<int>(rows.size()), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] < 0 || rows[r] >= n)
            throw std::out_of_range("select_rows: row " + std::to_string(rows[r]) + " out of range [0," + std::to_string(n) + ")");
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = x.value().at(rows[r], j);
    }
    return make(std::move(out), {x}, [rows, d](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (int j = 0; j < d; ++j) g->at(rows[r], j) += node.grad.at(static_cast<int>(r), j);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const int d = parts.front().dim(1);
    int total = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_rows");
        if (p.dim(1) != d) throw std::invalid_argument("concat_rows: column mismatch");
        total += p.dim(0);
    }
    Tensor out({total, d});
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        std::copy(p.value().data(), p.value().data() + p.size(), out.data() + static_cast<std::size_t>(off) * d);
        off += p.dim(0);
    }
    return make(std::move(out), parts, [offsets, d](Node& node) {
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            Tensor* g = in_grad(node, k);
            if (!g) continue;
            const double* src = node.grad.data() + static_cast<std::size_t>(offsets[k]) * d;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += src[i];
        }
    });
}

Var slice_cols(const Var& x, int start, int len) {
    require_rank(x, 2, "slice_cols");
    const int m = x.dim(0), n = x.dim(1);
    if (start < 0 || len < 0 || start + len > n) throw std::out_of_range("slice_cols: range out of bounds");
    Tensor out({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at(i, j) = x.value().at(i, start + j);
    return make(std::move(out), {x}, [m, start, len](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j) g->at(i, start + j) += node.grad.at(i, j);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const int m = parts.front().dim(0);
    int total = 0;
    std::vector<int> offsets;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.dim(0) != m) throw std::invalid_argument("concat_cols: row mismatch");
        offsets.push_back(total);
        total += p.dim(1);
    }
    Tensor out({m, total});
    for (std::size_t k = 0; k < parts.size(); ++k)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < parts[k].dim(1); ++j) out.at(i, offsets[k] + j) = parts[k].value().at(i, j);
    return make(std::move(out), parts, [offsets, m](Node& node) {
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            Tensor* g = in_grad(node, k);
            if (!g) continue;
            const int w = g->dim(1);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) g->at(i, j) += node.grad.at(i, offsets[k] + j);
        }
    });
}

Var mean_rows(const Var& x) {
    require_rank(x, 2, "mean_rows");
    const int m = x.dim(0), d = x.dim(1);
    if (m == 0) throw std::invalid_argument("mean_rows: empty input");
    Tensor out({d});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += x.value().at(i, j);
    for (double& v : out.storage()) v /= m;
    return make(std::move(out), {x}, [m, d](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < d; ++j) g->at(i, j) += node.grad[static_cast<std::size_t>(j)] / m;
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return make(std::move(out), {x}, [](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i];
    });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C || w.dim(3) != k)
        throw std::invalid_argument("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output for input " + shape_str(x.shape()));
    const int K = C * k * k, P = Ho * Wo;

    Tensor cols({K, P});
    const Tensor& xv = x.value();
    for (int c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                double* row = cols.data() + static_cast<std::size_t>((c * k + ki) * k + kj) * P;
                for (int oi = 0; oi < Ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    for (int oj = 0; oj < Wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        row[oi * Wo + oj] = (ii >= 0 && ii < H && jj >= 0 && jj < W) ? xv.at(c, ii, jj) : 0.0;
                    }
                }
            }

    Tensor out({O, Ho, Wo});
    auto o = mat(out, O, P);
    o.noalias() = cmat(w.value(), O, K) * cmat(cols, K, P);
    const bool has_bias = bias.defined();
    if (has_bias) o.colwise() += CVecMap(bias.value().data(), O);

    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make(std::move(out), inputs, [=, cols = std::move(cols)](Node& node) {
        auto gout = cmat(node.grad, O, P);
        if (Tensor* g = in_grad(node, 1)) mat(*g, O, K).noalias() += gout * cmat(cols, K, P).transpose();
        if (has_bias)
            if (Tensor* g = in_grad(node, 2)) VecMap(g->data(), O) += gout.rowwise().sum();
        if (Tensor* g = in_grad(node, 0)) {
            RowMat dcols = cmat(node.inputs[1]->value, O, K).transpose() * gout;
            for (int c = 0; c < C; ++c)
                for (int ki = 0; ki < k; ++ki)
                    for (int kj = 0; kj < k; ++kj) {
                        const double* row = dcols.data() + static_cast<std::size_t>((c * k + ki) * k + kj) * P;
                        for (int oi = 0; oi < Ho; ++oi) {
                            const int ii = oi * stride - pad + ki;
                            if (ii < 0 || ii >= H) continue;
                            for (int oj = 0; oj < Wo; ++oj) {
                                const int jj = oj * stride - pad + kj;
                                if (jj >= 0 && jj < W) g->at(c, ii, jj) += row[oi * Wo + oj];
                            }
                        }
                    }
        }
    });
}

Var conv_transpose_patch(const Var& x, const Var& w, const Var& bias) {
    require_rank(x, 3, "conv_transpose_patch");
    require_rank(w, 4, "conv_transpose_patch");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(1), k = w.dim(2);
    if (w.dim(0) != C || w.dim(3) != k) throw std::invalid_argument("conv_transpose_patch: weight shape mismatch");
    const int K = O * k * k, P = H * W;
    // cols[K,P] = Wᵀ[K,C] · x[C,P], then scatter each column into its k×k patch.
    RowMat cols = cmat(w.value(), C, K).transpose() * cmat(x.value(), C, P);
    const bool has_bias = bias.defined();
    Tensor out({O, H * k, W * k});
    for (int o = 0; o < O; ++o)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const double* row = cols.data() + static_cast<std::size_t>((o * k + ki) * k + kj) * P;
                const double b = has_bias ? bias.value()[static_cast<std::size_t>(o)] : 0.0;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j) out.at(o, i * k + ki, j * k + kj) = row[i * W + j] + b;
            }
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make(std::move(out), inputs, [=](Node& node) {
        RowMat gcols(K, P);
        for (int o = 0; o < O; ++o)
            for (int ki = 0; ki < k; ++ki)
                for (int kj = 0; kj < k; ++kj) {
                    double* row = gcols.data() + static_cast<std::size_t>((o * k + ki) * k + kj) * P;
                    for (int i = 0; i < H; ++i)
                        for (int j = 0; j < W; ++j) row[i * W + j] = node.grad.at(o, i * k + ki, j * k + kj);
                }
        if (Tensor* g = in_grad(node, 0)) mat(*g, C, P).noalias() += cmat(node.inputs[1]->value, C, K) * gcols;
        if (Tensor* g = in_grad(node, 1)) mat(*g, C, K).noalias() += cmat(node.inputs[0]->value, C, P) * gcols.transpose();
        if (has_bias)
            if (Tensor* g = in_grad(node, 2)) {
                const int plane = H * k * W * k;
                for (int o = 0; o < O; ++o) {
                    double s = 0.0;
                    const double* src = node.grad.data() + static_cast<std::size_t>(o) * plane;
                    for (int i = 0; i < plane; ++i) s += src[i];
                    (*g)[static_cast<std::size_t>(o)] += s;
                }
            }
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 3, "upsample_nearest2x");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < 2 * H; ++i)
            for (int j = 0; j < 2 * W; ++j) out.at(c, i, j) = x.value().at(c, i / 2, j / 2);
    return make(std::move(out), {x}, [C, H, W](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < 2 * H; ++i)
                    for (int j = 0; j < 2 * W; ++j) g->at(c, i / 2, j / 2) += node.grad.at(c, i, j);
    });
}

Var add_channel(const Var& x, const Var& v) {
    require_rank(x, 3, "add_channel");
    const int C = x.dim(0), P = x.dim(1) * x.dim(2);
    if (v.size() != static_cast<std::size_t>(C)) throw std::invalid_argument("add_channel: channel mismatch");
    Tensor out = x.value();
    for (int c = 0; c < C; ++c)
        for (int p = 0; p < P; ++p) out[static_cast<std::size_t>(c) * P + p] += v.value()[static_cast<std::size_t>(c)];
    return make(std::move(out), {x, v}, [C, P](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i];
        if (Tensor* g = in_grad(node, 1))
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int p = 0; p < P; ++p) s += node.grad[static_cast<std::size_t>(c) * P + p];
                (*g)[static_cast<std::size_t>(c)] += s;
            }
    });
}

Var mean_spatial(const Var& x) {
    require_rank(x, 3, "mean_spatial");
    const int C = x.dim(0), P = x.dim(1) * x.dim(2);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double s = 0.0;
        for (int p = 0; p < P; ++p) s += x.value()[static_cast<std::size_t>(c) * P + p];
        out[static_cast<std::size_t>(c)] = s / P;
    }
    return make(std::move(out), {x}, [C, P](Node& node) {
        if (Tensor* g = in_grad(node, 0))
            for (int c = 0; c < C; ++c)
                for (int p = 0; p < P; ++p) (*g)[static_cast<std::size_t>(c) * P + p] += node.grad[static_cast<std::size_t>(c)] / P;
    });
}

Var cosine(const Var& a, const Var& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: size mismatch");
    const auto& av = a.value().storage();
    const auto& bv = b.value().storage();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        dot += av[i] * bv[i];
        na2 += av[i] * av[i];
        nb2 += bv[i] * bv[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) throw std::domain_error("cosine: zero-norm argument");
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double c = dot / (na * nb);
    return make(Tensor::scalar(c), {a, b}, [c, na, nb](Node& node) {
        const auto& av = node.inputs[0]->value;
        const auto& bv = node.inputs[1]->value;
        const double gr = node.grad[0];
        if (Tensor* g = in_grad(node, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gr * (bv[i] / (na * nb) - c * av[i] / (na * na));
        if (Tensor* g = in_grad(node, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gr * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
    });
}

Var normalize_rows(const Var& x) {
    require_rank(x, 2, "normalize_rows");
    const int m = x.dim(0), d = x.dim(1);
    std::vector<double> norms(static_cast<std::size_t>(m));
    Tensor out({m, d});
    for (int i = 0; i < m; ++i) {
        double n2 = 0.0;
        for (int j = 0; j < d; ++j) n2 += x.value().at(i, j) * x.value().at(i, j);
        if (n2 == 0.0) throw std::domain_error("normalize_rows: zero-norm row");
        const double n = norms[static_cast<std::size_t>(i)] = std::sqrt(n2);
        for (int j = 0; j < d; ++j) out.at(i, j) = x.value().at(i, j) / n;
    }
    return make(std::move(out), {x}, [m, d, norms](Node& node) {
        Tensor* g = in_grad(node, 0);
        if (!g) return;
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += node.grad.at(i, j) * node.value.at(i, j);
            const double n = norms[static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j) g->at(i, j) += (node.grad.at(i, j) - dot * node.value.at(i, j)) / n;
        }
    });
}

Var cross_entropy_rows(const Var& logits, const std::vector<int>& targets) {
    require_rank(logits, 2, "cross_entropy_rows");
    const int m = logits.dim(0), n = logits.dim(1);
    if (targets.size() != static_cast<std::size_t>(m)) throw std::invalid_argument("cross_entropy_rows: target count mismatch");
    Tensor probs({m, n});
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= n) throw std::out_of_range("cross_entropy_rows: target out of range");
        double mx = logits.value().at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, logits.value().at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += (probs.at(i, j) = std::exp(logits.value().at(i, j) - mx));
        for (int j = 0; j < n; ++j) probs.at(i, j) /= z;
        loss += -(logits.value().at(i, t) - mx - std::log(z));
    }
    return make(Tensor::scalar(loss / m), {logits}, [m, n, probs, targets](Node& node) {
        Tensor* g = in_grad(node, 0);
        if (!g) return;
        const double gr = node.grad[0] / m;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                g->at(i, j) += gr * (probs.at(i, j) - (j == targets[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
    });
}

}  // namespace implant::ad
