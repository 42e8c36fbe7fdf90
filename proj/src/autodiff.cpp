#include "msfner/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msfner/error.hpp"
#include "msfner/rng.hpp"

namespace msfner {

const Tensor& Var::value() const { return graph_->value(*this); }
const Tensor& Var::grad() const { return graph_->grad(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

void Graph::check_owner(const Var& v) const {
    if (v.graph_ != this || v.id_ >= nodes_.size()) {
        throw Error("variable does not belong to this graph");
    }
}

Var Graph::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::parameter(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Graph::add_node(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const Var& in : inputs) {
        check_owner(in);
        n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

Tensor* Graph::grad_buffer(const Var& v) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return nullptr;
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape(), 0.0);
        n.has_grad = true;
    }
    return &n.grad;
}

void Graph::accumulate(const Var& v, const Tensor& g) {
    Tensor* buf = grad_buffer(v);
    if (!buf) return;
    auto dst = buf->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Graph::backward(const Var& output) {
    check_owner(output);
    if (nodes_[output.id_].value.size() != 1) {
        throw Error("backward() needs a scalar output, got shape " +
                    shape_string(nodes_[output.id_].value.shape()));
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
    }
    Tensor* seed = grad_buffer(output);
    if (!seed) return;
    (*seed)[0] = 1.0;
    for (std::size_t i = output.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, n.grad);
    }
}

const Tensor& Graph::grad(const Var& v) const {
    check_owner(v);
    const Node& n = nodes_[v.id_];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape(), 0.0);
        n.has_grad = true;
    }
    return n.grad;
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw NumericError("log_sum_exp of an empty vector");
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError("log_sum_exp: non-finite input");
        m = std::max(m, x);
    }
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

namespace ops {

namespace {

Graph& graph_of(const Var& a) {
    if (!a.graph()) throw Error("operation on an unbound variable");
    return *a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                    shape_string(b.shape()));
    }
}

void require_matrix(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw Error(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
    }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) {
        throw Error("matmul: inner dimension mismatch " + shape_string(A.shape()) + " x " +
                    shape_string(B.shape()));
    }
    Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A.at(i, p);
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) C.at(i, j) += aip * B.at(p, j);
        }
    }
    const Var inputs[] = {a, b};
    return graph_of(a).add_node(std::move(C), inputs, [a, b, m, k, n](Graph& g, const Tensor& G) {
        const Tensor& A = a.value();
        const Tensor& B = b.value();
        if (Tensor* ga = g.grad_buffer(a)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += G.at(i, j) * B.at(p, j);
                    ga->at(i, p) += s;
                }
        }
        if (Tensor* gb = g.grad_buffer(b)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = A.at(i, p);
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb->at(p, j) += aip * G.at(i, j);
                }
        }
    });
}

Var transpose(const Var& a) {
    const Tensor& A = a.value();
    require_matrix(A, "transpose");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor T({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) T.at(j, i) = A.at(i, j);
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(T), inputs, [a, m, n](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga->at(i, j) += G.at(j, i);
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    const Var inputs[] = {a, b};
    return graph_of(a).add_node(std::move(out), inputs, [a, b](Graph& g, const Tensor& G) {
        g.accumulate(a, G);
        g.accumulate(b, G);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    const Var inputs[] = {a, b};
    return graph_of(a).add_node(std::move(out), inputs, [a, b](Graph& g, const Tensor& G) {
        g.accumulate(a, G);
        if (Tensor* gb = g.grad_buffer(b)) {
            for (std::size_t i = 0; i < G.size(); ++i) (*gb)[i] -= G[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    const Var inputs[] = {a, b};
    return graph_of(a).add_node(std::move(out), inputs, [a, b](Graph& g, const Tensor& G) {
        if (Tensor* ga = g.grad_buffer(a)) {
            for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i] * b.value()[i];
        }
        if (Tensor* gb = g.grad_buffer(b)) {
            for (std::size_t i = 0; i < G.size(); ++i) (*gb)[i] += G[i] * a.value()[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Tensor out = map(a.value(), [c](double x) { return c * x; });
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs, [a, c](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += c * G[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = map(a.value(), [c](double x) { return x + c; });
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs,
                                [a](Graph& g, const Tensor& G) { g.accumulate(a, G); });
}

Var add_row_broadcast(const Var& a, const Var& row) {
    const Tensor& A = a.value();
    const Tensor& r = row.value();
    if (r.rank() != 1 || r.size() != A.cols()) {
        throw Error("add_row_broadcast: " + shape_string(A.shape()) + " + " +
                    shape_string(r.shape()));
    }
    Tensor out = A;
    const std::size_t m = A.rows(), n = A.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
    const Var inputs[] = {a, row};
    return graph_of(a).add_node(std::move(out), inputs, [a, row, m, n](Graph& g, const Tensor& G) {
        g.accumulate(a, G);
        if (Tensor* gr = g.grad_buffer(row)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gr)[j] += G[i * n + j];
        }
    });
}

Var add_col_broadcast(const Var& a, const Var& col) {
    const Tensor& A = a.value();
    const Tensor& c = col.value();
    require_matrix(A, "add_col_broadcast");
    if (c.rank() != 1 || c.size() != A.rows()) {
        throw Error("add_col_broadcast: " + shape_string(A.shape()) + " + " +
                    shape_string(c.shape()));
    }
    Tensor out = A;
    const std::size_t m = A.rows(), n = A.cols();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += c[i];
    const Var inputs[] = {a, col};
    return graph_of(a).add_node(std::move(out), inputs, [a, col, m, n](Graph& g, const Tensor& G) {
        g.accumulate(a, G);
        if (Tensor* gc = g.grad_buffer(col)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gc)[i] += G.at(i, j);
        }
    });
}

Var relu(const Var& a) {
    Tensor out = map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; });
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs, [a](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < G.size(); ++i) {
            if (a.value()[i] > 0.0) (*ga)[i] += G[i];
        }
    });
}

Var exp(const Var& a) {
    Tensor out = map(a.value(), [](double x) { return std::exp(x); });
    Tensor y = out;
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs,
                                [a, y = std::move(y)](Graph& g, const Tensor& G) {
                                    Tensor* ga = g.grad_buffer(a);
                                    for (std::size_t i = 0; i < G.size(); ++i)
                                        (*ga)[i] += G[i] * y[i];
                                });
}

Var log(const Var& a) {
    for (double x : a.value().data()) {
        if (!(x > 0.0)) throw NumericError("log of a non-positive value");
    }
    Tensor out = map(a.value(), [](double x) { return std::log(x); });
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs, [a](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < G.size(); ++i) (*ga)[i] += G[i] / a.value()[i];
    });
}

Var sqrt(const Var& a) {
    for (double x : a.value().data()) {
        if (!(x >= 0.0)) throw NumericError("sqrt of a negative value");
    }
    Tensor out = map(a.value(), [](double x) { return std::sqrt(x); });
    const Var inputs[] = {a};
    Tensor y = out;
    return graph_of(a).add_node(std::move(out), inputs,
                                [a, y = std::move(y)](Graph& g, const Tensor& G) {
                                    Tensor* ga = g.grad_buffer(a);
                                    for (std::size_t i = 0; i < G.size(); ++i) {
                                        if (y[i] > 0.0) (*ga)[i] += G[i] * 0.5 / y[i];
                                    }
                                });
}

Var logsumexp(const Var& a) {
    const Tensor& A = a.value();
    const double v = log_sum_exp(A.data());
    const Var inputs[] = {a};
    return graph_of(a).add_node(Tensor::scalar(v), inputs, [a, v](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        const Tensor& A = a.value();
        for (std::size_t i = 0; i < A.size(); ++i) (*ga)[i] += G[0] * std::exp(A[i] - v);
    });
}

Var logsumexp_rows(const Var& a) {
    const Tensor& A = a.value();
    require_matrix(A, "logsumexp_rows");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) out[i] = log_sum_exp(A.row(i));
    Tensor lse = out;
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs,
                                [a, m, n, lse = std::move(lse)](Graph& g, const Tensor& G) {
                                    Tensor* ga = g.grad_buffer(a);
                                    const Tensor& A = a.value();
                                    for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < n; ++j)
                                            ga->at(i, j) += G[i] * std::exp(A.at(i, j) - lse[i]);
                                });
}

Var log_softmax_rows(const Var& a) {
    return add_col_broadcast(a, scale(logsumexp_rows(a), -1.0));
}

Var softmax_rows(const Var& a) { return exp(log_softmax_rows(a)); }

Var max_pool_rows(const Var& a, std::size_t first, std::size_t last) {
    const Tensor& A = a.value();
    require_matrix(A, "max_pool_rows");
    if (first > last || last >= A.rows()) {
        throw DataError("max_pool_rows: span [" + std::to_string(first) + ", " +
                        std::to_string(last) + "] outside " + std::to_string(A.rows()) + " rows");
    }
    const std::size_t n = A.cols();
    Tensor out({n});
    std::vector<std::size_t> arg(n, first);
    for (std::size_t j = 0; j < n; ++j) {
        double best = A.at(first, j);
        for (std::size_t i = first + 1; i <= last; ++i) {
            if (A.at(i, j) > best) {  // strict: ties keep the lowest row
                best = A.at(i, j);
                arg[j] = i;
            }
        }
        out[j] = best;
    }
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs,
                                [a, arg = std::move(arg)](Graph& g, const Tensor& G) {
                                    Tensor* ga = g.grad_buffer(a);
                                    for (std::size_t j = 0; j < arg.size(); ++j)
                                        ga->at(arg[j], j) += G[j];
                                });
}

Var gather_rows(const Var& table, std::span<const std::size_t> rows) {
    const Tensor& T = table.value();
    require_matrix(T, "gather_rows");
    const std::size_t d = T.cols();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] == kPadRow) continue;
        if (idx[i] >= T.rows()) {
            throw DataError("gather_rows: index " + std::to_string(idx[i]) + " out of range");
        }
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = T.at(idx[i], j);
    }
    const Var inputs[] = {table};
    return graph_of(table).add_node(std::move(out), inputs,
                                    [table, d, idx = std::move(idx)](Graph& g, const Tensor& G) {
                                        Tensor* gt = g.grad_buffer(table);
                                        for (std::size_t i = 0; i < idx.size(); ++i) {
                                            if (idx[i] == kPadRow) continue;
                                            for (std::size_t j = 0; j < d; ++j)
                                                gt->at(idx[i], j) += G.at(i, j);
                                        }
                                    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_cols: no inputs");
    const std::size_t m = parts[0].value().rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        require_matrix(p.value(), "concat_cols");
        if (p.value().rows() != m) throw Error("concat_cols: row count mismatch");
        total += p.value().cols();
    }
    Tensor out({m, total});
    std::size_t off = 0;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        offsets.push_back(off);
        const Tensor& P = p.value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < P.cols(); ++j) out.at(i, off + j) = P.at(i, j);
        off += P.cols();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return graph_of(parts[0]).add_node(
        std::move(out), ins, [ins, offsets, m, total](Graph& g, const Tensor& G) {
            for (std::size_t k = 0; k < ins.size(); ++k) {
                Tensor* gp = g.grad_buffer(ins[k]);
                if (!gp) continue;
                const std::size_t c = gp->cols();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        gp->at(i, j) += G[i * total + offsets[k] + j];
            }
        });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_rows: no inputs");
    const std::size_t n = parts[0].value().cols();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.value().rank() == 0 || p.value().cols() != n) {
            throw Error("concat_rows: column count mismatch");
        }
        total += p.value().rows();
    }
    std::vector<double> data;
    data.reserve(total * n);
    for (const Var& p : parts) {
        auto d = p.value().data();
        data.insert(data.end(), d.begin(), d.end());
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return graph_of(parts[0]).add_node(
        Tensor::matrix(total, n, std::move(data)), ins, [ins](Graph& g, const Tensor& G) {
            std::size_t off = 0;
            for (const Var& p : ins) {
                const std::size_t len = p.value().size();
                if (Tensor* gp = g.grad_buffer(p)) {
                    for (std::size_t i = 0; i < len; ++i) (*gp)[i] += G[off + i];
                }
                off += len;
            }
        });
}

Var sq_dist(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sq_dist");
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
    const Var inputs[] = {a, b};
    return graph_of(a).add_node(Tensor::scalar(s), inputs, [a, b](Graph& g, const Tensor& G) {
        const Tensor& A = a.value();
        const Tensor& B = b.value();
        Tensor* ga = g.grad_buffer(a);
        Tensor* gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < A.size(); ++i) {
            const double d = 2.0 * G[0] * (A[i] - B[i]);
            if (ga) (*ga)[i] += d;
            if (gb) (*gb)[i] -= d;
        }
    });
}

Var pairwise_sq_dist(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "pairwise_sq_dist");
    require_matrix(B, "pairwise_sq_dist");
    if (A.cols() != B.cols()) throw Error("pairwise_sq_dist: dimension mismatch");
    const std::size_t m = A.rows(), k = B.rows(), d = A.cols();
    Tensor D({m, k});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = A.at(i, c) - B.at(j, c);
                s += diff * diff;
            }
            D.at(i, j) = s;
        }
    const Var inputs[] = {a, b};
    return graph_of(a).add_node(std::move(D), inputs, [a, b, m, k, d](Graph& g, const Tensor& G) {
        const Tensor& A = a.value();
        const Tensor& B = b.value();
        Tensor* ga = g.grad_buffer(a);
        Tensor* gb = g.grad_buffer(b);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const double w = 2.0 * G.at(i, j);
                if (w == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = w * (A.at(i, c) - B.at(j, c));
                    if (ga) ga->at(i, c) += diff;
                    if (gb) gb->at(j, c) -= diff;
                }
            }
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    const Var inputs[] = {a};
    return graph_of(a).add_node(Tensor::scalar(s), inputs, [a](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        for (double& x : ga->data()) x += G[0];
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_cols(const Var& a) {
    const Tensor& A = a.value();
    require_matrix(A, "sum_cols");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += A.at(i, j);
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs, [a, m, n](Graph& g, const Tensor& G) {
        Tensor* ga = g.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga->at(i, j) += G[i];
    });
}

Var dropout(const Var& a, double p, std::uint64_t seed, bool train) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
    if (!train || p == 0.0) return a;
    Rng rng(seed);
    const double keep = 1.0 - p;
    Tensor mask(a.value().shape());
    for (double& m : mask.data()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    const Var inputs[] = {a};
    return graph_of(a).add_node(std::move(out), inputs,
                                [a, mask = std::move(mask)](Graph& g, const Tensor& G) {
                                    Tensor* ga = g.grad_buffer(a);
                                    for (std::size_t i = 0; i < G.size(); ++i)
                                        (*ga)[i] += G[i] * mask[i];
                                });
}

}  // namespace ops
}  // namespace msfner
