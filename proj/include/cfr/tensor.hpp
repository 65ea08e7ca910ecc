#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cfr/error.hpp"
#include "cfr/rng.hpp"

namespace cfr {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // nullptr for leaves

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Reverse-mode AD tensor. A Tensor is a shared handle to a graph node;
// the recorded graph is the chain of parent links, created in topological
// order by construction. All arithmetic is 64-bit.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<detail::Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        if (requires_grad) n->ensure_grad();
        return Tensor(n);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), 0.0);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        std::vector<double> d(static_cast<std::size_t>(shape_numel(shape)), v);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const { return node_->grad; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    double at(std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }
    double at(std::int64_t r, std::int64_t c) const {
        return node_->value[static_cast<std::size_t>(r * shape()[1] + c)];
    }

    void zero_grad() {
        if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Builds an op node. The backward callback receives (out_grad, out_value)
// and must accumulate into the parents' grad buffers.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(const Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (auto& t : inputs) {
        n->parents.push_back(t.node());
        if (t.node()->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad && backward) {
        Node* self = n.get();
        n->backward_fn = [self, backward]() { backward(*self); };
    }
    return Tensor(n);
}

}  // namespace detail

// Accumulates d(loss)/d(node) into every requires_grad ancestor. Grads are
// not cleared here: a second backward over the same graph adds another
// full contribution (call zero_grad between steps). `seed` scales the
// whole pass, i.e. backward(loss, w) accumulates w * dloss/dx.
inline void backward(const Tensor& loss, double seed = 1.0) {
    if (loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    using detail::Node;
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    // iterative DFS; children appended after all parents
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    // leaf grads accumulate across calls until zero_grad; interior node
    // grads are scratch space for this pass and must start clean so a later
    // backward through a shared subgraph does not re-propagate stale values
    for (Node* n : topo) {
        n->ensure_grad();
        if (n->backward_fn || !n->parents.empty()) n->grad.assign(n->grad.size(), 0.0);
    }
    loss.node()->grad[0] += seed;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// ---- elementwise arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.data()[i];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](const detail::Node& out) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *out.parents[static_cast<std::size_t>(k)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) p.grad[i] += out.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.data()[i];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](const detail::Node& out) {
        auto& pa = *out.parents[0];
        auto& pb = *out.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) pa.grad[i] += out.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) pb.grad[i] -= out.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.data()[i];
    return detail::make_op(a.shape(), std::move(v), {a, b}, [](const detail::Node& out) {
        auto& pa = *out.parents[0];
        auto& pb = *out.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) pa.grad[i] += out.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) pb.grad[i] += out.grad[i] * pa.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> v(a.data());
    for (auto& x : v) x *= c;
    return detail::make_op(a.shape(), std::move(v), {a}, [c](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) p.grad[i] += c * out.grad[i];
    });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> v(a.data());
    for (auto& x : v) x += c;
    return detail::make_op(a.shape(), std::move(v), {a}, [](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) p.grad[i] += out.grad[i];
    });
}

// Adds a length-d row vector to every row of a [T x d] matrix.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
    if (x.ndim() != 2 || row.ndim() != 1 || x.dim(1) != row.dim(0))
        throw ShapeError("add_row: " + shape_str(x.shape()) + " + " + shape_str(row.shape()));
    std::int64_t T = x.dim(0), d = x.dim(1);
    std::vector<double> v(x.data());
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t j = 0; j < d; ++j) v[static_cast<std::size_t>(t * d + j)] += row.at(j);
    return detail::make_op(x.shape(), std::move(v), {x, row}, [T, d](const detail::Node& out) {
        auto& px = *out.parents[0];
        auto& pr = *out.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) px.grad[i] += out.grad[i];
        }
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t j = 0; j < d; ++j)
                    pr.grad[static_cast<std::size_t>(j)] += out.grad[static_cast<std::size_t>(t * d + j)];
        }
    });
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    return detail::make_op({}, {s}, {a}, [](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (auto& g : p.grad) g += out.grad[0];
    });
}

inline Tensor mean(const Tensor& a) {
    double inv = 1.0 / static_cast<double>(a.numel());
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv;
    return detail::make_op({}, {s}, {a}, [inv](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (auto& g : p.grad) g += out.grad[0] * inv;
    });
}

// ---- matmul / layout ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> v(static_cast<std::size_t>(m * n), 0.0);
    const auto& A = a.data();
    const auto& B = b.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
            double av = A[static_cast<std::size_t>(i * k + p)];
            if (av == 0.0) continue;
            const double* brow = B.data() + p * n;
            double* vrow = v.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) vrow[j] += av * brow[j];
        }
    return detail::make_op({m, n}, std::move(v), {a, b}, [m, k, n](const detail::Node& out) {
        auto& pa = *out.parents[0];
        auto& pb = *out.parents[1];
        const auto& G = out.grad;
        if (pa.requires_grad) {  // dA = G * B^T
            pa.ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = G.data() + i * n;
                    const double* brow = pb.value.data() + p * n;
                    for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    pa.grad[static_cast<std::size_t>(i * k + p)] += acc;
                }
        }
        if (pb.requires_grad) {  // dB = A^T * G
            pb.ensure_grad();
            for (std::int64_t i = 0; i < m; ++i)
                for (std::int64_t p = 0; p < k; ++p) {
                    double av = pa.value[static_cast<std::size_t>(i * k + p)];
                    if (av == 0.0) continue;
                    const double* grow = G.data() + i * n;
                    double* brow = pb.grad.data() + p * n;
                    for (std::int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose expects 2-D, got " + shape_str(a.shape()));
    std::int64_t m = a.dim(0), n = a.dim(1);
    std::vector<double> v(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            v[static_cast<std::size_t>(j * m + i)] = a.at(i, j);
    return detail::make_op({n, m}, std::move(v), {a}, [m, n](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                p.grad[static_cast<std::size_t>(i * n + j)] += out.grad[static_cast<std::size_t>(j * m + i)];
    });
}

// Columns [c0, c1) of a [T x d] matrix.
inline Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") for " + shape_str(x.shape()));
    std::int64_t T = x.dim(0), d = x.dim(1), w = c1 - c0;
    std::vector<double> v(static_cast<std::size_t>(T * w));
    for (std::int64_t t = 0; t < T; ++t)
        for (std::int64_t j = 0; j < w; ++j)
            v[static_cast<std::size_t>(t * w + j)] = x.at(t, c0 + j);
    return detail::make_op({T, w}, std::move(v), {x}, [T, d, w, c0](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t j = 0; j < w; ++j)
                p.grad[static_cast<std::size_t>(t * d + c0 + j)] += out.grad[static_cast<std::size_t>(t * w + j)];
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    std::int64_t T = parts[0].dim(0), d = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != T) throw ShapeError("concat_cols: row mismatch");
        d += p.dim(1);
    }
    std::vector<double> v(static_cast<std::size_t>(T * d));
    std::int64_t off = 0;
    for (const auto& p : parts) {
        std::int64_t w = p.dim(1);
        for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t j = 0; j < w; ++j)
                v[static_cast<std::size_t>(t * d + off + j)] = p.at(t, j);
        off += w;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return detail::make_op({T, d}, std::move(v), inputs, [T, d](const detail::Node& out) {
        std::int64_t off = 0;
        for (auto& pp : out.parents) {
            std::int64_t w = pp->shape[1];
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (std::int64_t t = 0; t < T; ++t)
                    for (std::int64_t j = 0; j < w; ++j)
                        pp->grad[static_cast<std::size_t>(t * w + j)] +=
                            out.grad[static_cast<std::size_t>(t * d + off + j)];
            }
            off += w;
        }
    });
}

// Elements [c0, c1) of a 1-D tensor.
inline Tensor slice_cols_vec(const Tensor& x, std::int64_t c0, std::int64_t c1) {
    if (x.ndim() != 1 || c0 < 0 || c1 > x.dim(0) || c0 >= c1)
        throw ShapeError("slice_cols_vec: bad range for " + shape_str(x.shape()));
    std::vector<double> v(x.data().begin() + c0, x.data().begin() + c1);
    std::int64_t w = c1 - c0;
    return detail::make_op({w}, std::move(v), {x}, [c0, w](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t j = 0; j < w; ++j)
            p.grad[static_cast<std::size_t>(c0 + j)] += out.grad[static_cast<std::size_t>(j)];
    });
}

// Rows [r0, r1).
inline Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1) {
    if (x.ndim() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
        throw ShapeError("slice_rows: bad range for " + shape_str(x.shape()));
    std::int64_t d = x.dim(1), T = r1 - r0;
    std::vector<double> v(x.data().begin() + r0 * d, x.data().begin() + r1 * d);
    return detail::make_op({T, d}, std::move(v), {x}, [r0, d, T](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t i = 0; i < T * d; ++i)
            p.grad[static_cast<std::size_t>(r0 * d + i)] += out.grad[static_cast<std::size_t>(i)];
    });
}

// ---- activations ----

enum class Elementwise { Sigmoid, Swish, Relu, Exp, Log };

inline Tensor elementwise(const Tensor& x, Elementwise fn) {
    std::vector<double> v(x.data().size());
    const auto& in = x.data();
    switch (fn) {
        case Elementwise::Sigmoid:
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-in[i]));
            break;
        case Elementwise::Swish:
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[i] / (1.0 + std::exp(-in[i]));
            break;
        case Elementwise::Relu:
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[i] > 0.0 ? in[i] : 0.0;
            break;
        case Elementwise::Exp:
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(in[i]);
            break;
        case Elementwise::Log:
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (!(in[i] > 0.0))
                    throw ValueError("log of non-positive value at index " + std::to_string(i));
                v[i] = std::log(in[i]);
            }
            break;
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [fn](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            double xi = p.value[i], d = 0.0;
            switch (fn) {
                case Elementwise::Sigmoid: {
                    double s = out.value[i];
                    d = s * (1.0 - s);
                    break;
                }
                case Elementwise::Swish: {
                    double s = 1.0 / (1.0 + std::exp(-xi));
                    d = s + xi * s * (1.0 - s);
                    break;
                }
                case Elementwise::Relu:
                    d = xi > 0.0 ? 1.0 : 0.0;
                    break;
                case Elementwise::Exp:
                    d = out.value[i];
                    break;
                case Elementwise::Log:
                    d = 1.0 / xi;
                    break;
            }
            p.grad[i] += out.grad[i] * d;
        }
    });
}

inline Tensor sigmoid(const Tensor& x) { return elementwise(x, Elementwise::Sigmoid); }
inline Tensor swish(const Tensor& x) { return elementwise(x, Elementwise::Swish); }
inline Tensor relu(const Tensor& x) { return elementwise(x, Elementwise::Relu); }

// ---- softmax family (along the last axis) ----

inline Tensor softmax(const Tensor& x) {
    std::int64_t rows = x.ndim() == 2 ? x.dim(0) : 1;
    std::int64_t cols = x.ndim() == 2 ? x.dim(1) : x.numel();
    std::vector<double> v(x.data().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double* out = v.data() + r * cols;
        double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) z += (out[j] = std::exp(in[j] - mx));
        for (std::int64_t j = 0; j < cols; ++j) out[j] /= z;
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [rows, cols](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = out.value.data() + r * cols;
            const double* g = out.grad.data() + r * cols;
            double dot = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) dot += y[j] * g[j];
            for (std::int64_t j = 0; j < cols; ++j)
                p.grad[static_cast<std::size_t>(r * cols + j)] += y[j] * (g[j] - dot);
        }
    });
}

inline Tensor log_softmax(const Tensor& x) {
    std::int64_t rows = x.ndim() == 2 ? x.dim(0) : 1;
    std::int64_t cols = x.ndim() == 2 ? x.dim(1) : x.numel();
    std::vector<double> v(x.data().size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * cols;
        double* out = v.data() + r * cols;
        double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) z += std::exp(in[j] - mx);
        double lz = mx + std::log(z);
        for (std::int64_t j = 0; j < cols; ++j) out[j] = in[j] - lz;
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [rows, cols](const detail::Node& out) {
        auto& p = *out.parents[0];
        p.ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* lp = out.value.data() + r * cols;
            const double* g = out.grad.data() + r * cols;
            double gs = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) gs += g[j];
            for (std::int64_t j = 0; j < cols; ++j)
                p.grad[static_cast<std::size_t>(r * cols + j)] += g[j] - std::exp(lp[j]) * gs;
        }
    });
}

// ---- normalization ----

// Per-row normalization of a [T x d] matrix (each feature vector separately).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    if (eps <= 0.0) throw ValueError("layer_norm: eps must be positive");
    std::int64_t T = x.ndim() == 2 ? x.dim(0) : 1;
    std::int64_t d = x.ndim() == 2 ? x.dim(1) : x.numel();
    if (gamma.numel() != d || beta.numel() != d)
        throw ShapeError("layer_norm: gamma/beta width mismatch");
    std::vector<double> v(x.data().size());
    std::vector<double> xhat(x.data().size());
    std::vector<double> inv_std(static_cast<std::size_t>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        const double* in = x.data().data() + t * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(t)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            double xh = (in[j] - mu) * is;
            xhat[static_cast<std::size_t>(t * d + j)] = xh;
            v[static_cast<std::size_t>(t * d + j)] = gamma.at(j) * xh + beta.at(j);
        }
    }
    return detail::make_op(
        x.shape(), std::move(v), {x, gamma, beta},
        [T, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node& out) {
            auto& px = *out.parents[0];
            auto& pg = *out.parents[1];
            auto& pb = *out.parents[2];
            const auto& G = out.grad;
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (std::int64_t t = 0; t < T; ++t)
                    for (std::int64_t j = 0; j < d; ++j)
                        pg.grad[static_cast<std::size_t>(j)] +=
                            G[static_cast<std::size_t>(t * d + j)] * xhat[static_cast<std::size_t>(t * d + j)];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::int64_t t = 0; t < T; ++t)
                    for (std::int64_t j = 0; j < d; ++j)
                        pb.grad[static_cast<std::size_t>(j)] += G[static_cast<std::size_t>(t * d + j)];
            }
            if (px.requires_grad) {
                px.ensure_grad();
                for (std::int64_t t = 0; t < T; ++t) {
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        double gy = G[static_cast<std::size_t>(t * d + j)] * pg.value[static_cast<std::size_t>(j)];
                        sum_gy += gy;
                        sum_gyx += gy * xhat[static_cast<std::size_t>(t * d + j)];
                    }
                    double is = inv_std[static_cast<std::size_t>(t)];
                    double invd = 1.0 / static_cast<double>(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                        double gy = G[static_cast<std::size_t>(t * d + j)] * pg.value[static_cast<std::size_t>(j)];
                        double xh = xhat[static_cast<std::size_t>(t * d + j)];
                        px.grad[static_cast<std::size_t>(t * d + j)] +=
                            is * (gy - invd * sum_gy - xh * invd * sum_gyx);
                    }
                }
            }
        });
}

// ---- dropout ----

enum class Mode { Train, Eval };

// Inverted dropout: survivors scaled by 1/(1-p) so eval is the identity.
// The mask depends only on (rng.seed, counter, element index); the call
// consumes one counter value.
inline Tensor dropout(const Tensor& x, double p, RngState& rng, Mode mode) {
    if (p < 0.0 || p >= 1.0) throw ValueError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (mode == Mode::Eval || p == 0.0) {
        std::vector<double> v(x.data());
        return detail::make_op(x.shape(), std::move(v), {x}, [](const detail::Node& out) {
            auto& px = *out.parents[0];
            px.ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) px.grad[i] += out.grad[i];
        });
    }
    std::uint64_t ctr = rng.next_counter();
    double inv_keep = 1.0 / (1.0 - p);
    std::vector<double> mask(x.data().size());
    std::vector<double> v(x.data().size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        bool keep = rng_uniform(rng.seed, ctr, i) >= p;
        mask[i] = keep ? inv_keep : 0.0;
        v[i] = x.data()[i] * mask[i];
    }
    return detail::make_op(x.shape(), std::move(v), {x},
                           [mask = std::move(mask)](const detail::Node& out) {
                               auto& px = *out.parents[0];
                               px.ensure_grad();
                               for (std::size_t i = 0; i < out.grad.size(); ++i)
                                   px.grad[i] += out.grad[i] * mask[i];
                           });
}

// ---- finite differences (gradient-check oracle support) ----

// Central finite difference of f at x[i], perturbing the raw data buffer.
inline double finite_difference(const std::function<double()>& f, std::vector<double>& buf,
                                std::size_t i, double h = 1e-5) {
    double orig = buf[i];
    buf[i] = orig + h;
    double fp = f();
    buf[i] = orig - h;
    double fm = f();
    buf[i] = orig;
    return (fp - fm) / (2.0 * h);
}

}  // namespace cfr
