#pragma once

// Dense double tensors plus a tape for reverse-mode differentiation.
//
// Every operation records one node holding its output value; creation order
// is topological order, so the backward sweep is a single reverse pass that
// visits each node once. Gradients come back as a map from leaf node id to a
// tensor of the leaf's shape; leaves that do not influence the loss get an
// explicit zero gradient rather than an error.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace varident {

// thrown whenever a forward value turns non-finite (overflow, log of a
// non-positive number, division by zero); callers treat it as a numerical
// failure, distinct from configuration or I/O errors
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

struct Tensor {
    std::vector<int> shape;
    std::vector<double> values;
    bool requires_grad = false;

    Tensor() = default;

    static Tensor scalar(double v, bool grad = false) {
        Tensor t;
        t.shape = {};
        t.values = {v};
        t.requires_grad = grad;
        return t;
    }

    static Tensor vector(std::vector<double> v, bool grad = false) {
        Tensor t;
        t.shape = {static_cast<int>(v.size())};
        t.values = std::move(v);
        t.requires_grad = grad;
        return t;
    }

    static Tensor matrix(int rows, int cols, std::vector<double> v, bool grad = false) {
        if (static_cast<int>(v.size()) != rows * cols)
            throw std::invalid_argument("Tensor::matrix: value count does not match rows*cols");
        Tensor t;
        t.shape = {rows, cols};
        t.values = std::move(v);
        t.requires_grad = grad;
        return t;
    }

    static Tensor zeros(std::vector<int> shape, bool grad = false) {
        Tensor t;
        std::size_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor::zeros: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        t.shape = std::move(shape);
        t.values.assign(n, 0.0);
        t.requires_grad = grad;
        return t;
    }

    int size() const { return static_cast<int>(values.size()); }
    bool is_scalar() const { return values.size() == 1 && shape.empty(); }

    double item() const {
        if (values.size() != 1)
            throw std::invalid_argument("Tensor::item: tensor is not a scalar");
        return values[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

using NodeId = int;

// numerically safe log-sum-exp over a plain buffer
inline double logsumexp(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("logsumexp: empty input");
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

inline double logsumexp(const std::vector<double>& x) {
    return logsumexp(std::span<const double>(x.data(), x.size()));
}

class GradMap {
public:
    void insert(NodeId id, Tensor g) { grads_.emplace(id, std::move(g)); }

    bool contains(NodeId id) const { return grads_.count(id) > 0; }

    const Tensor& at(NodeId id) const {
        auto it = grads_.find(id);
        if (it == grads_.end())
            throw std::out_of_range("GradMap::at: node " + std::to_string(id) +
                                    " is not a differentiable leaf of this tape");
        return it->second;
    }

    std::size_t size() const { return grads_.size(); }

private:
    std::unordered_map<NodeId, Tensor> grads_;
};

class Tape {
    enum class Op {
        Leaf, Add, Sub, Mul, Scale, AddConst, Affine,
        Tanh, LeakyRelu, Exp, Log, Square, Abs, Clamp,
        Sum, Mean, SumSq, L2Norm, DivScalar,
        Concat, Slice, Row, Element,
        LogSumExp, SoftmaxXent, GroupMax, GroupMean,
    };

    struct Node {
        Op op;
        std::vector<NodeId> in;
        Tensor value;
        double a0 = 0.0; // op constant (scale factor, slope, clamp lo)
        double a1 = 0.0; // clamp hi
        int i0 = 0;      // row / element / target / group / slice offset
        int i1 = 0;      // slice length
        std::vector<int> arg; // winner indices for GroupMax
    };

public:
    NodeId leaf(Tensor t) {
        return push(Node{Op::Leaf, {}, std::move(t)});
    }

    NodeId constant(double v) { return leaf(Tensor::scalar(v)); }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_same_shape(ta, tb, "add");
        Tensor out = ta;
        out.requires_grad = false;
        for (int i = 0; i < out.size(); ++i) out.values[i] += tb.values[i];
        return push(Node{Op::Add, {a, b}, std::move(out)});
    }

    NodeId sub(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_same_shape(ta, tb, "sub");
        Tensor out = ta;
        out.requires_grad = false;
        for (int i = 0; i < out.size(); ++i) out.values[i] -= tb.values[i];
        return push(Node{Op::Sub, {a, b}, std::move(out)});
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_same_shape(ta, tb, "mul");
        Tensor out = ta;
        out.requires_grad = false;
        for (int i = 0; i < out.size(); ++i) out.values[i] *= tb.values[i];
        return push(Node{Op::Mul, {a, b}, std::move(out)});
    }

    NodeId scale(NodeId a, double c) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v *= c;
        Node n{Op::Scale, {a}, std::move(out)};
        n.a0 = c;
        return push(std::move(n));
    }

    NodeId add_const(NodeId a, double c) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v += c;
        Node n{Op::AddConst, {a}, std::move(out)};
        n.a0 = c;
        return push(std::move(n));
    }

    // y = W x + b with W row-major {m, n}, x {n}, b {m}
    NodeId affine(NodeId w, NodeId x, NodeId b) {
        const Tensor& tw = value(w);
        const Tensor& tx = value(x);
        const Tensor& tb = value(b);
        if (tw.shape.size() != 2)
            throw std::invalid_argument("affine: weight must be a matrix");
        const int m = tw.shape[0];
        const int n = tw.shape[1];
        if (tx.size() != n) throw std::invalid_argument("affine: input length mismatch");
        if (tb.size() != m) throw std::invalid_argument("affine: bias length mismatch");
        Tensor out = Tensor::zeros({m});
        for (int i = 0; i < m; ++i) {
            double s = tb.values[i];
            const double* wrow = tw.values.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) s += wrow[j] * tx.values[j];
            out.values[i] = s;
        }
        return push(Node{Op::Affine, {w, x, b}, std::move(out)});
    }

    NodeId tanh(NodeId a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v = std::tanh(v);
        return push(Node{Op::Tanh, {a}, std::move(out)});
    }

    NodeId leaky_relu(NodeId a, double slope) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v = v > 0.0 ? v : slope * v;
        Node n{Op::LeakyRelu, {a}, std::move(out)};
        n.a0 = slope;
        return push(std::move(n));
    }

    // hinge [x]+ with exact zero gradient over the whole inactive region
    NodeId relu(NodeId a) { return leaky_relu(a, 0.0); }

    NodeId exp(NodeId a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v = std::exp(v);
        return push(Node{Op::Exp, {a}, std::move(out)});
    }

    NodeId log(NodeId a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) {
            if (v <= 0.0) throw numerical_error("log: non-positive input");
            v = std::log(v);
        }
        return push(Node{Op::Log, {a}, std::move(out)});
    }

    NodeId square(NodeId a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v = v * v;
        return push(Node{Op::Square, {a}, std::move(out)});
    }

    NodeId abs(NodeId a) {
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v = std::abs(v);
        return push(Node{Op::Abs, {a}, std::move(out)});
    }

    NodeId clamp(NodeId a, double lo, double hi) {
        if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v = std::min(std::max(v, lo), hi);
        Node n{Op::Clamp, {a}, std::move(out)};
        n.a0 = lo;
        n.a1 = hi;
        return push(std::move(n));
    }

    NodeId sum(NodeId a) {
        double s = 0.0;
        for (double v : value(a).values) s += v;
        return push(Node{Op::Sum, {a}, Tensor::scalar(s)});
    }

    NodeId mean(NodeId a) {
        const Tensor& ta = value(a);
        if (ta.size() == 0) throw std::invalid_argument("mean: empty input");
        double s = 0.0;
        for (double v : ta.values) s += v;
        return push(Node{Op::Mean, {a}, Tensor::scalar(s / ta.size())});
    }

    NodeId sumsq(NodeId a) {
        double s = 0.0;
        for (double v : value(a).values) s += v * v;
        return push(Node{Op::SumSq, {a}, Tensor::scalar(s)});
    }

    NodeId l2norm(NodeId a) {
        double s = 0.0;
        for (double v : value(a).values) s += v * v;
        const double norm = std::sqrt(s);
        if (norm == 0.0)
            throw std::domain_error("l2norm: zero vector has no normalization direction");
        return push(Node{Op::L2Norm, {a}, Tensor::scalar(norm)});
    }

    // elementwise a / s where s is a scalar node
    NodeId div_scalar(NodeId a, NodeId s) {
        const Tensor& ts = value(s);
        if (!ts.is_scalar() && ts.size() != 1)
            throw std::invalid_argument("div_scalar: divisor must be scalar");
        const double sv = ts.values[0];
        Tensor out = value(a);
        out.requires_grad = false;
        for (double& v : out.values) v /= sv;
        return push(Node{Op::DivScalar, {a, s}, std::move(out)});
    }

    NodeId concat(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        Tensor out;
        int total = 0;
        for (NodeId p : parts) total += value(p).size();
        out.shape = {total};
        out.values.reserve(static_cast<std::size_t>(total));
        for (NodeId p : parts)
            for (double v : value(p).values) out.values.push_back(v);
        return push(Node{Op::Concat, parts, std::move(out)});
    }

    NodeId slice(NodeId a, int offset, int len) {
        const Tensor& ta = value(a);
        if (offset < 0 || len < 0 || offset + len > ta.size())
            throw std::invalid_argument("slice: range out of bounds");
        Tensor out = Tensor::zeros({len});
        for (int i = 0; i < len; ++i) out.values[i] = ta.values[offset + i];
        Node n{Op::Slice, {a}, std::move(out)};
        n.i0 = offset;
        n.i1 = len;
        return push(std::move(n));
    }

    NodeId row(NodeId mat, int r) {
        const Tensor& tm = value(mat);
        if (tm.shape.size() != 2) throw std::invalid_argument("row: input must be a matrix");
        const int rows = tm.shape[0];
        const int cols = tm.shape[1];
        if (r < 0 || r >= rows) throw std::invalid_argument("row: index out of range");
        Tensor out = Tensor::zeros({cols});
        for (int j = 0; j < cols; ++j)
            out.values[j] = tm.values[static_cast<std::size_t>(r) * cols + j];
        Node n{Op::Row, {mat}, std::move(out)};
        n.i0 = r;
        return push(std::move(n));
    }

    NodeId element(NodeId vec, int i) {
        const Tensor& tv = value(vec);
        if (i < 0 || i >= tv.size()) throw std::invalid_argument("element: index out of range");
        Node n{Op::Element, {vec}, Tensor::scalar(tv.values[i])};
        n.i0 = i;
        return push(std::move(n));
    }

    NodeId logsumexp(NodeId a) {
        const Tensor& ta = value(a);
        if (ta.size() == 0) throw std::invalid_argument("logsumexp: empty input");
        const double v = varident::logsumexp(
            std::span<const double>(ta.values.data(), ta.values.size()));
        return push(Node{Op::LogSumExp, {a}, Tensor::scalar(v)});
    }

    // cross-entropy of a softmax over raw logits against an integer target:
    // logsumexp(z) - z[target]
    NodeId softmax_cross_entropy(NodeId logits, int target) {
        const Tensor& tl = value(logits);
        if (target < 0 || target >= tl.size())
            throw std::invalid_argument("softmax_cross_entropy: target out of range");
        const double lse = varident::logsumexp(
            std::span<const double>(tl.values.data(), tl.values.size()));
        Node n{Op::SoftmaxXent, {logits}, Tensor::scalar(lse - tl.values[target])};
        n.i0 = target;
        return push(std::move(n));
    }

    // max over consecutive blocks of `group` elements; ties go to the first
    // maximal element so the backward pass is deterministic
    NodeId group_max(NodeId a, int group) {
        const Tensor& ta = value(a);
        if (group <= 0 || ta.size() % group != 0)
            throw std::invalid_argument("group_max: length not divisible by group");
        const int out_len = ta.size() / group;
        Tensor out = Tensor::zeros({out_len});
        std::vector<int> arg(static_cast<std::size_t>(out_len));
        for (int k = 0; k < out_len; ++k) {
            int best = k * group;
            for (int j = 1; j < group; ++j) {
                const int idx = k * group + j;
                if (ta.values[idx] > ta.values[best]) best = idx;
            }
            out.values[k] = ta.values[best];
            arg[static_cast<std::size_t>(k)] = best;
        }
        Node n{Op::GroupMax, {a}, std::move(out)};
        n.i0 = group;
        n.arg = std::move(arg);
        return push(std::move(n));
    }

    NodeId group_mean(NodeId a, int group) {
        const Tensor& ta = value(a);
        if (group <= 0 || ta.size() % group != 0)
            throw std::invalid_argument("group_mean: length not divisible by group");
        const int out_len = ta.size() / group;
        Tensor out = Tensor::zeros({out_len});
        for (int k = 0; k < out_len; ++k) {
            double s = 0.0;
            for (int j = 0; j < group; ++j) s += ta.values[k * group + j];
            out.values[k] = s / group;
        }
        Node n{Op::GroupMean, {a}, std::move(out)};
        n.i0 = group;
        return push(std::move(n));
    }

    const Tensor& value(NodeId id) const {
        check_id(id);
        return nodes_[static_cast<std::size_t>(id)].value;
    }

    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss. Returns gradients for every
    // requires_grad leaf on this tape; leaves the loss never touched get
    // exact zeros.
    GradMap backward(NodeId loss) const {
        check_id(loss);
        const Node& ln = nodes_[static_cast<std::size_t>(loss)];
        if (ln.value.size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar node");

        std::vector<std::vector<double>> adj(nodes_.size());
        touch(adj, loss)[0] = 1.0;

        for (NodeId id = loss; id >= 0; --id) {
            const auto& g = adj[static_cast<std::size_t>(id)];
            if (g.empty()) continue;
            propagate(nodes_[static_cast<std::size_t>(id)], g, adj);
        }

        GradMap out;
        for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.op != Op::Leaf || !n.value.requires_grad) continue;
            Tensor g = Tensor::zeros(n.value.shape);
            const auto& a = adj[static_cast<std::size_t>(id)];
            if (!a.empty()) g.values = a;
            out.insert(id, std::move(g));
        }
        return out;
    }

private:
    std::vector<Node> nodes_;

    NodeId push(Node n) {
        if (n.op != Op::Leaf && !n.value.all_finite())
            throw numerical_error("non-finite value produced by forward op");
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void check_id(NodeId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw std::out_of_range("Tape: node id out of range");
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (!a.same_shape(b))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    std::vector<double>& touch(std::vector<std::vector<double>>& adj, NodeId id) const {
        auto& a = adj[static_cast<std::size_t>(id)];
        if (a.empty())
            a.assign(nodes_[static_cast<std::size_t>(id)].value.values.size(), 0.0);
        return a;
    }

    void propagate(const Node& n, const std::vector<double>& g,
                   std::vector<std::vector<double>>& adj) const {
        switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            auto& da = touch(adj, n.in[0]);
            auto& db = touch(adj, n.in[1]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i];
                db[i] += g[i];
            }
            break;
        }
        case Op::Sub: {
            auto& da = touch(adj, n.in[0]);
            auto& db = touch(adj, n.in[1]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i];
                db[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            const auto& va = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            const auto& vb = nodes_[static_cast<std::size_t>(n.in[1])].value.values;
            auto& da = touch(adj, n.in[0]);
            auto& db = touch(adj, n.in[1]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] * vb[i];
                db[i] += g[i] * va[i];
            }
            break;
        }
        case Op::Scale: {
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.a0 * g[i];
            break;
        }
        case Op::AddConst: {
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            break;
        }
        case Op::Affine: {
            const Tensor& tw = nodes_[static_cast<std::size_t>(n.in[0])].value;
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[1])].value.values;
            const int m = tw.shape[0];
            const int nn = tw.shape[1];
            auto& dw = touch(adj, n.in[0]);
            auto& dx = touch(adj, n.in[1]);
            auto& db = touch(adj, n.in[2]);
            for (int i = 0; i < m; ++i) {
                const double gi = g[static_cast<std::size_t>(i)];
                if (gi == 0.0) continue;
                const std::size_t off = static_cast<std::size_t>(i) * nn;
                for (int j = 0; j < nn; ++j) {
                    dw[off + j] += gi * vx[static_cast<std::size_t>(j)];
                    dx[static_cast<std::size_t>(j)] += gi * tw.values[off + j];
                }
                db[static_cast<std::size_t>(i)] += gi;
            }
            break;
        }
        case Op::Tanh: {
            const auto& vy = n.value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                da[i] += g[i] * (1.0 - vy[i] * vy[i]);
            break;
        }
        case Op::LeakyRelu: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                da[i] += g[i] * (vx[i] > 0.0 ? 1.0 : n.a0);
            break;
        }
        case Op::Exp: {
            const auto& vy = n.value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * vy[i];
            break;
        }
        case Op::Log: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / vx[i];
            break;
        }
        case Op::Square: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += 2.0 * vx[i] * g[i];
            break;
        }
        case Op::Abs: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = vx[i] > 0.0 ? 1.0 : (vx[i] < 0.0 ? -1.0 : 0.0);
                da[i] += g[i] * s;
            }
            break;
        }
        case Op::Clamp: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (vx[i] > n.a0 && vx[i] < n.a1) da[i] += g[i];
            break;
        }
        case Op::Sum: {
            auto& da = touch(adj, n.in[0]);
            for (double& d : da) d += g[0];
            break;
        }
        case Op::Mean: {
            auto& da = touch(adj, n.in[0]);
            const double s = g[0] / static_cast<double>(da.size());
            for (double& d : da) d += s;
            break;
        }
        case Op::SumSq: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += 2.0 * vx[i] * g[0];
            break;
        }
        case Op::L2Norm: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            const double norm = n.value.values[0];
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0] * vx[i] / norm;
            break;
        }
        case Op::DivScalar: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            const double sv = nodes_[static_cast<std::size_t>(n.in[1])].value.values[0];
            auto& da = touch(adj, n.in[0]);
            auto& ds = touch(adj, n.in[1]);
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] / sv;
                acc += g[i] * vx[i];
            }
            ds[0] -= acc / (sv * sv);
            break;
        }
        case Op::Concat: {
            std::size_t off = 0;
            for (NodeId p : n.in) {
                auto& dp = touch(adj, p);
                for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[off + i];
                off += dp.size();
            }
            break;
        }
        case Op::Slice: {
            auto& da = touch(adj, n.in[0]);
            for (int i = 0; i < n.i1; ++i)
                da[static_cast<std::size_t>(n.i0 + i)] += g[static_cast<std::size_t>(i)];
            break;
        }
        case Op::Row: {
            const Tensor& tm = nodes_[static_cast<std::size_t>(n.in[0])].value;
            const int cols = tm.shape[1];
            auto& dm = touch(adj, n.in[0]);
            const std::size_t off = static_cast<std::size_t>(n.i0) * cols;
            for (int j = 0; j < cols; ++j) dm[off + j] += g[static_cast<std::size_t>(j)];
            break;
        }
        case Op::Element: {
            auto& dv = touch(adj, n.in[0]);
            dv[static_cast<std::size_t>(n.i0)] += g[0];
            break;
        }
        case Op::LogSumExp: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            const double y = n.value.values[0];
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < da.size(); ++i)
                da[i] += g[0] * std::exp(vx[i] - y);
            break;
        }
        case Op::SoftmaxXent: {
            const auto& vx = nodes_[static_cast<std::size_t>(n.in[0])].value.values;
            const double lse = n.value.values[0] + vx[static_cast<std::size_t>(n.i0)];
            auto& da = touch(adj, n.in[0]);
            for (std::size_t i = 0; i < da.size(); ++i) {
                double p = std::exp(vx[i] - lse);
                if (static_cast<int>(i) == n.i0) p -= 1.0;
                da[i] += g[0] * p;
            }
            break;
        }
        case Op::GroupMax: {
            auto& da = touch(adj, n.in[0]);
            for (std::size_t k = 0; k < n.arg.size(); ++k)
                da[static_cast<std::size_t>(n.arg[k])] += g[k];
            break;
        }
        case Op::GroupMean: {
            auto& da = touch(adj, n.in[0]);
            const double inv = 1.0 / n.i0;
            for (std::size_t k = 0; k < g.size(); ++k)
                for (int j = 0; j < n.i0; ++j)
                    da[k * static_cast<std::size_t>(n.i0) + j] += g[k] * inv;
            break;
        }
        }
    }
};

// spec-level convenience: run the backward sweep for a scalar loss
inline GradMap forward_backward(const Tape& tape, NodeId loss) {
    return tape.backward(loss);
}

} // namespace varident
