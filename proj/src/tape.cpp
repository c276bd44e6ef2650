#include "glyphflow/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace glyphflow::core {

namespace {

constexpr double kRmsEps = 1e-12;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("tape: " + msg); }

void matmul_forward(const Tensor& a, const Tensor& b, Tensor& c) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (int i = 0; i < m; ++i) {
        double* crow = pc + static_cast<std::size_t>(i) * n;
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) {
                continue;
            }
            const double* brow = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// dA[i,k] += sum_j dC[i,j] * B[k,j]
void matmul_grad_a(const Tensor& dc, const Tensor& b, Tensor& da) {
    const int m = da.rows(), k = da.cols(), n = b.cols();
    for (int i = 0; i < m; ++i) {
        const double* dcrow = dc.data() + static_cast<std::size_t>(i) * n;
        double* darow = da.data() + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double* brow = b.data() + static_cast<std::size_t>(kk) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                acc += dcrow[j] * brow[j];
            }
            darow[kk] += acc;
        }
    }
}

// dB[k,j] += sum_i A[i,k] * dC[i,j]
void matmul_grad_b(const Tensor& a, const Tensor& dc, Tensor& db) {
    const int m = a.rows(), k = a.cols(), n = db.cols();
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data() + static_cast<std::size_t>(i) * k;
        const double* dcrow = dc.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) {
                continue;
            }
            double* dbrow = db.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                dbrow[j] += av * dcrow[j];
            }
        }
    }
}

} // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::input: return "input";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::reshape: return "reshape";
        case Op::concat: return "concat";
        case Op::slice: return "slice";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::softmax: return "softmax";
        case Op::rms_norm: return "rms-norm";
        case Op::silu: return "silu";
        case Op::sigmoid: return "sigmoid";
        case Op::log: return "log";
        case Op::exp: return "exp";
        case Op::square: return "square";
        case Op::scale: return "scalar-scale";
        case Op::gather: return "embedding-gather";
        case Op::rotate_pairs: return "rotate-pairs";
    }
    return "?";
}

void Tape::check(Val v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        fail("dangling node handle");
    }
}

Val Tape::push(Node node) {
    compute(node);
    nodes_.push_back(std::move(node));
    return Val{static_cast<int>(nodes_.size()) - 1};
}

Val Tape::input(const std::string& name, Tensor value, bool requires_grad) {
    if (input_ids_.count(name) != 0) {
        fail("duplicate input name '" + name + "'");
    }
    Node n;
    n.op = Op::input;
    n.value = std::move(value);
    n.name = name;
    n.needs_grad = requires_grad;
    Val v{static_cast<int>(nodes_.size())};
    nodes_.push_back(std::move(n));
    input_ids_[name] = v.id;
    return v;
}

Val Tape::constant(Tensor value) {
    Node n;
    n.op = Op::input;
    n.value = std::move(value);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1};
}

#define GF_BINARY(fn, opk)                                        \
    Val Tape::fn(Val a, Val b) {                                  \
        check(a);                                                 \
        check(b);                                                 \
        Node n;                                                   \
        n.op = opk;                                               \
        n.in = {a.id, b.id};                                      \
        n.needs_grad = node(a).needs_grad || node(b).needs_grad;  \
        return push(std::move(n));                                \
    }

GF_BINARY(add, Op::add)
GF_BINARY(sub, Op::sub)
GF_BINARY(mul, Op::mul)
GF_BINARY(matmul, Op::matmul)
#undef GF_BINARY

#define GF_UNARY(fn, opk)                        \
    Val Tape::fn(Val a) {                        \
        check(a);                                \
        Node n;                                  \
        n.op = opk;                              \
        n.in = {a.id, -1};                       \
        n.needs_grad = node(a).needs_grad;       \
        return push(std::move(n));               \
    }

GF_UNARY(transpose, Op::transpose)
GF_UNARY(sum, Op::sum)
GF_UNARY(mean, Op::mean)
GF_UNARY(softmax, Op::softmax)
GF_UNARY(rms_norm, Op::rms_norm)
GF_UNARY(silu, Op::silu)
GF_UNARY(sigmoid, Op::sigmoid)
GF_UNARY(log, Op::log)
GF_UNARY(exp, Op::exp)
GF_UNARY(square, Op::square)
#undef GF_UNARY

Val Tape::reshape(Val a, Shape shape) {
    check(a);
    if (shape_numel(shape) != node(a).value.numel()) {
        fail("reshape " + node(a).value.shape_str() + " -> " + shape_to_string(shape) + " changes element count");
    }
    Node n;
    n.op = Op::reshape;
    n.in = {a.id, -1};
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(shape); // target shape carried via value allocation
    return push(std::move(n));
}

Val Tape::concat(Val a, Val b, int axis) {
    check(a);
    check(b);
    Node n;
    n.op = Op::concat;
    n.in = {a.id, b.id};
    n.axis = axis;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Val Tape::slice(Val a, int axis, int start, int len) {
    check(a);
    Node n;
    n.op = Op::slice;
    n.in = {a.id, -1};
    n.axis = axis;
    n.start = start;
    n.len = len;
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Val Tape::scale(Val a, double c) {
    check(a);
    Node n;
    n.op = Op::scale;
    n.in = {a.id, -1};
    n.c0 = c;
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

Val Tape::gather(Val table, std::vector<std::int64_t> row_ids) {
    check(table);
    Node n;
    n.op = Op::gather;
    n.in = {table.id, -1};
    n.indices = std::move(row_ids);
    n.needs_grad = node(table).needs_grad;
    return push(std::move(n));
}

Val Tape::rotate_pairs(Val a, Tensor cos_table, Tensor sin_table) {
    check(a);
    Node n;
    n.op = Op::rotate_pairs;
    n.in = {a.id, -1};
    n.cos_table = std::move(cos_table);
    n.sin_table = std::move(sin_table);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
}

void Tape::compute(Node& n) {
    auto in0 = [&]() -> const Tensor& { return nodes_[static_cast<std::size_t>(n.in[0])].value; };
    auto in1 = [&]() -> const Tensor& { return nodes_[static_cast<std::size_t>(n.in[1])].value; };

    switch (n.op) {
        case Op::input:
            break;
        case Op::add:
        case Op::sub:
        case Op::mul: {
            const Tensor& av = in0();
            const Tensor& b = in1();
            if (!av.same_shape(b)) {
                fail(std::string(op_name(n.op)) + " shape mismatch " + av.shape_str() + " vs " + b.shape_str());
            }
            n.value = Tensor(av.shape());
            const std::int64_t m = av.numel();
            if (n.op == Op::add) {
                for (std::int64_t i = 0; i < m; ++i) n.value[i] = av[i] + b[i];
            } else if (n.op == Op::sub) {
                for (std::int64_t i = 0; i < m; ++i) n.value[i] = av[i] - b[i];
            } else {
                for (std::int64_t i = 0; i < m; ++i) n.value[i] = av[i] * b[i];
            }
            break;
        }
        case Op::matmul: {
            const Tensor& a = in0();
            const Tensor& b = in1();
            if (a.shape().size() != 2 || b.shape().size() != 2) {
                fail("matmul requires 2-D operands, got " + a.shape_str() + " x " + b.shape_str());
            }
            if (a.cols() != b.rows()) {
                fail("matmul inner dimension mismatch " + a.shape_str() + " x " + b.shape_str());
            }
            n.value = Tensor({a.rows(), b.cols()});
            matmul_forward(a, b, n.value);
            break;
        }
        case Op::transpose: {
            const Tensor& a = in0();
            if (a.shape().size() != 2) {
                fail("transpose requires 2-D operand");
            }
            n.value = Tensor({a.cols(), a.rows()});
            for (int i = 0; i < a.rows(); ++i) {
                for (int j = 0; j < a.cols(); ++j) {
                    n.value.at(j, i) = a.at(i, j);
                }
            }
            break;
        }
        case Op::reshape: {
            Shape target = n.value.shape();
            n.value = Tensor(std::move(target), in0().vec());
            break;
        }
        case Op::concat: {
            const Tensor& a = in0();
            const Tensor& b = in1();
            if (n.axis == 0) {
                if (a.cols() != b.cols()) {
                    fail("concat axis 0 column mismatch");
                }
                n.value = Tensor({a.rows() + b.rows(), a.cols()});
                std::copy(a.data(), a.data() + a.numel(), n.value.data());
                std::copy(b.data(), b.data() + b.numel(), n.value.data() + a.numel());
            } else if (n.axis == 1) {
                if (a.rows() != b.rows()) {
                    fail("concat axis 1 row mismatch");
                }
                n.value = Tensor({a.rows(), a.cols() + b.cols()});
                for (int i = 0; i < a.rows(); ++i) {
                    for (int j = 0; j < a.cols(); ++j) n.value.at(i, j) = a.at(i, j);
                    for (int j = 0; j < b.cols(); ++j) n.value.at(i, a.cols() + j) = b.at(i, j);
                }
            } else {
                fail("concat axis must be 0 or 1");
            }
            break;
        }
        case Op::slice: {
            const Tensor& a = in0();
            const int r = a.rows(), c = a.cols();
            if (n.axis == 0) {
                if (n.start < 0 || n.len < 0 || n.start + n.len > r) {
                    fail("slice rows out of range");
                }
                n.value = Tensor({n.len, c});
                std::copy(a.data() + static_cast<std::size_t>(n.start) * c,
                          a.data() + static_cast<std::size_t>(n.start + n.len) * c, n.value.data());
            } else if (n.axis == 1) {
                if (n.start < 0 || n.len < 0 || n.start + n.len > c) {
                    fail("slice cols out of range");
                }
                n.value = Tensor({r, n.len});
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < n.len; ++j) {
                        n.value.at(i, j) = a.at(i, n.start + j);
                    }
                }
            } else {
                fail("slice axis must be 0 or 1");
            }
            break;
        }
        case Op::sum:
        case Op::mean: {
            const Tensor& a = in0();
            double acc = 0.0;
            for (std::int64_t i = 0; i < a.numel(); ++i) acc += a[i];
            if (n.op == Op::mean) {
                if (a.numel() == 0) {
                    fail("mean of empty tensor");
                }
                acc /= static_cast<double>(a.numel());
            }
            n.value = Tensor::scalar(acc);
            break;
        }
        case Op::softmax: {
            const Tensor& a = in0();
            const int r = a.rows(), c = a.cols();
            n.value = Tensor(a.shape());
            for (int i = 0; i < r; ++i) {
                const double* row = a.data() + static_cast<std::size_t>(i) * c;
                double* out = n.value.data() + static_cast<std::size_t>(i) * c;
                double mx = row[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (int j = 0; j < c; ++j) {
                    out[j] = std::exp(row[j] - mx);
                    denom += out[j];
                }
                for (int j = 0; j < c; ++j) out[j] /= denom;
                if (!std::isfinite(denom) || denom == 0.0) {
                    fail("softmax produced non-finite row (node " + std::to_string(nodes_.size()) + ")");
                }
            }
            break;
        }
        case Op::rms_norm: {
            const Tensor& a = in0();
            const int r = a.rows(), c = a.cols();
            n.value = Tensor(a.shape());
            for (int i = 0; i < r; ++i) {
                const double* row = a.data() + static_cast<std::size_t>(i) * c;
                double* out = n.value.data() + static_cast<std::size_t>(i) * c;
                double ms = 0.0;
                for (int j = 0; j < c; ++j) ms += row[j] * row[j];
                ms /= static_cast<double>(c);
                const double inv = 1.0 / std::sqrt(ms + kRmsEps);
                if (!std::isfinite(inv)) {
                    fail("rms-norm produced non-finite row");
                }
                for (int j = 0; j < c; ++j) out[j] = row[j] * inv;
            }
            break;
        }
        case Op::silu: {
            const Tensor& a = in0();
            n.value = Tensor(a.shape());
            for (std::int64_t i = 0; i < a.numel(); ++i) {
                n.value[i] = a[i] / (1.0 + std::exp(-a[i]));
            }
            break;
        }
        case Op::sigmoid: {
            const Tensor& a = in0();
            n.value = Tensor(a.shape());
            for (std::int64_t i = 0; i < a.numel(); ++i) {
                n.value[i] = 1.0 / (1.0 + std::exp(-a[i]));
            }
            break;
        }
        case Op::log: {
            const Tensor& a = in0();
            n.value = Tensor(a.shape());
            for (std::int64_t i = 0; i < a.numel(); ++i) {
                if (!(a[i] > 0.0)) {
                    fail("log of non-positive value at element " + std::to_string(i));
                }
                n.value[i] = std::log(a[i]);
            }
            break;
        }
        case Op::exp: {
            const Tensor& a = in0();
            n.value = Tensor(a.shape());
            for (std::int64_t i = 0; i < a.numel(); ++i) {
                n.value[i] = std::exp(a[i]);
                if (!std::isfinite(n.value[i])) {
                    fail("exp overflow at element " + std::to_string(i));
                }
            }
            break;
        }
        case Op::square: {
            const Tensor& a = in0();
            n.value = Tensor(a.shape());
            for (std::int64_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] * a[i];
            break;
        }
        case Op::scale: {
            const Tensor& a = in0();
            n.value = Tensor(a.shape());
            for (std::int64_t i = 0; i < a.numel(); ++i) n.value[i] = n.c0 * a[i];
            break;
        }
        case Op::gather: {
            const Tensor& table = in0();
            const int c = table.cols();
            n.value = Tensor({static_cast<int>(n.indices.size()), c});
            for (std::size_t r = 0; r < n.indices.size(); ++r) {
                const std::int64_t id = n.indices[r];
                if (id < 0 || id >= table.rows()) {
                    fail("gather row " + std::to_string(id) + " out of range for table " + table.shape_str());
                }
                std::copy(table.data() + id * c, table.data() + (id + 1) * c, n.value.data() + r * c);
            }
            break;
        }
        case Op::rotate_pairs: {
            const Tensor& a = in0();
            const int r = a.rows(), c = a.cols();
            if (c % 2 != 0) {
                fail("rotate-pairs requires an even number of columns");
            }
            if (n.cos_table.rows() != r || n.cos_table.cols() != c / 2 || !n.cos_table.same_shape(n.sin_table)) {
                fail("rotate-pairs angle tables must be [rows, cols/2]");
            }
            n.value = Tensor(a.shape());
            for (int i = 0; i < r; ++i) {
                for (int p = 0; p < c / 2; ++p) {
                    const double cv = n.cos_table.at(i, p);
                    const double sv = n.sin_table.at(i, p);
                    const double x0 = a.at(i, 2 * p);
                    const double x1 = a.at(i, 2 * p + 1);
                    n.value.at(i, 2 * p) = cv * x0 - sv * x1;
                    n.value.at(i, 2 * p + 1) = sv * x0 + cv * x1;
                }
            }
            break;
        }
    }
}

const Tensor& Tape::value(Val v) const {
    check(v);
    return node(v).value;
}

double Tape::scalar_value(Val v) const {
    const Tensor& t = value(v);
    if (!t.is_scalar()) {
        fail("expected scalar, got " + t.shape_str());
    }
    return t[0];
}

void Tape::rebind(const std::string& name, Tensor value) {
    auto it = input_ids_.find(name);
    if (it == input_ids_.end()) {
        fail("rebind of unknown input '" + name + "'");
    }
    Node& n = nodes_[static_cast<std::size_t>(it->second)];
    if (!n.value.same_shape(value)) {
        fail("rebind shape mismatch for '" + name + "'");
    }
    n.value = std::move(value);
}

void Tape::recompute() {
    for (Node& n : nodes_) {
        if (n.op == Op::reshape) {
            Shape target = n.value.shape();
            n.value = Tensor(std::move(target), nodes_[static_cast<std::size_t>(n.in[0])].value.vec());
        } else if (n.op != Op::input) {
            compute(n);
        }
    }
}

std::map<std::string, Tensor> Tape::backward(Val loss) {
    check(loss);
    if (!node(loss).value.is_scalar()) {
        fail("backward requires a scalar loss node, got " + node(loss).value.shape_str());
    }
    for (Node& n : nodes_) {
        n.grad_live = false;
    }
    Node& l = mutable_node(loss);
    l.grad = Tensor::scalar(1.0);
    l.grad_live = true;
    std::map<std::string, Tensor> out;
    backward_sweep(out);
    return out;
}

std::map<std::string, Tensor> Tape::backward_seeded(const std::vector<std::pair<Val, Tensor>>& seeds) {
    for (Node& n : nodes_) {
        n.grad_live = false;
    }
    for (const auto& [v, seed] : seeds) {
        check(v);
        Node& n = mutable_node(v);
        if (!n.value.same_shape(seed)) {
            fail("seed shape mismatch at node " + std::to_string(v.id));
        }
        if (!n.grad_live) {
            n.grad = seed;
            n.grad_live = true;
        } else {
            for (std::int64_t i = 0; i < seed.numel(); ++i) n.grad[i] += seed[i];
        }
    }
    std::map<std::string, Tensor> out;
    backward_sweep(out);
    return out;
}

Tensor Tape::grad_at(Val v) const {
    check(v);
    const Node& n = node(v);
    if (!n.grad_live) {
        return Tensor::zeros(n.value.shape());
    }
    return n.grad;
}

void Tape::backward_sweep(std::map<std::string, Tensor>& out) {
    auto ensure_grad = [&](int id) -> Tensor& {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live) {
            n.grad = Tensor::zeros(n.value.shape());
            n.grad_live = true;
        }
        return n.grad;
    };

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_live || n.op == Op::input) {
            continue;
        }
        const Tensor& g = n.grad;
        const int i0 = n.in[0];
        const int i1 = n.in[1];
        const bool need0 = i0 >= 0 && nodes_[static_cast<std::size_t>(i0)].needs_grad;
        const bool need1 = i1 >= 0 && nodes_[static_cast<std::size_t>(i1)].needs_grad;
        if (!need0 && !need1) {
            continue;
        }
        const Tensor& a = nodes_[static_cast<std::size_t>(i0)].value;

        switch (n.op) {
            case Op::input:
                break;
            case Op::add: {
                if (need0) {
                    Tensor& da = ensure_grad(i0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
                }
                if (need1) {
                    Tensor& db = ensure_grad(i1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) db[i] += g[i];
                }
                break;
            }
            case Op::sub: {
                if (need0) {
                    Tensor& da = ensure_grad(i0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
                }
                if (need1) {
                    Tensor& db = ensure_grad(i1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) db[i] -= g[i];
                }
                break;
            }
            case Op::mul: {
                const Tensor& b = nodes_[static_cast<std::size_t>(i1)].value;
                if (need0) {
                    Tensor& da = ensure_grad(i0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * b[i];
                }
                if (need1) {
                    Tensor& db = ensure_grad(i1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) db[i] += g[i] * a[i];
                }
                break;
            }
            case Op::matmul: {
                const Tensor& b = nodes_[static_cast<std::size_t>(i1)].value;
                if (need0) {
                    matmul_grad_a(g, b, ensure_grad(i0));
                }
                if (need1) {
                    matmul_grad_b(a, g, ensure_grad(i1));
                }
                break;
            }
            case Op::transpose: {
                Tensor& da = ensure_grad(i0);
                for (int i = 0; i < g.rows(); ++i) {
                    for (int j = 0; j < g.cols(); ++j) {
                        da.at(j, i) += g.at(i, j);
                    }
                }
                break;
            }
            case Op::reshape: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
                break;
            }
            case Op::concat: {
                const Tensor& b = nodes_[static_cast<std::size_t>(i1)].value;
                if (n.axis == 0) {
                    if (need0) {
                        Tensor& da = ensure_grad(i0);
                        for (std::int64_t i = 0; i < a.numel(); ++i) da[i] += g[i];
                    }
                    if (need1) {
                        Tensor& db = ensure_grad(i1);
                        for (std::int64_t i = 0; i < b.numel(); ++i) db[i] += g[a.numel() + i];
                    }
                } else {
                    if (need0) {
                        Tensor& da = ensure_grad(i0);
                        for (int i = 0; i < a.rows(); ++i) {
                            for (int j = 0; j < a.cols(); ++j) da.at(i, j) += g.at(i, j);
                        }
                    }
                    if (need1) {
                        Tensor& db = ensure_grad(i1);
                        for (int i = 0; i < b.rows(); ++i) {
                            for (int j = 0; j < b.cols(); ++j) db.at(i, j) += g.at(i, a.cols() + j);
                        }
                    }
                }
                break;
            }
            case Op::slice: {
                Tensor& da = ensure_grad(i0);
                if (n.axis == 0) {
                    const int c = a.cols();
                    for (int i = 0; i < n.len; ++i) {
                        for (int j = 0; j < c; ++j) {
                            da.at(n.start + i, j) += g.at(i, j);
                        }
                    }
                } else {
                    for (int i = 0; i < a.rows(); ++i) {
                        for (int j = 0; j < n.len; ++j) {
                            da.at(i, n.start + j) += g.at(i, j);
                        }
                    }
                }
                break;
            }
            case Op::sum: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += g[0];
                break;
            }
            case Op::mean: {
                Tensor& da = ensure_grad(i0);
                const double s = g[0] / static_cast<double>(da.numel());
                for (std::int64_t i = 0; i < da.numel(); ++i) da[i] += s;
                break;
            }
            case Op::softmax: {
                Tensor& da = ensure_grad(i0);
                const int r = n.value.rows(), c = n.value.cols();
                for (int i = 0; i < r; ++i) {
                    const double* y = n.value.data() + static_cast<std::size_t>(i) * c;
                    const double* gy = g.data() + static_cast<std::size_t>(i) * c;
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += gy[j] * y[j];
                    double* dst = da.data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) dst[j] += y[j] * (gy[j] - dot);
                }
                break;
            }
            case Op::rms_norm: {
                Tensor& da = ensure_grad(i0);
                const int r = a.rows(), c = a.cols();
                for (int i = 0; i < r; ++i) {
                    const double* x = a.data() + static_cast<std::size_t>(i) * c;
                    const double* gy = g.data() + static_cast<std::size_t>(i) * c;
                    double ms = 0.0;
                    for (int j = 0; j < c; ++j) ms += x[j] * x[j];
                    ms = ms / static_cast<double>(c) + kRmsEps;
                    const double inv = 1.0 / std::sqrt(ms);
                    double dot = 0.0;
                    for (int j = 0; j < c; ++j) dot += gy[j] * x[j];
                    const double k = dot * inv / (ms * static_cast<double>(c));
                    double* dst = da.data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) dst[j] += gy[j] * inv - x[j] * k;
                }
                break;
            }
            case Op::silu: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < a.numel(); ++i) {
                    const double s = 1.0 / (1.0 + std::exp(-a[i]));
                    da[i] += g[i] * s * (1.0 + a[i] * (1.0 - s));
                }
                break;
            }
            case Op::sigmoid: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < a.numel(); ++i) {
                    const double y = n.value[i];
                    da[i] += g[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::log: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < a.numel(); ++i) da[i] += g[i] / a[i];
                break;
            }
            case Op::exp: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < a.numel(); ++i) da[i] += g[i] * n.value[i];
                break;
            }
            case Op::square: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < a.numel(); ++i) da[i] += 2.0 * a[i] * g[i];
                break;
            }
            case Op::scale: {
                Tensor& da = ensure_grad(i0);
                for (std::int64_t i = 0; i < a.numel(); ++i) da[i] += n.c0 * g[i];
                break;
            }
            case Op::gather: {
                Tensor& da = ensure_grad(i0);
                const int c = a.cols();
                for (std::size_t r = 0; r < n.indices.size(); ++r) {
                    double* dst = da.data() + n.indices[r] * c;
                    const double* src = g.data() + static_cast<std::int64_t>(r) * c;
                    for (int j = 0; j < c; ++j) dst[j] += src[j];
                }
                break;
            }
            case Op::rotate_pairs: {
                Tensor& da = ensure_grad(i0);
                const int r = a.rows(), c = a.cols();
                for (int i = 0; i < r; ++i) {
                    for (int p = 0; p < c / 2; ++p) {
                        const double cv = n.cos_table.at(i, p);
                        const double sv = n.sin_table.at(i, p);
                        const double g0 = g.at(i, 2 * p);
                        const double g1 = g.at(i, 2 * p + 1);
                        da.at(i, 2 * p) += cv * g0 + sv * g1;
                        da.at(i, 2 * p + 1) += -sv * g0 + cv * g1;
                    }
                }
                break;
            }
        }
    }

    for (const auto& [name, id] : input_ids_) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) {
            continue;
        }
        out[name] = n.grad_live ? n.grad : Tensor::zeros(n.value.shape());
    }
}

Val Tape::input_handle(const std::string& name) const {
    auto it = input_ids_.find(name);
    if (it == input_ids_.end()) {
        fail("unknown input '" + name + "'");
    }
    return Val{it->second};
}

Tensor finite_diff_grad(Tape& tape, Val loss, const std::string& input_name, double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite_diff_grad requires h > 0");
    }
    const Tensor original = tape.value(tape.input_handle(input_name));
    Tensor grad(original.shape());
    for (std::int64_t i = 0; i < original.numel(); ++i) {
        Tensor plus = original;
        plus[i] += h;
        tape.rebind(input_name, std::move(plus));
        tape.recompute();
        const double f_plus = tape.scalar_value(loss);

        Tensor minus = original;
        minus[i] -= h;
        tape.rebind(input_name, std::move(minus));
        tape.recompute();
        const double f_minus = tape.scalar_value(loss);

        grad[i] = (f_plus - f_minus) / (2.0 * h);
    }
    tape.rebind(input_name, original);
    tape.recompute();
    return grad;
}

} // namespace glyphflow::core
