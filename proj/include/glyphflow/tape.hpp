#pragma once

#include "glyphflow/tensor.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace glyphflow::core {

/// Handle to a node on a Tape.
struct Val {
    int id = -1;
    bool valid() const { return id >= 0; }
};

enum class Op : std::uint8_t {
    input,
    add,
    sub,
    mul,
    matmul,
    transpose,
    reshape,
    concat,
    slice,
    sum,
    mean,
    softmax,
    rms_norm,
    silu,
    sigmoid,
    log,
    exp,
    square,
    scale,
    gather,
    rotate_pairs,
};

const char* op_name(Op op);

/// Define-by-run computation graph over a fixed op vocabulary.
///
/// Nodes are appended in construction order and forward values are computed
/// eagerly, so node ids form a topological order. backward() sweeps ids in
/// reverse, which makes gradient accumulation order deterministic and results
/// run-to-run identical.
///
/// Shapes: elementwise ops require exact shape equality; matmul/transpose/
/// softmax/rms_norm/rotate_pairs operate on 2-D tensors (1-D treated as a
/// single row where noted). Shape errors are raised at node construction.
class Tape {
public:
    struct Node {
        Op op;
        std::array<int, 2> in{-1, -1};
        Tensor value;
        Tensor grad;            // allocated during backward
        bool needs_grad = false;
        bool grad_live = false; // grad tensor currently holds this sweep's adjoint
        std::string name;       // named inputs only
        // per-op attributes
        double c0 = 0.0;              // scale factor
        int axis = 0;                 // concat/slice
        int start = 0;                // slice
        int len = 0;                  // slice
        std::vector<std::int64_t> indices; // gather row ids
        Tensor cos_table;             // rotate_pairs
        Tensor sin_table;             // rotate_pairs
    };

    /// Named leaf. Gradients are reported for named inputs with
    /// requires_grad; constants use requires_grad = false.
    Val input(const std::string& name, Tensor value, bool requires_grad = true);
    Val constant(Tensor value);

    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);
    Val matmul(Val a, Val b);
    Val transpose(Val a);
    Val reshape(Val a, Shape shape);
    Val concat(Val a, Val b, int axis);
    Val slice(Val a, int axis, int start, int len);
    Val sum(Val a);
    Val mean(Val a);
    Val softmax(Val a);  // row-wise
    Val rms_norm(Val a); // row-wise, unit root-mean-square output
    Val silu(Val a);
    Val sigmoid(Val a);
    Val log(Val a);
    Val exp(Val a);
    Val square(Val a);
    Val scale(Val a, double c);
    Val gather(Val table, std::vector<std::int64_t> row_ids);
    Val rotate_pairs(Val a, Tensor cos_table, Tensor sin_table);

    const Tensor& value(Val v) const;
    double scalar_value(Val v) const;

    /// d(loss)/d(input) for every named requires_grad input. loss must be
    /// scalar (numel 1).
    std::map<std::string, Tensor> backward(Val loss);

    /// Seeded sweep: gradients of sum_i <seed_i, node_i>. Used where the
    /// output-space gradient is computed analytically (SDPO branches).
    std::map<std::string, Tensor> backward_seeded(const std::vector<std::pair<Val, Tensor>>& seeds);

    /// Adjoint of an arbitrary node from the most recent backward sweep.
    /// Zero tensor if the node was not reached.
    Tensor grad_at(Val v) const;

    /// Overwrite a named input's value. Shape must match.
    void rebind(const std::string& name, Tensor value);
    Val input_handle(const std::string& name) const;
    /// Recompute every node's forward value in construction order.
    void recompute();

    std::size_t size() const { return nodes_.size(); }
    const Node& node(Val v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

private:
    Val push(Node node);
    void compute(Node& node);
    void backward_sweep(std::map<std::string, Tensor>& out);
    Node& mutable_node(Val v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    void check(Val v) const;

    std::vector<Node> nodes_;
    std::map<std::string, int> input_ids_;
};

/// Central finite differences (f(p+h) - f(p-h)) / 2h for every coordinate of
/// the named tape input; the independent oracle for backward(). Only uses
/// rebind/recompute, never the adjoint path.
Tensor finite_diff_grad(Tape& tape, Val loss, const std::string& input_name, double h);

} // namespace glyphflow::core
