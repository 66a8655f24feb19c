// Reverse-mode autodiff over dense row-major arrays.
//
// A Graph is an arena of DiffArrays plus a tape of executed primitives.
// Nodes are recorded only when an input requires gradient, so feeding a
// value through requires_grad=false leaves is a natural stop-gradient.
// backward() consumes the tape. All loops accumulate in fixed index order,
// keeping results bit-identical across thread counts.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "iajepa/kernels.hpp"
#include "iajepa/rng.hpp"
#include "iajepa/tensor.hpp"

namespace iajepa {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& m) : std::runtime_error(m) {}
};
struct UnsupportedPrimitiveError : std::runtime_error {
    explicit UnsupportedPrimitiveError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};

// Probabilities entering log() are clamped to this range.
constexpr double kProbClampLo = 1e-7;
constexpr double kProbClampHi = 1.0 - 1e-7;

constexpr double kLayerNormEps = 1e-5;

enum class Op {
    Matmul,
    Add,
    Mul,
    Scale,
    Gelu,
    Relu,
    Sigmoid,
    Tanh,
    SoftmaxLastdim,
    LayerNorm,
    GatherRows,
    ConcatLastdim,
    ConcatRows,
    MeanOverAxis,
    Conv1dTime,
    Dropout,
    Reshape,
    MseMasked,
    CrossEntropy,
    BinaryCrossEntropy,
};

// Static attributes for the string-keyed dispatcher.
struct Attrs {
    bool trans_a = false;
    bool trans_b = false;
    double scalar = 0.0;
    int axis = 0;
    int group = 0;
    double rate = 0.0;
    std::vector<int> indices;  // gather_rows rows, cross_entropy targets
    std::vector<int> shape;    // reshape target
};

template <typename T>
class Graph {
  public:
    explicit Graph(uint64_t seed = 0, bool training = false) : rng_(seed), training_(training) {}

    bool training() const { return training_; }
    void set_training(bool on) { training_ = on; }

    int leaf(Tensor<T> v, bool requires_grad) {
        arrays_.push_back(Slot{std::move(v), Tensor<T>(), requires_grad});
        if (requires_grad) arrays_.back().grad = Tensor<T>::zeros(arrays_.back().value.shape);
        return int(arrays_.size()) - 1;
    }
    int param(Tensor<T> v) { return leaf(std::move(v), true); }
    int constant(Tensor<T> v) { return leaf(std::move(v), false); }

    const Tensor<T>& val(int id) const { return arrays_.at(id).value; }
    const Tensor<T>& grad(int id) const { return arrays_.at(id).grad; }
    bool requires_grad(int id) const { return arrays_.at(id).requires_grad; }
    size_t size() const { return arrays_.size(); }

    // ----- primitives -----

    int matmul(int a, int b, bool ta = false, bool tb = false) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (A.rank() != 2 || B.rank() != 2)
            fail("matmul", {a, b}, "needs rank-2 inputs");
        const int m = ta ? A.dim(1) : A.dim(0);
        const int k = ta ? A.dim(0) : A.dim(1);
        const int kb = tb ? B.dim(1) : B.dim(0);
        const int n = tb ? B.dim(0) : B.dim(1);
        if (k != kb) fail("matmul", {a, b}, "inner dimensions differ");
        Tensor<T> out({m, n});
        kern::matmul(A.data.data(), B.data.data(), out.data.data(), m, n, k, ta, tb);
        Node nd{Op::Matmul, {a, b}, -1};
        nd.iattr = {int(ta), int(tb), m, n, k};
        return finish(std::move(out), std::move(nd));
    }

    // Same shape, or b a [1,C] bias row broadcast over a's rows.
    int add(int a, int b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        Tensor<T> out(A.shape);
        bool bias = false;
        if (A.same_shape(B)) {
            for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
        } else if (A.rank() == 2 && B.rank() == 2 && B.dim(0) == 1 && B.dim(1) == A.dim(1)) {
            bias = true;
            const int rows = A.dim(0), cols = A.dim(1);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    out.data[int64_t(r) * cols + c] = A.data[int64_t(r) * cols + c] + B.data[c];
        } else {
            fail("add", {a, b}, "shapes neither equal nor row-broadcastable");
        }
        Node nd{Op::Add, {a, b}, -1};
        nd.iattr = {int(bias)};
        return finish(std::move(out), std::move(nd));
    }

    int mul(int a, int b) {
        const Tensor<T>& A = val(a);
        const Tensor<T>& B = val(b);
        if (!A.same_shape(B)) fail("mul", {a, b}, "shapes differ");
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] * B.data[i];
        return finish(std::move(out), Node{Op::Mul, {a, b}, -1});
    }

    int scale(int a, double s) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = T(s) * A.data[i];
        Node nd{Op::Scale, {a}, -1};
        nd.fattr0 = s;
        return finish(std::move(out), std::move(nd));
    }

    // Exact-erf GELU: 0.5 x (1 + erf(x / sqrt(2))).
    int gelu(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) {
            const double x = double(A.data[i]);
            out.data[i] = T(0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)));
        }
        return finish(std::move(out), Node{Op::Gelu, {a}, -1});
    }

    int relu(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] > T(0) ? A.data[i] : T(0);
        return finish(std::move(out), Node{Op::Relu, {a}, -1});
    }

    int sigmoid(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-A.data[i]));
        return finish(std::move(out), Node{Op::Sigmoid, {a}, -1});
    }

    int tanh(int a) {
        const Tensor<T>& A = val(a);
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = std::tanh(A.data[i]);
        return finish(std::move(out), Node{Op::Tanh, {a}, -1});
    }

    int softmax_lastdim(int a) {
        const Tensor<T>& A = val(a);
        if (A.rank() < 1) fail("softmax_lastdim", {a}, "needs rank >= 1");
        const int cols = A.last_dim();
        const int rows = int(A.numel() / cols);
        Tensor<T> out(A.shape);
        kern::softmax_rows(A.data.data(), out.data.data(), rows, cols);
        Node nd{Op::SoftmaxLastdim, {a}, -1};
        nd.iattr = {rows, cols};
        return finish(std::move(out), std::move(nd));
    }

    // Normalizes the last axis to zero mean / unit variance, then applies
    // per-feature scale gamma and shift beta. Constant rows map to beta.
    int layer_norm(int x, int gamma, int beta) {
        const Tensor<T>& X = val(x);
        const Tensor<T>& G = val(gamma);
        const Tensor<T>& B = val(beta);
        const int cols = X.last_dim();
        const int rows = int(X.numel() / cols);
        if (G.numel() != cols || B.numel() != cols)
            fail("layer_norm", {x, gamma, beta}, "gamma/beta length must equal last axis");
        Tensor<T> out(X.shape);
        Tensor<T> mu({rows, 1}), inv({rows, 1});
        kern::layer_norm_rows(X.data.data(), G.data.data(), B.data.data(), out.data.data(), mu.data.data(),
                              inv.data.data(), rows, cols, T(kLayerNormEps));
        Node nd{Op::LayerNorm, {x, gamma, beta}, -1};
        nd.iattr = {rows, cols};
        nd.saved.push_back(std::move(mu));
        nd.saved.push_back(std::move(inv));
        return finish(std::move(out), std::move(nd));
    }

    int gather_rows(int a, std::vector<int> idx) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2) fail("gather_rows", {a}, "needs rank-2 input");
        const int rows = A.dim(0), cols = A.dim(1);
        for (int r : idx)
            if (r < 0 || r >= rows) fail("gather_rows", {a}, "row index out of range");
        Tensor<T> out({int(idx.size()), cols});
        for (size_t r = 0; r < idx.size(); ++r)
            for (int c = 0; c < cols; ++c) out.data[r * cols + c] = A.data[int64_t(idx[r]) * cols + c];
        Node nd{Op::GatherRows, {a}, -1};
        nd.iattr = std::move(idx);
        return finish(std::move(out), std::move(nd));
    }

    int concat_lastdim(const std::vector<int>& ids) {
        if (ids.empty()) throw ContractError("concat_lastdim: no inputs");
        const int rows = val(ids[0]).rank() == 2 ? val(ids[0]).dim(0) : 1;
        int total = 0;
        for (int id : ids) {
            const Tensor<T>& A = val(id);
            if (A.rank() != 2 || A.dim(0) != rows) fail("concat_lastdim", ids, "row counts differ");
            total += A.dim(1);
        }
        Tensor<T> out({rows, total});
        int off = 0;
        for (int id : ids) {
            const Tensor<T>& A = val(id);
            const int cols = A.dim(1);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) out.data[int64_t(r) * total + off + c] = A.data[int64_t(r) * cols + c];
            off += cols;
        }
        Node nd{Op::ConcatLastdim, ids, -1};
        return finish(std::move(out), std::move(nd));
    }

    int concat_rows(const std::vector<int>& ids) {
        if (ids.empty()) throw ContractError("concat_rows: no inputs");
        const int cols = val(ids[0]).rank() == 2 ? val(ids[0]).dim(1) : int(val(ids[0]).numel());
        int total = 0;
        for (int id : ids) {
            const Tensor<T>& A = val(id);
            if (A.rank() != 2 || A.dim(1) != cols) fail("concat_rows", ids, "column counts differ");
            total += A.dim(0);
        }
        Tensor<T> out({total, cols});
        int off = 0;
        for (int id : ids) {
            const Tensor<T>& A = val(id);
            std::copy(A.data.begin(), A.data.end(), out.data.begin() + int64_t(off) * cols);
            off += A.dim(0);
        }
        Node nd{Op::ConcatRows, ids, -1};
        return finish(std::move(out), std::move(nd));
    }

    // axis 0: mean over consecutive blocks of `group` rows ([R,C] -> [R/group,C]).
    // axis 1: mean over the last axis ([R,C] -> [R,1]).
    int mean_over_axis(int a, int axis, int group = 0) {
        const Tensor<T>& A = val(a);
        if (A.rank() != 2) fail("mean_over_axis", {a}, "needs rank-2 input");
        const int rows = A.dim(0), cols = A.dim(1);
        Tensor<T> out;
        if (axis == 0) {
            if (group <= 0) group = rows;
            if (rows % group != 0) fail("mean_over_axis", {a}, "rows not divisible by group");
            const int gs = rows / group;
            out = Tensor<T>({gs, cols});
            for (int g = 0; g < gs; ++g)
                for (int c = 0; c < cols; ++c) {
                    T acc = T(0);
                    for (int r = 0; r < group; ++r) acc += A.data[int64_t(g * group + r) * cols + c];
                    out.data[int64_t(g) * cols + c] = acc / T(group);
                }
        } else if (axis == 1) {
            out = Tensor<T>({rows, 1});
            for (int r = 0; r < rows; ++r) {
                T acc = T(0);
                for (int c = 0; c < cols; ++c) acc += A.data[int64_t(r) * cols + c];
                out.data[r] = acc / T(cols);
            }
        } else {
            fail("mean_over_axis", {a}, "axis must be 0 or 1");
        }
        Node nd{Op::MeanOverAxis, {a}, -1};
        nd.iattr = {axis, group, rows, cols};
        return finish(std::move(out), std::move(nd));
    }

    // x: [T,Cin], w: [Cout,Cin,K] (K odd), b: [1,Cout]; same zero padding.
    int conv1d_time(int x, int w, int b) {
        const Tensor<T>& X = val(x);
        const Tensor<T>& W = val(w);
        const Tensor<T>& B = val(b);
        if (X.rank() != 2 || W.rank() != 3) fail("conv1d_time", {x, w, b}, "x rank-2, w rank-3 required");
        const int steps = X.dim(0), cin = X.dim(1);
        const int cout = W.dim(0), wcin = W.dim(1), k = W.dim(2);
        if (wcin != cin || k % 2 == 0) fail("conv1d_time", {x, w, b}, "channel mismatch or even kernel");
        if (B.numel() != cout) fail("conv1d_time", {x, w, b}, "bias length must equal out channels");
        const int pad = k / 2;
        Tensor<T> out({steps, cout});
        for (int t = 0; t < steps; ++t)
            for (int o = 0; o < cout; ++o) {
                T acc = B.data[o];
                for (int ci = 0; ci < cin; ++ci)
                    for (int dk = 0; dk < k; ++dk) {
                        const int s = t + dk - pad;
                        if (s < 0 || s >= steps) continue;
                        acc += X.data[int64_t(s) * cin + ci] * W.data[(int64_t(o) * cin + ci) * k + dk];
                    }
                out.data[int64_t(t) * cout + o] = acc;
            }
        Node nd{Op::Conv1dTime, {x, w, b}, -1};
        nd.iattr = {steps, cin, cout, k};
        return finish(std::move(out), std::move(nd));
    }

    // Inverted scaling: kept activations divided by keep probability, so
    // evaluation mode (and rate 0) is the identity.
    int dropout(int a, double rate) {
        if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
        if (!training_ || rate == 0.0) return a;
        const Tensor<T>& A = val(a);
        Tensor<T> mask(A.shape);
        const T keep_inv = T(1.0 / (1.0 - rate));
        for (int64_t i = 0; i < A.numel(); ++i) mask.data[i] = rng_.uniform() >= rate ? keep_inv : T(0);
        Tensor<T> out(A.shape);
        for (int64_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] * mask.data[i];
        Node nd{Op::Dropout, {a}, -1};
        nd.saved.push_back(std::move(mask));
        return finish(std::move(out), std::move(nd));
    }

    int reshape(int a, std::vector<int> shape) {
        const Tensor<T>& A = val(a);
        if (shape_numel(shape) != A.numel()) fail("reshape", {a}, "element count changes");
        Tensor<T> out(std::move(shape), A.data);
        Node nd{Op::Reshape, {a}, -1};
        return finish(std::move(out), std::move(nd));
    }

    // Mean over rows of the squared L2 distance between prediction and
    // target rows: (1/M) sum_r ||p_r - t_r||^2.
    int mse_masked(int pred, int target) {
        const Tensor<T>& P = val(pred);
        const Tensor<T>& Q = val(target);
        if (!P.same_shape(Q)) fail("mse_masked", {pred, target}, "shapes differ");
        const int cols = P.last_dim();
        const int rows = int(P.numel() / cols);
        T acc = T(0);
        for (int64_t i = 0; i < P.numel(); ++i) {
            const T d = P.data[i] - Q.data[i];
            acc += d * d;
        }
        Tensor<T> out = Tensor<T>::scalar(acc / T(rows));
        Node nd{Op::MseMasked, {pred, target}, -1};
        nd.iattr = {rows, cols};
        return finish(std::move(out), std::move(nd));
    }

    // Mean over rows of -log p[target]; probabilities clamped before log.
    int cross_entropy(int probs, std::vector<int> targets) {
        const Tensor<T>& P = val(probs);
        if (P.rank() != 2) fail("cross_entropy", {probs}, "needs rank-2 probabilities");
        const int rows = P.dim(0), cols = P.dim(1);
        if (int(targets.size()) != rows) fail("cross_entropy", {probs}, "one target per row required");
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) {
            const int t = targets[r];
            if (t < 0 || t >= cols) fail("cross_entropy", {probs}, "target index out of range");
            acc -= std::log(clamp_prob(double(P.data[int64_t(r) * cols + t])));
        }
        Tensor<T> out = Tensor<T>::scalar(T(acc / rows));
        Node nd{Op::CrossEntropy, {probs}, -1};
        nd.iattr = std::move(targets);
        nd.iattr.push_back(rows);
        nd.iattr.push_back(cols);
        return finish(std::move(out), std::move(nd));
    }

    // Mean elementwise Bernoulli cross-entropy of probabilities p against
    // targets y in [0,1]; p clamped before each log.
    int binary_cross_entropy(int probs, int targets) {
        const Tensor<T>& P = val(probs);
        const Tensor<T>& Y = val(targets);
        if (!P.same_shape(Y)) fail("binary_cross_entropy", {probs, targets}, "shapes differ");
        const int64_t n = P.numel();
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double p = clamp_prob(double(P.data[i]));
            const double y = double(Y.data[i]);
            acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
        Tensor<T> out = Tensor<T>::scalar(T(acc / double(n)));
        Node nd{Op::BinaryCrossEntropy, {probs, targets}, -1};
        return finish(std::move(out), std::move(nd));
    }

    // z = sig(xWz + hUz + bz); r = sig(xWr + hUr + br);
    // htilde = tanh(xWh + (r*h)Uh + bh); returns (1-z)*h + z*htilde.
    int gru_cell(int x, int h, int wz, int uz, int bz, int wr, int ur, int br, int wh, int uh, int bh) {
        const int z = sigmoid(add(add(matmul(x, wz), matmul(h, uz)), bz));
        const int r = sigmoid(add(add(matmul(x, wr), matmul(h, ur)), br));
        const int ht = tanh(add(add(matmul(x, wh), matmul(mul(r, h), uh)), bh));
        return add(h, mul(z, add(ht, scale(h, -1.0))));
    }

    // String-keyed entry point; unknown kinds are rejected.
    int apply_primitive(const std::string& kind, const std::vector<int>& in, const Attrs& at = {}) {
        if (kind == "matmul") return need(kind, in, 2), matmul(in[0], in[1], at.trans_a, at.trans_b);
        if (kind == "add") return need(kind, in, 2), add(in[0], in[1]);
        if (kind == "mul") return need(kind, in, 2), mul(in[0], in[1]);
        if (kind == "scale") return need(kind, in, 1), scale(in[0], at.scalar);
        if (kind == "gelu") return need(kind, in, 1), gelu(in[0]);
        if (kind == "relu") return need(kind, in, 1), relu(in[0]);
        if (kind == "sigmoid") return need(kind, in, 1), sigmoid(in[0]);
        if (kind == "tanh") return need(kind, in, 1), tanh(in[0]);
        if (kind == "softmax_lastdim") return need(kind, in, 1), softmax_lastdim(in[0]);
        if (kind == "layer_norm") return need(kind, in, 3), layer_norm(in[0], in[1], in[2]);
        if (kind == "gather_rows") return need(kind, in, 1), gather_rows(in[0], at.indices);
        if (kind == "concat_lastdim") return concat_lastdim(in);
        if (kind == "concat_rows") return concat_rows(in);
        if (kind == "mean_over_axis") return need(kind, in, 1), mean_over_axis(in[0], at.axis, at.group);
        if (kind == "conv1d_time") return need(kind, in, 3), conv1d_time(in[0], in[1], in[2]);
        if (kind == "dropout") return need(kind, in, 1), dropout(in[0], at.rate);
        if (kind == "reshape") return need(kind, in, 1), reshape(in[0], at.shape);
        if (kind == "mse_masked") return need(kind, in, 2), mse_masked(in[0], in[1]);
        if (kind == "cross_entropy") return need(kind, in, 1), cross_entropy(in[0], at.indices);
        if (kind == "binary_cross_entropy") return need(kind, in, 2), binary_cross_entropy(in[0], in[1]);
        throw UnsupportedPrimitiveError("unsupported primitive: " + kind);
    }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The tape is
    // consumed; leaves with requires_grad keep their accumulated gradients.
    void backward(int loss) {
        if (consumed_) throw ContractError("backward: tape already consumed");
        if (val(loss).numel() != 1) throw ContractError("backward: loss must be scalar");
        ensure_grad(loss);
        arrays_[loss].grad.data[0] = T(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) backward_node(*it);
        consumed_ = true;
        tape_.clear();
    }

  private:
    struct Slot {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
    };
    struct Node {
        Op op;
        std::vector<int> in;
        int out;
        std::vector<int> iattr;
        std::vector<Tensor<T>> saved;
        double fattr0 = 0.0;
    };

    std::vector<Slot> arrays_;
    std::vector<Node> tape_;
    Rng rng_;
    bool training_ = false;
    bool consumed_ = false;

    static double clamp_prob(double p) { return p < kProbClampLo ? kProbClampLo : (p > kProbClampHi ? kProbClampHi : p); }
    static bool prob_in_range(double p) { return p > kProbClampLo && p < kProbClampHi; }

    static void need(const std::string& kind, const std::vector<int>& in, size_t n) {
        if (in.size() != n)
            throw DimensionError(kind + ": expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }

    void fail(const std::string& kind, const std::vector<int>& ids, const std::string& why) const {
        std::string msg = kind + ": " + why + ";";
        for (int id : ids) msg += " " + shape_str(val(id).shape);
        throw DimensionError(msg);
    }

    void ensure_grad(int id) {
        if (arrays_[id].grad.numel() == 0) arrays_[id].grad = Tensor<T>::zeros(arrays_[id].value.shape);
    }

    int finish(Tensor<T> out, Node nd) {
        bool track = false;
        for (int id : nd.in) track = track || arrays_[id].requires_grad;
        arrays_.push_back(Slot{std::move(out), Tensor<T>(), track});
        const int id = int(arrays_.size()) - 1;
        if (track) {
            arrays_[id].grad = Tensor<T>::zeros(arrays_[id].value.shape);
            nd.out = id;
            for (int in : nd.in) ensure_grad(in);
            tape_.push_back(std::move(nd));
        }
        return id;
    }

    void backward_node(const Node& nd) {
        const Tensor<T>& dy = arrays_[nd.out].grad;
        switch (nd.op) {
            case Op::Matmul: {
                const bool ta = nd.iattr[0], tb = nd.iattr[1];
                const int m = nd.iattr[2], n = nd.iattr[3], k = nd.iattr[4];
                const Tensor<T>& A = val(nd.in[0]);
                const Tensor<T>& B = val(nd.in[1]);
                if (arrays_[nd.in[0]].requires_grad) {
                    Tensor<T> da(A.shape);
                    if (!ta && !tb) kern::matmul(dy.data.data(), B.data.data(), da.data.data(), m, k, n, false, true);
                    else if (!ta && tb) kern::matmul(dy.data.data(), B.data.data(), da.data.data(), m, k, n, false, false);
                    else if (ta && !tb) kern::matmul(B.data.data(), dy.data.data(), da.data.data(), k, m, n, false, true);
                    else kern::matmul(B.data.data(), dy.data.data(), da.data.data(), k, m, n, true, true);
                    accumulate(nd.in[0], da);
                }
                if (arrays_[nd.in[1]].requires_grad) {
                    Tensor<T> db(B.shape);
                    if (!ta && !tb) kern::matmul(A.data.data(), dy.data.data(), db.data.data(), k, n, m, true, false);
                    else if (!ta && tb) kern::matmul(dy.data.data(), A.data.data(), db.data.data(), n, k, m, true, false);
                    else if (ta && !tb) kern::matmul(A.data.data(), dy.data.data(), db.data.data(), k, n, m, false, false);
                    else kern::matmul(dy.data.data(), A.data.data(), db.data.data(), n, k, m, true, true);
                    accumulate(nd.in[1], db);
                }
                break;
            }
            case Op::Add: {
                const bool bias = nd.iattr[0];
                if (arrays_[nd.in[0]].requires_grad) accumulate(nd.in[0], dy);
                if (arrays_[nd.in[1]].requires_grad) {
                    if (!bias) {
                        accumulate(nd.in[1], dy);
                    } else {
                        Tensor<T>& db = arrays_[nd.in[1]].grad;
                        const int cols = int(db.numel());
                        const int rows = int(dy.numel() / cols);
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < cols; ++c) db.data[c] += dy.data[int64_t(r) * cols + c];
                    }
                }
                break;
            }
            case Op::Mul: {
                const Tensor<T>& A = val(nd.in[0]);
                const Tensor<T>& B = val(nd.in[1]);
                if (arrays_[nd.in[0]].requires_grad) {
                    Tensor<T>& da = arrays_[nd.in[0]].grad;
                    for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * B.data[i];
                }
                if (arrays_[nd.in[1]].requires_grad) {
                    Tensor<T>& db = arrays_[nd.in[1]].grad;
                    for (int64_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i] * A.data[i];
                }
                break;
            }
            case Op::Scale: {
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += T(nd.fattr0) * dy.data[i];
                break;
            }
            case Op::Gelu: {
                const Tensor<T>& X = val(nd.in[0]);
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i) {
                    const double x = double(X.data[i]);
                    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
                    const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
                    da.data[i] += dy.data[i] * T(cdf + x * pdf);
                }
                break;
            }
            case Op::Relu: {
                const Tensor<T>& X = val(nd.in[0]);
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i)
                    if (X.data[i] > T(0)) da.data[i] += dy.data[i];
                break;
            }
            case Op::Sigmoid: {
                const Tensor<T>& Y = val(nd.out);
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * Y.data[i] * (T(1) - Y.data[i]);
                break;
            }
            case Op::Tanh: {
                const Tensor<T>& Y = val(nd.out);
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * (T(1) - Y.data[i] * Y.data[i]);
                break;
            }
            case Op::SoftmaxLastdim: {
                const int rows = nd.iattr[0], cols = nd.iattr[1];
                const Tensor<T>& Y = val(nd.out);
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int r = 0; r < rows; ++r) {
                    const T* yr = Y.data.data() + int64_t(r) * cols;
                    const T* gr = dy.data.data() + int64_t(r) * cols;
                    T dot = T(0);
                    for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                    for (int c = 0; c < cols; ++c) da.data[int64_t(r) * cols + c] += yr[c] * (gr[c] - dot);
                }
                break;
            }
            case Op::LayerNorm: {
                const int rows = nd.iattr[0], cols = nd.iattr[1];
                const Tensor<T>& X = val(nd.in[0]);
                const Tensor<T>& G = val(nd.in[1]);
                const Tensor<T>& mu = nd.saved[0];
                const Tensor<T>& inv = nd.saved[1];
                if (arrays_[nd.in[0]].requires_grad) {
                    Tensor<T>& dx = arrays_[nd.in[0]].grad;
                    for (int r = 0; r < rows; ++r) {
                        const T* xr = X.data.data() + int64_t(r) * cols;
                        const T* gr = dy.data.data() + int64_t(r) * cols;
                        const T iv = inv.data[r], m = mu.data[r];
                        T s1 = T(0), s2 = T(0);
                        for (int c = 0; c < cols; ++c) {
                            const T gd = G.data[c] * gr[c];
                            s1 += gd;
                            s2 += gd * (xr[c] - m) * iv;
                        }
                        s1 /= T(cols);
                        s2 /= T(cols);
                        for (int c = 0; c < cols; ++c) {
                            const T xhat = (xr[c] - m) * iv;
                            dx.data[int64_t(r) * cols + c] += iv * (G.data[c] * gr[c] - s1 - xhat * s2);
                        }
                    }
                }
                if (arrays_[nd.in[1]].requires_grad) {
                    Tensor<T>& dg = arrays_[nd.in[1]].grad;
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c)
                            dg.data[c] += dy.data[int64_t(r) * cols + c] * (X.data[int64_t(r) * cols + c] - mu.data[r]) * inv.data[r];
                }
                if (arrays_[nd.in[2]].requires_grad) {
                    Tensor<T>& db = arrays_[nd.in[2]].grad;
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c) db.data[c] += dy.data[int64_t(r) * cols + c];
                }
                break;
            }
            case Op::GatherRows: {
                const int cols = val(nd.in[0]).dim(1);
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (size_t r = 0; r < nd.iattr.size(); ++r)
                    for (int c = 0; c < cols; ++c)
                        da.data[int64_t(nd.iattr[r]) * cols + c] += dy.data[r * cols + c];
                break;
            }
            case Op::ConcatLastdim: {
                const int total = val(nd.out).dim(1);
                const int rows = val(nd.out).dim(0);
                int off = 0;
                for (int id : nd.in) {
                    const int cols = val(id).dim(1);
                    if (arrays_[id].requires_grad) {
                        Tensor<T>& da = arrays_[id].grad;
                        for (int r = 0; r < rows; ++r)
                            for (int c = 0; c < cols; ++c)
                                da.data[int64_t(r) * cols + c] += dy.data[int64_t(r) * total + off + c];
                    }
                    off += cols;
                }
                break;
            }
            case Op::ConcatRows: {
                const int cols = val(nd.out).dim(1);
                int off = 0;
                for (int id : nd.in) {
                    const int rows = val(id).dim(0);
                    if (arrays_[id].requires_grad) {
                        Tensor<T>& da = arrays_[id].grad;
                        for (int64_t i = 0; i < int64_t(rows) * cols; ++i) da.data[i] += dy.data[int64_t(off) * cols + i];
                    }
                    off += rows;
                }
                break;
            }
            case Op::MeanOverAxis: {
                const int axis = nd.iattr[0], group = nd.iattr[1], rows = nd.iattr[2], cols = nd.iattr[3];
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                if (axis == 0) {
                    const T s = T(1) / T(group);
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c) da.data[int64_t(r) * cols + c] += s * dy.data[int64_t(r / group) * cols + c];
                } else {
                    const T s = T(1) / T(cols);
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c) da.data[int64_t(r) * cols + c] += s * dy.data[r];
                }
                break;
            }
            case Op::Conv1dTime: {
                const int steps = nd.iattr[0], cin = nd.iattr[1], cout = nd.iattr[2], k = nd.iattr[3];
                const int pad = k / 2;
                const Tensor<T>& X = val(nd.in[0]);
                const Tensor<T>& W = val(nd.in[1]);
                if (arrays_[nd.in[0]].requires_grad) {
                    Tensor<T>& dx = arrays_[nd.in[0]].grad;
                    for (int s = 0; s < steps; ++s)
                        for (int ci = 0; ci < cin; ++ci) {
                            T acc = T(0);
                            for (int dk = 0; dk < k; ++dk) {
                                const int t = s - dk + pad;
                                if (t < 0 || t >= steps) continue;
                                for (int o = 0; o < cout; ++o)
                                    acc += dy.data[int64_t(t) * cout + o] * W.data[(int64_t(o) * cin + ci) * k + dk];
                            }
                            dx.data[int64_t(s) * cin + ci] += acc;
                        }
                }
                if (arrays_[nd.in[1]].requires_grad) {
                    Tensor<T>& dw = arrays_[nd.in[1]].grad;
                    for (int o = 0; o < cout; ++o)
                        for (int ci = 0; ci < cin; ++ci)
                            for (int dk = 0; dk < k; ++dk) {
                                T acc = T(0);
                                for (int t = 0; t < steps; ++t) {
                                    const int s = t + dk - pad;
                                    if (s < 0 || s >= steps) continue;
                                    acc += dy.data[int64_t(t) * cout + o] * X.data[int64_t(s) * cin + ci];
                                }
                                dw.data[(int64_t(o) * cin + ci) * k + dk] += acc;
                            }
                }
                if (arrays_[nd.in[2]].requires_grad) {
                    Tensor<T>& db = arrays_[nd.in[2]].grad;
                    for (int t = 0; t < steps; ++t)
                        for (int o = 0; o < cout; ++o) db.data[o] += dy.data[int64_t(t) * cout + o];
                }
                break;
            }
            case Op::Dropout: {
                const Tensor<T>& mask = nd.saved[0];
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * mask.data[i];
                break;
            }
            case Op::Reshape: {
                Tensor<T>& da = arrays_[nd.in[0]].grad;
                for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
                break;
            }
            case Op::MseMasked: {
                const int rows = nd.iattr[0];
                const Tensor<T>& P = val(nd.in[0]);
                const Tensor<T>& Q = val(nd.in[1]);
                const T g = dy.data[0] * T(2) / T(rows);
                if (arrays_[nd.in[0]].requires_grad) {
                    Tensor<T>& dp = arrays_[nd.in[0]].grad;
                    for (int64_t i = 0; i < P.numel(); ++i) dp.data[i] += g * (P.data[i] - Q.data[i]);
                }
                if (arrays_[nd.in[1]].requires_grad) {
                    Tensor<T>& dq = arrays_[nd.in[1]].grad;
                    for (int64_t i = 0; i < P.numel(); ++i) dq.data[i] -= g * (P.data[i] - Q.data[i]);
                }
                break;
            }
            case Op::CrossEntropy: {
                const int cols = nd.iattr.back();
                const int rows = nd.iattr[nd.iattr.size() - 2];
                const Tensor<T>& P = val(nd.in[0]);
                Tensor<T>& dp = arrays_[nd.in[0]].grad;
                const T g = dy.data[0] / T(rows);
                for (int r = 0; r < rows; ++r) {
                    const int t = nd.iattr[r];
                    const double p = double(P.data[int64_t(r) * cols + t]);
                    if (prob_in_range(p)) dp.data[int64_t(r) * cols + t] -= g / T(p);
                }
                break;
            }
            case Op::BinaryCrossEntropy: {
                const Tensor<T>& P = val(nd.in[0]);
                const Tensor<T>& Y = val(nd.in[1]);
                const T g = dy.data[0] / T(P.numel());
                if (arrays_[nd.in[0]].requires_grad) {
                    Tensor<T>& dp = arrays_[nd.in[0]].grad;
                    for (int64_t i = 0; i < P.numel(); ++i) {
                        const double p = double(P.data[i]);
                        if (!prob_in_range(p)) continue;
                        dp.data[i] += g * T((p - double(Y.data[i])) / (p * (1.0 - p)));
                    }
                }
                if (arrays_[nd.in[1]].requires_grad) {
                    Tensor<T>& dt = arrays_[nd.in[1]].grad;
                    for (int64_t i = 0; i < P.numel(); ++i) {
                        const double p = clamp_prob(double(P.data[i]));
                        dt.data[i] -= g * T(std::log(p) - std::log(1.0 - p));
                    }
                }
                break;
            }
        }
    }

    void accumulate(int id, const Tensor<T>& delta) {
        Tensor<T>& g = arrays_[id].grad;
        for (int64_t i = 0; i < g.numel(); ++i) g.data[i] += delta.data[i];
    }
};

// Central finite differences against analytic gradients.
//
// f(params, grads) returns the scalar loss; when grads is non-null it must
// also fill one same-shape gradient tensor per parameter (typically by
// building a graph and calling backward). f must be deterministic: repeated
// calls with the same params reproduce the same loss, including any
// dropout draws.
struct FdReport {
    double max_rel_err = 0.0;
    int worst_param = -1;
    int64_t worst_coord = -1;
};

inline FdReport finite_diff_check(
    const std::function<double(const std::vector<Tensor<double>>&, std::vector<Tensor<double>>*)>& f,
    std::vector<Tensor<double>> params, double step) {
    if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
    std::vector<Tensor<double>> grads;
    const double base = f(params, &grads);
    FdReport rep;
    if (!std::isfinite(base)) {
        rep.max_rel_err = std::numeric_limits<double>::infinity();
        return rep;
    }
    for (size_t p = 0; p < params.size(); ++p) {
        for (int64_t i = 0; i < params[p].numel(); ++i) {
            const double keep = params[p].data[i];
            params[p].data[i] = keep + step;
            const double up = f(params, nullptr);
            params[p].data[i] = keep - step;
            const double dn = f(params, nullptr);
            params[p].data[i] = keep;
            const double numeric = (up - dn) / (2.0 * step);
            const double analytic = grads[p].data[i];
            double err;
            if (!std::isfinite(up) || !std::isfinite(dn))
                err = std::numeric_limits<double>::infinity();
            else
                err = std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = int(p);
                rep.worst_coord = i;
            }
        }
    }
    return rep;
}

}  // namespace iajepa
