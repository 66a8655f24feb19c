// Joint-embedding predictive architecture: a context encoder and an
// exponential-moving-average target encoder over tubelet tokens, plus a
// shallower predictor that regresses target embeddings at masked positions.
//
// Two forward paths share the same kernels and apply operations in the same
// order, so they agree bit-for-bit on identical inputs:
//   * graph builders (build_encoder_graph / build_predictor_graph) record the
//     computation on an autodiff Graph for training,
//   * plain-tensor functions (encode_context / encode_target / predict) run
//     gradient-free inference for target computation and feature extraction.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iajepa/autodiff.hpp"
#include "iajepa/grid.hpp"
#include "iajepa/kernels.hpp"
#include "iajepa/rng.hpp"
#include "iajepa/tensor.hpp"

namespace iajepa::model {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Architecture hyper-parameters. Defaults are the full-size configuration;
// tests shrink them. The predictor reuses the context encoder's positional
// table and is required to be shallower than the encoder.
struct ModelConfig {
    int d = 192;          // embedding width
    int enc_layers = 6;   // transformer blocks in each encoder
    int pred_layers = 3;  // transformer blocks in the predictor
    int heads = 6;        // attention heads (head dim = d / heads)
    int ff_ratio = 4;     // feed-forward hidden = ff_ratio * d
    int tokens = kTokens;
    int values = kTubeletValues;  // flattened values per tubelet token
    double ema_momentum = 0.996;
    bool normalize_targets = false;  // standardize each target row

    int head_dim() const { return d / heads; }
    int ff_dim() const { return ff_ratio * d; }

    void validate() const {
        if (d <= 0) throw ModelError("model config: d must be positive");
        if (heads <= 0) throw ModelError("model config: heads must be positive");
        if (d % heads != 0) throw ModelError("model config: d must be divisible by heads");
        if (enc_layers <= 0) throw ModelError("model config: enc_layers must be positive");
        if (pred_layers <= 0) throw ModelError("model config: pred_layers must be positive");
        if (pred_layers >= enc_layers)
            throw ModelError("model config: predictor must be shallower than the encoder");
        if (ff_ratio <= 0) throw ModelError("model config: ff_ratio must be positive");
        if (tokens <= 0) throw ModelError("model config: tokens must be positive");
        if (values <= 0) throw ModelError("model config: values must be positive");
        if (!(ema_momentum > 0.0 && ema_momentum < 1.0))
            throw ModelError("model config: ema_momentum must lie in (0,1)");
    }
};

// Ordered, named parameter store. Order is fixed at construction and drives
// initialization draws, optimizer slot layout, and checkpoint layout.
template <typename T>
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor<T>> tensors;
    std::unordered_map<std::string, size_t> index;

    Tensor<T>& add(const std::string& name, std::vector<int> shape) {
        if (index.count(name)) throw ModelError("parameter set: duplicate name " + name);
        index.emplace(name, names.size());
        names.push_back(name);
        tensors.emplace_back(std::move(shape));
        return tensors.back();
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    Tensor<T>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ModelError("parameter set: unknown name " + name);
        return tensors[it->second];
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ModelError("parameter set: unknown name " + name);
        return tensors[it->second];
    }
    size_t size() const { return tensors.size(); }
    int64_t count() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        out.names = names;
        out.index = index;
        out.tensors.reserve(tensors.size());
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }
};

namespace detail {

inline std::string last_component(const std::string& name) {
    const size_t pos = name.rfind('.');
    return pos == std::string::npos ? name : name.substr(pos + 1);
}

// Initialization rule by name: layer-norm gains ("g") start at one, bias
// vectors (leaf name starting with 'b') at zero, everything else at
// normal(0, 0.02). Draw order follows parameter-set order.
inline bool gain_name(const std::string& name) { return last_component(name) == "g"; }
inline bool bias_name(const std::string& name) {
    const std::string leaf = last_component(name);
    return !leaf.empty() && leaf[0] == 'b';
}

}  // namespace detail

template <typename T>
void init_params(ParamSet<T>& p, Rng& rng) {
    for (size_t i = 0; i < p.size(); ++i) {
        Tensor<T>& t = p.tensors[i];
        if (detail::gain_name(p.names[i])) {
            std::fill(t.data.begin(), t.data.end(), T(1));
        } else if (detail::bias_name(p.names[i])) {
            std::fill(t.data.begin(), t.data.end(), T(0));
        } else {
            for (auto& v : t.data) v = T(rng.normal(0.0, 0.02));
        }
    }
}

namespace detail {

template <typename T>
void add_block_params(ParamSet<T>& p, const std::string& prefix, const ModelConfig& cfg) {
    const int d = cfg.d, hd = cfg.head_dim(), ff = cfg.ff_dim();
    p.add(prefix + ".ln1.g", {1, d});
    p.add(prefix + ".ln1.b", {1, d});
    for (int h = 0; h < cfg.heads; ++h) {
        const std::string hp = prefix + ".attn.h" + std::to_string(h);
        p.add(hp + ".wq", {d, hd});
        p.add(hp + ".bq", {1, hd});
        // No key bias: softmax is invariant to per-row constant score shifts,
        // and a key bias only ever adds q·b uniformly across a row, so the
        // parameter would be exactly gradient-free.
        p.add(hp + ".wk", {d, hd});
        p.add(hp + ".wv", {d, hd});
        p.add(hp + ".bv", {1, hd});
    }
    p.add(prefix + ".attn.wo", {d, d});
    p.add(prefix + ".attn.bo", {1, d});
    p.add(prefix + ".ln2.g", {1, d});
    p.add(prefix + ".ln2.b", {1, d});
    p.add(prefix + ".ff.w1", {d, ff});
    p.add(prefix + ".ff.b1", {1, ff});
    p.add(prefix + ".ff.w2", {ff, d});
    p.add(prefix + ".ff.b2", {1, d});
}

}  // namespace detail

// Encoder parameters: token embedding (affine map from flattened tubelet
// values), learned positional table over all token slots, transformer
// blocks, and a final layer norm.
template <typename T>
ParamSet<T> make_encoder_params(const ModelConfig& cfg) {
    ParamSet<T> p;
    p.add("embed.w", {cfg.values, cfg.d});
    p.add("embed.b", {1, cfg.d});
    p.add("embed.pos", {cfg.tokens, cfg.d});
    for (int l = 0; l < cfg.enc_layers; ++l) detail::add_block_params(p, "blk" + std::to_string(l), cfg);
    p.add("final.g", {1, cfg.d});
    p.add("final.b", {1, cfg.d});
    return p;
}

// Predictor parameters: a learned mask token, transformer blocks, and an
// output projection. No positional table of its own (it borrows the context
// encoder's) and no final layer norm.
template <typename T>
ParamSet<T> make_predictor_params(const ModelConfig& cfg) {
    ParamSet<T> p;
    p.add("m_tok", {1, cfg.d});
    for (int l = 0; l < cfg.pred_layers; ++l) detail::add_block_params(p, "blk" + std::to_string(l), cfg);
    p.add("out.w", {cfg.d, cfg.d});
    p.add("out.b", {1, cfg.d});
    return p;
}

// The three networks. The target encoder starts as an exact copy of the
// context encoder and thereafter follows it through ema_update only.
template <typename T>
struct JepaModel {
    ModelConfig cfg;
    ParamSet<T> phi;    // context encoder
    ParamSet<T> xi;     // target encoder (EMA of phi)
    ParamSet<T> theta;  // predictor

    static JepaModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        JepaModel m;
        m.cfg = cfg;
        m.phi = make_encoder_params<T>(cfg);
        m.theta = make_predictor_params<T>(cfg);
        Rng rng(seed);
        init_params(m.phi, rng);
        init_params(m.theta, rng);
        m.xi = m.phi;
        return m;
    }
};

// ----- index validation -----

namespace detail {

inline void check_token_indices(int tokens, const std::vector<int>& idx, const std::string& what) {
    if (idx.empty()) throw ModelError(what + ": empty index set");
    int prev = -1;
    for (int i : idx) {
        if (i < 0 || i >= tokens)
            throw ModelError(what + ": index " + std::to_string(i) + " outside [0," + std::to_string(tokens) + ")");
        if (i <= prev) throw ModelError(what + ": indices must be strictly ascending");
        prev = i;
    }
}

inline void check_predict_indices(int tokens, const std::vector<int>& vis, const std::vector<int>& masked) {
    check_token_indices(tokens, vis, "predict: visible");
    check_token_indices(tokens, masked, "predict: masked");
    size_t a = 0, b = 0;
    while (a < vis.size() && b < masked.size()) {
        if (vis[a] == masked[b])
            throw ModelError("predict: visible and masked indices overlap at " + std::to_string(vis[a]));
        if (vis[a] < masked[b]) ++a;
        else ++b;
    }
}

}  // namespace detail

// ----- plain-tensor inference ops (mirror graph ops exactly) -----

namespace detail {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
    const int m = ta ? a.dim(1) : a.dim(0);
    const int k = ta ? a.dim(0) : a.dim(1);
    const int n = tb ? b.dim(0) : b.dim(1);
    Tensor<T> out({m, n});
    kern::matmul(a.data.data(), b.data.data(), out.data.data(), m, n, k, ta, tb);
    return out;
}

template <typename T>
void add_bias_inplace(Tensor<T>& a, const Tensor<T>& bias) {
    const int rows = a.dim(0), cols = a.dim(1);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) a.data[int64_t(r) * cols + c] = a.data[int64_t(r) * cols + c] + bias.data[c];
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    for (int64_t i = 0; i < a.numel(); ++i) a.data[i] = a.data[i] + b.data[i];
}

template <typename T>
void scale_inplace(Tensor<T>& a, double s) {
    for (int64_t i = 0; i < a.numel(); ++i) a.data[i] = T(s) * a.data[i];
}

template <typename T>
void gelu_inplace(Tensor<T>& a) {
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double x = double(a.data[i]);
        a.data[i] = T(0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)));
    }
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    const int cols = x.last_dim();
    const int rows = static_cast<int>(x.numel() / cols);
    Tensor<T> y(x.shape);
    std::vector<T> mu(rows), inv(rows);
    kern::layer_norm_rows(x.data.data(), gamma.data.data(), beta.data.data(), y.data.data(), mu.data(), inv.data(),
                          rows, cols, T(kLayerNormEps));
    return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    const int cols = x.last_dim();
    const int rows = static_cast<int>(x.numel() / cols);
    Tensor<T> y(x.shape);
    kern::softmax_rows(x.data.data(), y.data.data(), rows, cols);
    return y;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, const std::vector<int>& idx) {
    const int cols = a.dim(1);
    Tensor<T> out({static_cast<int>(idx.size()), cols});
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= a.dim(0)) throw ModelError("gather: row index out of range");
        std::copy_n(a.data.begin() + int64_t(idx[r]) * cols, cols, out.data.begin() + int64_t(r) * cols);
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dim(1) != b.dim(1)) throw ModelError("concat_rows: column counts differ");
    Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1)});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
    return out;
}

// One pre-norm transformer block on plain tensors; operation order matches
// build_block_graph statement for statement.
template <typename T>
Tensor<T> run_block(const ModelConfig& cfg, const ParamSet<T>& p, const std::string& prefix, Tensor<T> x) {
    const Tensor<T> h = layer_norm(x, p.at(prefix + ".ln1.g"), p.at(prefix + ".ln1.b"));
    const double inv_sqrt_hd = 1.0 / std::sqrt(double(cfg.head_dim()));
    const int n = x.dim(0);
    Tensor<T> cat({n, cfg.d});
    for (int j = 0; j < cfg.heads; ++j) {
        const std::string hp = prefix + ".attn.h" + std::to_string(j);
        Tensor<T> q = matmul(h, p.at(hp + ".wq"));
        add_bias_inplace(q, p.at(hp + ".bq"));
        Tensor<T> k = matmul(h, p.at(hp + ".wk"));
        Tensor<T> v = matmul(h, p.at(hp + ".wv"));
        add_bias_inplace(v, p.at(hp + ".bv"));
        Tensor<T> s = matmul(q, k, false, true);
        scale_inplace(s, inv_sqrt_hd);
        Tensor<T> o = matmul(softmax(s), v);
        const int hd = cfg.head_dim();
        for (int r = 0; r < n; ++r)
            std::copy_n(o.data.begin() + int64_t(r) * hd, hd, cat.data.begin() + int64_t(r) * cfg.d + int64_t(j) * hd);
    }
    Tensor<T> proj = matmul(cat, p.at(prefix + ".attn.wo"));
    add_bias_inplace(proj, p.at(prefix + ".attn.bo"));
    add_inplace(x, proj);
    const Tensor<T> h2 = layer_norm(x, p.at(prefix + ".ln2.g"), p.at(prefix + ".ln2.b"));
    Tensor<T> f = matmul(h2, p.at(prefix + ".ff.w1"));
    add_bias_inplace(f, p.at(prefix + ".ff.b1"));
    gelu_inplace(f);
    Tensor<T> f2 = matmul(f, p.at(prefix + ".ff.w2"));
    add_bias_inplace(f2, p.at(prefix + ".ff.b2"));
    add_inplace(x, f2);
    return x;
}

// Shared encoder trunk: affine token embedding + positional rows for idx,
// blocks, final layer norm. token_rows is [|idx|, values], already gathered.
template <typename T>
Tensor<T> run_encoder(const ModelConfig& cfg, const ParamSet<T>& enc, const Tensor<T>& token_rows,
                      const std::vector<int>& idx) {
    if (token_rows.rank() != 2 || token_rows.dim(0) != static_cast<int>(idx.size()) || token_rows.dim(1) != cfg.values)
        throw ModelError("encoder: token rows must be [" + std::to_string(idx.size()) + "," +
                         std::to_string(cfg.values) + "], got " + shape_str(token_rows.shape));
    Tensor<T> e = matmul(token_rows, enc.at("embed.w"));
    add_bias_inplace(e, enc.at("embed.b"));
    add_inplace(e, gather(enc.at("embed.pos"), idx));
    for (int l = 0; l < cfg.enc_layers; ++l) e = run_block(cfg, enc, "blk" + std::to_string(l), std::move(e));
    return layer_norm(e, enc.at("final.g"), enc.at("final.b"));
}

}  // namespace detail

// Context encoding: embeds and encodes only the visible tokens. Errors on an
// empty visible set; indices must be strictly ascending. Output row r
// corresponds to vis[r].
template <typename T>
Tensor<T> encode_context(const ModelConfig& cfg, const ParamSet<T>& phi, const Tensor<T>& tokens,
                         const std::vector<int>& vis) {
    detail::check_token_indices(cfg.tokens, vis, "encode_context");
    if (tokens.rank() != 2 || tokens.dim(0) != cfg.tokens || tokens.dim(1) != cfg.values)
        throw ModelError("encode_context: tokens must be [" + std::to_string(cfg.tokens) + "," +
                         std::to_string(cfg.values) + "], got " + shape_str(tokens.shape));
    return detail::run_encoder(cfg, phi, detail::gather(tokens, vis), vis);
}

// Target encoding: the full token sequence through the target encoder,
// gradient-free. With normalize_targets, each output row is standardized to
// zero mean / unit variance (same epsilon as layer norm).
template <typename T>
Tensor<T> encode_target(const ModelConfig& cfg, const ParamSet<T>& xi, const Tensor<T>& tokens) {
    if (tokens.rank() != 2 || tokens.dim(0) != cfg.tokens || tokens.dim(1) != cfg.values)
        throw ModelError("encode_target: tokens must be [" + std::to_string(cfg.tokens) + "," +
                         std::to_string(cfg.values) + "], got " + shape_str(tokens.shape));
    std::vector<int> all(cfg.tokens);
    std::iota(all.begin(), all.end(), 0);
    Tensor<T> out = detail::run_encoder(cfg, xi, tokens, all);
    if (cfg.normalize_targets) {
        const Tensor<T> ones = Tensor<T>::full({1, cfg.d}, T(1));
        const Tensor<T> zeros = Tensor<T>::zeros({1, cfg.d});
        out = detail::layer_norm(out, ones, zeros);
    }
    return out;
}

// Predictor inference. ctx rows correspond to vis; positions come from the
// context encoder's positional table. Returns one row per masked index, in
// ascending masked order. Visible and masked sets must not overlap but need
// not cover all token slots (partial unions support latent rollouts).
template <typename T>
Tensor<T> predict(const ModelConfig& cfg, const ParamSet<T>& theta, const Tensor<T>& pos, const Tensor<T>& ctx,
                  const std::vector<int>& vis, const std::vector<int>& masked) {
    detail::check_predict_indices(cfg.tokens, vis, masked);
    if (pos.rank() != 2 || pos.dim(0) != cfg.tokens || pos.dim(1) != cfg.d)
        throw ModelError("predict: positional table must be [" + std::to_string(cfg.tokens) + "," +
                         std::to_string(cfg.d) + "], got " + shape_str(pos.shape));
    if (ctx.rank() != 2 || ctx.dim(0) != static_cast<int>(vis.size()) || ctx.dim(1) != cfg.d)
        throw ModelError("predict: context must be [" + std::to_string(vis.size()) + "," + std::to_string(cfg.d) +
                         "], got " + shape_str(ctx.shape));
    const int nm = static_cast<int>(masked.size());
    const Tensor<T>& m_tok = theta.at("m_tok");
    Tensor<T> mrows({nm, cfg.d});
    for (int r = 0; r < nm; ++r) std::copy_n(m_tok.data.begin(), cfg.d, mrows.data.begin() + int64_t(r) * cfg.d);
    detail::add_inplace(mrows, detail::gather(pos, masked));
    Tensor<T> seq = detail::concat_rows(ctx, mrows);
    for (int l = 0; l < cfg.pred_layers; ++l) seq = detail::run_block(cfg, theta, "blk" + std::to_string(l), std::move(seq));
    std::vector<int> sel(nm);
    std::iota(sel.begin(), sel.end(), static_cast<int>(vis.size()));
    Tensor<T> out = detail::matmul(detail::gather(seq, sel), theta.at("out.w"));
    detail::add_bias_inplace(out, theta.at("out.b"));
    return out;
}

// Prediction loss on plain tensors: mean over rows of the squared L2
// distance between predicted and target rows (no division by width).
// Accumulation matches the graph's masked mean-squared-error op.
template <typename T>
T jepa_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target)) throw ModelError("jepa_loss: shapes differ");
    const int cols = pred.last_dim();
    const int rows = static_cast<int>(pred.numel() / cols);
    T acc = T(0);
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const T d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / T(rows);
}

// EMA tracking update: xi <- m * xi + (1 - m) * phi, elementwise in double.
// Parameter sets must share names, order, and shapes.
template <typename T>
void ema_update(ParamSet<T>& xi, const ParamSet<T>& phi, double m) {
    if (m < 0.0 || m > 1.0) throw ModelError("ema_update: momentum outside [0,1]");
    if (xi.names != phi.names) throw ModelError("ema_update: parameter sets differ");
    for (size_t i = 0; i < xi.size(); ++i) {
        Tensor<T>& a = xi.tensors[i];
        const Tensor<T>& b = phi.tensors[i];
        if (!a.same_shape(b)) throw ModelError("ema_update: shape mismatch at " + xi.names[i]);
        for (int64_t j = 0; j < a.numel(); ++j)
            a.data[j] = T(m * double(a.data[j]) + (1.0 - m) * double(b.data[j]));
    }
}

// Root sum-of-squares distance between two parameter sets (double accumulate).
template <typename T>
double param_distance(const ParamSet<T>& a, const ParamSet<T>& b) {
    if (a.names != b.names) throw ModelError("param_distance: parameter sets differ");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        for (int64_t j = 0; j < a.tensors[i].numel(); ++j) {
            const double d = double(a.tensors[i].data[j]) - double(b.tensors[i].data[j]);
            acc += d * d;
        }
    return std::sqrt(acc);
}

// ----- graph builders (training path) -----

using IdMap = std::unordered_map<std::string, int>;

template <typename T>
IdMap bind_params(Graph<T>& g, const ParamSet<T>& p) {
    IdMap ids;
    for (size_t i = 0; i < p.size(); ++i) ids[p.names[i]] = g.param(p.tensors[i]);
    return ids;
}

template <typename T>
IdMap bind_constants(Graph<T>& g, const ParamSet<T>& p) {
    IdMap ids;
    for (size_t i = 0; i < p.size(); ++i) ids[p.names[i]] = g.constant(p.tensors[i]);
    return ids;
}

namespace detail {

inline int map_at(const IdMap& ids, const std::string& name) {
    auto it = ids.find(name);
    if (it == ids.end()) throw ModelError("graph builder: unbound parameter " + name);
    return it->second;
}

template <typename T>
int build_block_graph(Graph<T>& g, const ModelConfig& cfg, const IdMap& ids, const std::string& prefix, int x) {
    auto id = [&](const std::string& leaf) { return map_at(ids, prefix + leaf); };
    const int h = g.layer_norm(x, id(".ln1.g"), id(".ln1.b"));
    const double inv_sqrt_hd = 1.0 / std::sqrt(double(cfg.head_dim()));
    std::vector<int> outs;
    outs.reserve(cfg.heads);
    for (int j = 0; j < cfg.heads; ++j) {
        const std::string hp = ".attn.h" + std::to_string(j);
        const int q = g.add(g.matmul(h, id(hp + ".wq")), id(hp + ".bq"));
        const int k = g.matmul(h, id(hp + ".wk"));
        const int v = g.add(g.matmul(h, id(hp + ".wv")), id(hp + ".bv"));
        const int s = g.scale(g.matmul(q, k, false, true), inv_sqrt_hd);
        outs.push_back(g.matmul(g.softmax_lastdim(s), v));
    }
    const int cat = outs.size() == 1 ? outs[0] : g.concat_lastdim(outs);
    const int proj = g.add(g.matmul(cat, id(".attn.wo")), id(".attn.bo"));
    x = g.add(x, proj);
    const int h2 = g.layer_norm(x, id(".ln2.g"), id(".ln2.b"));
    const int f = g.add(g.matmul(g.gelu(g.add(g.matmul(h2, id(".ff.w1")), id(".ff.b1"))), id(".ff.w2")), id(".ff.b2"));
    return g.add(x, f);
}

}  // namespace detail

// Graph twin of run_encoder: token_rows is a graph id holding [|idx|, values].
template <typename T>
int build_encoder_graph(Graph<T>& g, const ModelConfig& cfg, const IdMap& ids, int token_rows,
                        const std::vector<int>& idx) {
    if (g.val(token_rows).dim(0) != static_cast<int>(idx.size()))
        throw ModelError("build_encoder_graph: token row count does not match index count");
    int e = g.add(g.add(g.matmul(token_rows, detail::map_at(ids, "embed.w")), detail::map_at(ids, "embed.b")),
                  g.gather_rows(detail::map_at(ids, "embed.pos"), idx));
    for (int l = 0; l < cfg.enc_layers; ++l) e = detail::build_block_graph(g, cfg, ids, "blk" + std::to_string(l), e);
    return g.layer_norm(e, detail::map_at(ids, "final.g"), detail::map_at(ids, "final.b"));
}

// Graph twin of predict(). pos_id points at the context encoder's positional
// table inside the same graph, so its gradient flows through the predictor.
template <typename T>
int build_predictor_graph(Graph<T>& g, const ModelConfig& cfg, const IdMap& theta_ids, int pos_id, int ctx,
                          const std::vector<int>& vis, const std::vector<int>& masked) {
    detail::check_predict_indices(cfg.tokens, vis, masked);
    if (g.val(ctx).dim(0) != static_cast<int>(vis.size()))
        throw ModelError("build_predictor_graph: context rows do not match visible count");
    const int nm = static_cast<int>(masked.size());
    const int mask_pos = g.gather_rows(pos_id, masked);
    const int ones = g.constant(Tensor<T>::full({nm, 1}, T(1)));
    const int mrows = g.add(g.matmul(ones, detail::map_at(theta_ids, "m_tok")), mask_pos);
    int seq = g.concat_rows({ctx, mrows});
    for (int l = 0; l < cfg.pred_layers; ++l)
        seq = detail::build_block_graph(g, cfg, theta_ids, "blk" + std::to_string(l), seq);
    std::vector<int> sel(nm);
    std::iota(sel.begin(), sel.end(), static_cast<int>(vis.size()));
    return g.add(g.matmul(g.gather_rows(seq, sel), detail::map_at(theta_ids, "out.w")),
                 detail::map_at(theta_ids, "out.b"));
}

// One training step's forward graph: context encoding of the visible tokens,
// prediction at the masked positions, and the loss against externally
// computed target rows (entered as constants, so no gradient reaches the
// target encoder).
template <typename T>
struct JepaStep {
    IdMap phi;
    IdMap theta;
    int context = -1;      // [|vis|, d]
    int predictions = -1;  // [|masked|, d]
    int targets = -1;      // [|masked|, d] constant (no gradient flows to it)
    int loss = -1;         // scalar
};

template <typename T>
JepaStep<T> build_jepa_step(Graph<T>& g, const ModelConfig& cfg, const ParamSet<T>& phi, const ParamSet<T>& theta,
                            const Tensor<T>& tokens, const std::vector<int>& vis, const std::vector<int>& masked,
                            const Tensor<T>& target_rows) {
    detail::check_predict_indices(cfg.tokens, vis, masked);
    if (tokens.rank() != 2 || tokens.dim(0) != cfg.tokens || tokens.dim(1) != cfg.values)
        throw ModelError("build_jepa_step: tokens must be [" + std::to_string(cfg.tokens) + "," +
                         std::to_string(cfg.values) + "], got " + shape_str(tokens.shape));
    if (target_rows.rank() != 2 || target_rows.dim(0) != static_cast<int>(masked.size()) ||
        target_rows.dim(1) != cfg.d)
        throw ModelError("build_jepa_step: target rows must be [" + std::to_string(masked.size()) + "," +
                         std::to_string(cfg.d) + "], got " + shape_str(target_rows.shape));
    JepaStep<T> st;
    st.phi = bind_params(g, phi);
    st.theta = bind_params(g, theta);
    const int token_rows = g.constant(detail::gather(tokens, vis));
    st.context = build_encoder_graph(g, cfg, st.phi, token_rows, vis);
    st.predictions = build_predictor_graph(g, cfg, st.theta, st.phi.at("embed.pos"), st.context, vis, masked);
    st.targets = g.constant(target_rows);
    st.loss = g.mse_masked(st.predictions, st.targets);
    return st;
}

// Target rows for one step: full-sequence target encoding, rows gathered at
// the masked indices (ascending).
template <typename T>
Tensor<T> target_rows_for(const ModelConfig& cfg, const ParamSet<T>& xi, const Tensor<T>& tokens,
                          const std::vector<int>& masked) {
    detail::check_token_indices(cfg.tokens, masked, "target_rows_for");
    return detail::gather(encode_target(cfg, xi, tokens), masked);
}

}  // namespace iajepa::model
