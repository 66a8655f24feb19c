// Frozen-feature probes. The backbone never appears here: every probe
// consumes a consolidated feature bank (plus templated question/answer items
// for the multimodal reasoner) and optimizes only its own small parameter
// set. Three probes: a gated multimodal reasoner (shared text GRU + scene
// tower + two heads routed by task), a collision expert (linear on
// mean-pooled features), and a 5-way event-class readout.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iajepa/autodiff.hpp"
#include "iajepa/dataset.hpp"
#include "iajepa/model.hpp"
#include "iajepa/optim.hpp"
#include "iajepa/rng.hpp"
#include "iajepa/tensor.hpp"
#include "iajepa/train.hpp"
#include "iajepa/worldsim.hpp"

namespace iajepa::probe {

struct ProbeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fixed reasoner dimensions.
constexpr int kWordDim = 32;        // learned word embedding size
constexpr int kGruHidden = 256;     // shared GRU hidden state (q and c vectors)
constexpr int kConvChannels = 512;  // scene tower conv output channels
constexpr int kSceneDim = 512;      // scene vector v size
constexpr int kAnswerClasses = 6;   // descriptive "how many are moving": 0..5
constexpr int kMcChoices = 4;

// ----- vocabulary and items -----

// Closed word list: pad token at id 0, then template words, number words, and
// the palette color names, in a fixed harvest order (stable across runs).
struct Vocab {
    std::vector<std::string> words;
    std::map<std::string, int> ids;

    int id(const std::string& w) const {
        auto it = ids.find(w);
        if (it == ids.end()) throw ProbeError("vocab: unknown word '" + w + "'");
        return it->second;
    }
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& toks) const;
    size_t size() const { return words.size(); }
};

Vocab build_vocab();

enum class Task { descriptive, predictive, explanatory, counterfactual };

const std::vector<std::string>& task_names();
std::string task_name(Task t);
Task task_from_name(const std::string& name);

// One templated question. Descriptive items carry a class answer; the three
// multiple-choice tasks carry exactly four choice phrases with independent
// boolean truths (a question scores only when all four decisions match).
struct QAItem {
    uint32_t clip_id = 0;
    Task task = Task::descriptive;
    std::vector<int> question;               // token ids
    int answer = -1;                         // descriptive only
    std::vector<std::vector<int>> choices;   // MC only: exactly 4
    std::array<bool, kMcChoices> truths{};   // MC only

    bool is_mc() const { return task != Task::descriptive; }
    void check(size_t vocab_size) const;
};

// Question generation from a simulated trace. Scenes lacking the structure a
// template needs (e.g. no collision for an explanatory item) skip that item
// rather than mislabel it. Counterfactual truths come from re-simulating the
// trace seed with one object removed, so the trace must originate from
// simulate(cfg, seed).
std::vector<QAItem> build_qa(const world::WorldTrace& trace, const world::WorldConfig& cfg, uint64_t seed,
                             const Vocab& vocab, uint32_t clip_id);

// Re-simulates every manifest clip (seeded per clip id) and concatenates its
// items in manifest order.
std::vector<QAItem> build_qa_for_manifest(const DatasetManifest& manifest, uint64_t seed, const Vocab& vocab);

// JSON-lines round trip, one item per line.
void write_qa_jsonl(const std::string& path, const std::vector<QAItem>& items);
std::vector<QAItem> read_qa_jsonl(const std::string& path);

// ----- multiple-choice scoring -----

// A question counts as correct only when all four thresholded choice
// decisions equal their truth labels; chance for independent fair decisions
// is 0.5^4 = 6.25%.
struct McOutcome {
    std::vector<int> correct;  // 0/1 per question
    double accuracy = 0.0;
};

McOutcome mc_score(const std::vector<std::array<double, kMcChoices>>& probs,
                   const std::vector<std::array<bool, kMcChoices>>& truths, double threshold = 0.5);

// ----- split handling -----

struct Split {
    std::vector<uint32_t> train_ids;
    std::vector<uint32_t> eval_ids;
};

// Seeded 80/20 (holdout fraction) split over distinct clip ids.
Split split_by_clip(std::vector<uint32_t> clip_ids, double holdout, uint64_t seed);
// Aborts on clip-id leakage across the two sides or an empty side.
void validate_split(const Split& split);

// ----- event classes (5-way readout targets) -----

const std::vector<std::string>& event_class_names();
int event_class_id(const std::string& name);

// ----- probe parameter sets -----

template <typename T>
model::ParamSet<T> make_reasoner_params(int vocab_size, int d_feat, int answers = kAnswerClasses) {
    if (vocab_size <= 0 || d_feat <= 0 || answers <= 0) throw ProbeError("reasoner params: non-positive dimension");
    model::ParamSet<T> p;
    p.add("embed.w", {vocab_size, kWordDim});
    for (const char* gate : {"z", "r", "h"}) {
        p.add(std::string("gru.w") + gate, {kWordDim, kGruHidden});
        p.add(std::string("gru.u") + gate, {kGruHidden, kGruHidden});
        p.add(std::string("gru.b") + gate, {1, kGruHidden});
    }
    p.add("tower.conv.w", {kConvChannels, d_feat, 3});
    p.add("tower.conv.b", {1, kConvChannels});
    p.add("tower.out.w", {kSlices * kConvChannels, kSceneDim});
    p.add("tower.out.b", {1, kSceneDim});
    p.add("head.d.w", {kSceneDim + kGruHidden, answers});
    p.add("head.d.b", {1, answers});
    p.add("head.c.w", {kSceneDim + 2 * kGruHidden, 1});
    p.add("head.c.b", {1, 1});
    return p;
}

template <typename T>
model::ParamSet<T> make_collision_params(int d_feat) {
    model::ParamSet<T> p;
    p.add("out.w", {d_feat, 1});
    p.add("out.b", {1, 1});
    return p;
}

template <typename T>
model::ParamSet<T> make_readout_params(int d_feat, int classes) {
    model::ParamSet<T> p;
    p.add("out.w", {d_feat, classes});
    p.add("out.b", {1, classes});
    return p;
}

// ----- reasoner graph builders -----

// Text encoder: embed the token sequence and run the shared GRU left to
// right from a zero hidden state; the final hidden state is the vector.
template <typename T>
int encode_text_node(Graph<T>& g, const model::IdMap& ids, const std::vector<int>& tokens, int vocab_size) {
    if (tokens.empty()) throw ProbeError("encode_text: empty token sequence");
    for (int t : tokens)
        if (t < 0 || t >= vocab_size) throw ProbeError("encode_text: token id " + std::to_string(t) + " outside vocabulary");
    int h = g.constant(Tensor<T>::zeros({1, kGruHidden}));
    for (int t : tokens) {
        const int x = g.gather_rows(ids.at("embed.w"), {t});
        h = g.gru_cell(x, h, ids.at("gru.wz"), ids.at("gru.uz"), ids.at("gru.bz"), ids.at("gru.wr"),
                       ids.at("gru.ur"), ids.at("gru.br"), ids.at("gru.wh"), ids.at("gru.uh"), ids.at("gru.bh"));
    }
    return h;
}

// Scene tower: mean over the 36 spatial cells of each temporal slice, a
// same-padded width-3 temporal convolution with ReLU, then flatten and
// project to the fixed-length scene vector.
template <typename T>
int scene_vector_node(Graph<T>& g, const model::IdMap& ids, int features) {
    const Tensor<T>& F = g.val(features);
    if (F.rank() != 2 || F.dim(0) != kTokens) throw ProbeError("scene_vector: features must be [" + std::to_string(kTokens) + ", d], got " + shape_str(F.shape));
    const int slab = g.mean_over_axis(features, 0, kCells);  // [8, d]
    const int conv = g.relu(g.conv1d_time(slab, ids.at("tower.conv.w"), ids.at("tower.conv.b")));
    const int flat = g.reshape(conv, {1, kSlices * kConvChannels});
    return g.add(g.matmul(flat, ids.at("tower.out.w")), ids.at("tower.out.b"));
}

// Descriptive head: class distribution from [v; q].
template <typename T>
int descriptive_probs_node(Graph<T>& g, const model::IdMap& ids, int v, int q) {
    const int logits = g.add(g.matmul(g.concat_lastdim({v, q}), ids.at("head.d.w")), ids.at("head.d.b"));
    return g.softmax_lastdim(logits);
}

// Causal head: independent Bernoulli probability per choice from [v; q; c_i].
template <typename T>
int causal_probs_node(Graph<T>& g, const model::IdMap& ids, int v, int q, const std::vector<int>& choice_vecs) {
    if (choice_vecs.size() != kMcChoices) throw ProbeError("causal head: exactly 4 choices required");
    std::vector<int> rows;
    rows.reserve(choice_vecs.size());
    for (int c : choice_vecs) rows.push_back(g.concat_lastdim({v, q, c}));
    const int logits = g.add(g.matmul(g.concat_rows(rows), ids.at("head.c.w")), ids.at("head.c.b"));
    return g.sigmoid(logits);  // [4, 1]
}

// Per-item node bundle. The task gate is deterministic: exactly one head is
// built and evaluated for an item, so the other head's parameters receive
// exactly zero gradient from it.
template <typename T>
struct ItemNodes {
    int desc_probs = -1;    // [1, answers] (descriptive)
    int causal_probs = -1;  // [4, 1] (MC tasks)
};

template <typename T>
ItemNodes<T> reasoner_item_nodes(Graph<T>& g, const model::IdMap& ids, const QAItem& item, int features,
                                 int vocab_size, double dropout_rate) {
    item.check(size_t(vocab_size));
    const int v = g.dropout(scene_vector_node(g, ids, features), dropout_rate);
    const int q = g.dropout(encode_text_node(g, ids, item.question, vocab_size), dropout_rate);
    ItemNodes<T> out;
    if (item.task == Task::descriptive) {
        out.desc_probs = descriptive_probs_node(g, ids, v, q);
    } else {
        std::vector<int> cs;
        cs.reserve(item.choices.size());
        for (const auto& phrase : item.choices)
            cs.push_back(g.dropout(encode_text_node(g, ids, phrase, vocab_size), dropout_rate));
        out.causal_probs = causal_probs_node(g, ids, v, q, cs);
    }
    return out;
}

// Batch loss: mean cross-entropy over descriptive items plus mean binary
// cross-entropy over every causal choice decision; the two terms are summed.
template <typename T>
int probe_loss_node(Graph<T>& g, const std::vector<int>& desc_probs, const std::vector<int>& desc_answers,
                    const std::vector<int>& causal_probs, const std::vector<std::array<bool, kMcChoices>>& truths) {
    if (desc_probs.size() != desc_answers.size() || causal_probs.size() != truths.size())
        throw ProbeError("probe_loss: predictions and truths must pair up");
    if (desc_probs.empty() && causal_probs.empty()) throw ProbeError("probe_loss: empty batch");
    int loss = -1;
    if (!desc_probs.empty()) {
        const int rows = desc_probs.size() == 1 ? desc_probs[0] : g.concat_rows(desc_probs);
        loss = g.cross_entropy(rows, desc_answers);
    }
    if (!causal_probs.empty()) {
        const int rows = causal_probs.size() == 1 ? causal_probs[0] : g.concat_rows(causal_probs);
        Tensor<T> y({int(truths.size()) * kMcChoices, 1});
        for (size_t i = 0; i < truths.size(); ++i)
            for (int c = 0; c < kMcChoices; ++c) y.data[i * kMcChoices + c] = T(truths[i][c] ? 1 : 0);
        const int bce = g.binary_cross_entropy(rows, g.constant(std::move(y)));
        loss = loss < 0 ? bce : g.add(loss, bce);
    }
    return loss;
}

// ----- feature bank access -----

namespace detail {

inline size_t bank_row(const train::FeatureBank& bank, uint32_t clip_id) {
    auto it = std::lower_bound(bank.clip_ids.begin(), bank.clip_ids.end(), clip_id);
    if (it == bank.clip_ids.end() || *it != clip_id)
        throw ProbeError("feature bank does not cover clip id " + std::to_string(clip_id));
    return size_t(it - bank.clip_ids.begin());
}

template <typename T>
Tensor<T> bank_slab(const train::FeatureBank& bank, uint32_t clip_id) {
    const float* src = bank.clip(bank_row(bank, clip_id));
    Tensor<T> out({kTokens, bank.d});
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = T(src[i]);
    return out;
}

// Mean over all token rows of a clip's slab -> [d].
template <typename T>
std::vector<T> bank_mean(const train::FeatureBank& bank, size_t row) {
    const float* src = bank.clip(row);
    std::vector<T> mean(size_t(bank.d), T(0));
    const int64_t rows = int64_t(bank.slices) * bank.cells;
    for (int64_t r = 0; r < rows; ++r)
        for (int c = 0; c < bank.d; ++c) mean[c] += T(src[r * bank.d + c]);
    for (auto& m : mean) m /= T(rows);
    return mean;
}

}  // namespace detail

// ----- training scaffolding -----

struct ProbeMetrics {
    std::map<std::string, double> accuracy;  // per-task / per-probe accuracies
    double final_loss = 0.0;
    int train_items = 0;
    int eval_items = 0;
    std::string bank_digest;
};

nlohmann::json metrics_json(const ProbeMetrics& m);
void write_metrics(const std::string& path, const ProbeMetrics& m);

struct ReasonerConfig {
    int epochs = 30;
    int batch = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double dropout = 0.3;
    double holdout = 0.2;
    uint64_t seed = 0;
};

struct LinearProbeConfig {
    int epochs = 200;  // full-batch steps
    double lr = 1e-3;
    double weight_decay = 0.0;
    double holdout = 0.2;
    uint64_t seed = 0;
};

namespace detail {

template <typename T>
void adamw_all(model::ParamSet<T>& params, const Graph<T>& g, const model::IdMap& ids,
               std::vector<OptState<T>>& opt, const AdamwHyper& hyper) {
    for (size_t i = 0; i < params.size(); ++i)
        adamw_step(params.tensors[i], g.grad(ids.at(params.names[i])), opt[i], hyper);
}

}  // namespace detail

// Evaluation forward pass for one item (dropout inactive: eval graphs run
// with training off, independent of any dropout seed).
template <typename T>
struct ItemPrediction {
    std::vector<double> desc_probs;             // descriptive
    std::array<double, kMcChoices> mc_probs{};  // MC tasks
};

template <typename T>
ItemPrediction<T> eval_item(const model::ParamSet<T>& params, const QAItem& item, const train::FeatureBank& bank,
                            int vocab_size) {
    Graph<T> g(0, /*training=*/false);
    const model::IdMap ids = model::bind_constants(g, params);
    const int feats = g.constant(detail::bank_slab<T>(bank, item.clip_id));
    const auto nodes = reasoner_item_nodes<T>(g, ids, item, feats, vocab_size, 0.0);
    ItemPrediction<T> out;
    if (item.task == Task::descriptive) {
        const Tensor<T>& p = g.val(nodes.desc_probs);
        out.desc_probs.assign(p.data.begin(), p.data.end());
    } else {
        const Tensor<T>& p = g.val(nodes.causal_probs);
        for (int c = 0; c < kMcChoices; ++c) out.mc_probs[c] = double(p.data[c]);
    }
    return out;
}

// Evaluates the reasoner on a set of items: descriptive accuracy plus
// all-four-choices accuracy per MC task and overall.
template <typename T>
ProbeMetrics evaluate_reasoner(const model::ParamSet<T>& params, const std::vector<QAItem>& items,
                               const train::FeatureBank& bank, int vocab_size) {
    ProbeMetrics m;
    int desc_total = 0, desc_hit = 0;
    std::map<Task, std::vector<std::array<double, kMcChoices>>> mc_probs;
    std::map<Task, std::vector<std::array<bool, kMcChoices>>> mc_truths;
    for (const auto& item : items) {
        const auto pred = eval_item(params, item, bank, vocab_size);
        if (item.task == Task::descriptive) {
            const int got = int(std::max_element(pred.desc_probs.begin(), pred.desc_probs.end()) -
                                pred.desc_probs.begin());
            desc_total += 1;
            desc_hit += got == item.answer ? 1 : 0;
        } else {
            mc_probs[item.task].push_back(pred.mc_probs);
            mc_truths[item.task].push_back(item.truths);
        }
    }
    if (desc_total > 0) m.accuracy["descriptive"] = double(desc_hit) / desc_total;
    std::vector<std::array<double, kMcChoices>> all_probs;
    std::vector<std::array<bool, kMcChoices>> all_truths;
    for (const auto& [task, probs] : mc_probs) {
        m.accuracy[task_name(task)] = mc_score(probs, mc_truths[task]).accuracy;
        all_probs.insert(all_probs.end(), probs.begin(), probs.end());
        const auto& t = mc_truths[task];
        all_truths.insert(all_truths.end(), t.begin(), t.end());
    }
    if (!all_probs.empty()) m.accuracy["mc_overall"] = mc_score(all_probs, all_truths).accuracy;
    m.eval_items = int(items.size());
    return m;
}

// Trains the gated reasoner on frozen features. Items are split 80/20 by
// clip id (leakage aborts); AdamW touches only reasoner parameters. Returns
// trained parameters and held-out metrics.
template <typename T>
std::pair<model::ParamSet<T>, ProbeMetrics> train_reasoner(const train::FeatureBank& bank,
                                                           const std::vector<QAItem>& items, const Vocab& vocab,
                                                           const ReasonerConfig& rc, const Split* split_override = nullptr) {
    if (items.empty()) throw ProbeError("train_reasoner: no items");
    if (rc.epochs < 0 || rc.batch <= 0 || rc.lr <= 0.0) throw ProbeError("train_reasoner: bad config");
    const int vocab_size = int(vocab.size());
    for (const auto& item : items) {
        item.check(vocab.size());
        detail::bank_row(bank, item.clip_id);  // bank must cover every item
    }

    std::vector<uint32_t> clip_ids;
    clip_ids.reserve(items.size());
    for (const auto& i : items) clip_ids.push_back(i.clip_id);
    const Split split = split_override ? *split_override : split_by_clip(clip_ids, rc.holdout, rc.seed);
    validate_split(split);
    auto in_side = [](const std::vector<uint32_t>& side, uint32_t id) {
        return std::binary_search(side.begin(), side.end(), id);
    };
    std::vector<const QAItem*> train_items, eval_items;
    for (const auto& item : items) {
        if (in_side(split.train_ids, item.clip_id)) train_items.push_back(&item);
        else if (in_side(split.eval_ids, item.clip_id)) eval_items.push_back(&item);
        else throw ProbeError("train_reasoner: clip id " + std::to_string(item.clip_id) + " missing from the split");
    }
    if (train_items.empty() || eval_items.empty()) throw ProbeError("train_reasoner: a split side has no items");

    model::ParamSet<T> params = make_reasoner_params<T>(vocab_size, bank.d);
    Rng init_rng(derive_seed(rc.seed, 0xB0));
    model::init_params(params, init_rng);
    std::vector<OptState<T>> opt;
    opt.reserve(params.size());
    for (const auto& t : params.tensors) opt.emplace_back(t.shape);
    AdamwHyper hyper;
    hyper.lr = rc.lr;
    hyper.weight_decay = rc.weight_decay;

    double final_loss = 0.0;
    for (int epoch = 0; epoch < rc.epochs; ++epoch) {
        std::vector<size_t> order(train_items.size());
        std::iota(order.begin(), order.end(), size_t(0));
        Rng shuffle_rng(derive_seed(rc.seed, 1 + uint64_t(epoch)));
        shuffle_rng.shuffle(order);
        for (size_t lo = 0; lo < order.size(); lo += size_t(rc.batch)) {
            const size_t hi = std::min(order.size(), lo + size_t(rc.batch));
            Graph<T> g(derive_seed(rc.seed, 1 + uint64_t(epoch), 1 + lo), /*training=*/true);
            const model::IdMap ids = model::bind_params(g, params);
            std::vector<int> desc_probs, desc_answers, causal_probs;
            std::vector<std::array<bool, kMcChoices>> truths;
            for (size_t k = lo; k < hi; ++k) {
                const QAItem& item = *train_items[order[k]];
                const int feats = g.constant(detail::bank_slab<T>(bank, item.clip_id));
                const auto nodes = reasoner_item_nodes<T>(g, ids, item, feats, vocab_size, rc.dropout);
                if (item.task == Task::descriptive) {
                    desc_probs.push_back(nodes.desc_probs);
                    desc_answers.push_back(item.answer);
                } else {
                    causal_probs.push_back(nodes.causal_probs);
                    truths.push_back(item.truths);
                }
            }
            const int loss = probe_loss_node<T>(g, desc_probs, desc_answers, causal_probs, truths);
            final_loss = double(g.val(loss).data[0]);
            if (!std::isfinite(final_loss)) throw ProbeError("train_reasoner: non-finite loss");
            g.backward(loss);
            detail::adamw_all(params, g, ids, opt, hyper);
        }
    }

    std::vector<QAItem> held;
    held.reserve(eval_items.size());
    for (const auto* p : eval_items) held.push_back(*p);
    ProbeMetrics metrics = evaluate_reasoner(params, held, bank, vocab_size);
    metrics.final_loss = final_loss;
    metrics.train_items = int(train_items.size());
    metrics.bank_digest = bank.config_digest;
    return {std::move(params), std::move(metrics)};
}

namespace detail {

// Shared scaffolding for the two linear probes: features are the per-clip
// mean over all token rows; training is full-batch AdamW on the train side
// of a seeded clip-id split.
template <typename T, typename LossFn, typename AccFn>
std::pair<model::ParamSet<T>, ProbeMetrics> train_linear_probe(const train::FeatureBank& bank,
                                                               const std::vector<int>& labels,
                                                               const LinearProbeConfig& pc,
                                                               model::ParamSet<T> params, LossFn&& loss_node,
                                                               AccFn&& accuracy, const std::string& metric_key,
                                                               const Split* split_override) {
    if (labels.size() != bank.n()) throw ProbeError("linear probe: one label per bank clip required");
    if (pc.epochs < 0 || pc.lr <= 0.0) throw ProbeError("linear probe: bad config");
    const Split split =
        split_override ? *split_override : split_by_clip(bank.clip_ids, pc.holdout, pc.seed);
    validate_split(split);

    const int d = bank.d;
    auto side_matrix = [&](const std::vector<uint32_t>& ids, std::vector<int>& side_labels) {
        Tensor<T> x({int(ids.size()), d});
        side_labels.clear();
        for (size_t r = 0; r < ids.size(); ++r) {
            const size_t row = bank_row(bank, ids[r]);
            const auto mean = bank_mean<T>(bank, row);
            std::copy(mean.begin(), mean.end(), x.data.begin() + int64_t(r) * d);
            side_labels.push_back(labels[row]);
        }
        return x;
    };
    std::vector<int> y_train, y_eval;
    const Tensor<T> x_train = side_matrix(split.train_ids, y_train);
    const Tensor<T> x_eval = side_matrix(split.eval_ids, y_eval);

    Rng init_rng(derive_seed(pc.seed, 0xB1));
    model::init_params(params, init_rng);
    std::vector<OptState<T>> opt;
    for (const auto& t : params.tensors) opt.emplace_back(t.shape);
    AdamwHyper hyper;
    hyper.lr = pc.lr;
    hyper.weight_decay = pc.weight_decay;

    double final_loss = 0.0;
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
        Graph<T> g;
        const model::IdMap ids = model::bind_params(g, params);
        const int loss = loss_node(g, ids, g.constant(x_train), y_train);
        final_loss = double(g.val(loss).data[0]);
        if (!std::isfinite(final_loss)) throw ProbeError("linear probe: non-finite loss");
        g.backward(loss);
        adamw_all(params, g, ids, opt, hyper);
    }

    ProbeMetrics metrics;
    {
        Graph<T> g;
        const model::IdMap ids = model::bind_constants(g, params);
        metrics.accuracy[metric_key] = accuracy(g, ids, g.constant(x_eval), y_eval);
    }
    metrics.final_loss = final_loss;
    metrics.train_items = int(split.train_ids.size());
    metrics.eval_items = int(split.eval_ids.size());
    metrics.bank_digest = bank.config_digest;
    return {std::move(params), std::move(metrics)};
}

}  // namespace detail

// Collision expert: one logistic unit on the mean of all token features;
// labels are 0/1 collision-present flags aligned with the bank's clips.
template <typename T>
std::pair<model::ParamSet<T>, ProbeMetrics> train_collision(const train::FeatureBank& bank,
                                                            const std::vector<int>& labels,
                                                            const LinearProbeConfig& pc,
                                                            const Split* split_override = nullptr) {
    for (int l : labels)
        if (l != 0 && l != 1) throw ProbeError("train_collision: labels must be 0/1");
    auto loss_node = [](Graph<T>& g, const model::IdMap& ids, int x, const std::vector<int>& y) {
        const int probs = g.sigmoid(g.add(g.matmul(x, ids.at("out.w")), ids.at("out.b")));
        Tensor<T> t({int(y.size()), 1});
        for (size_t i = 0; i < y.size(); ++i) t.data[i] = T(y[i]);
        return g.binary_cross_entropy(probs, g.constant(std::move(t)));
    };
    auto accuracy = [](Graph<T>& g, const model::IdMap& ids, int x, const std::vector<int>& y) {
        const int probs = g.sigmoid(g.add(g.matmul(x, ids.at("out.w")), ids.at("out.b")));
        const Tensor<T>& p = g.val(probs);
        int hit = 0;
        for (size_t i = 0; i < y.size(); ++i) hit += (double(p.data[i]) > 0.5 ? 1 : 0) == y[i] ? 1 : 0;
        return double(hit) / double(y.size());
    };
    return detail::train_linear_probe<T>(bank, labels, pc, make_collision_params<T>(bank.d), loss_node, accuracy,
                                         "collision", split_override);
}

// Linear 5-way readout of the event class from time-averaged features.
template <typename T>
std::pair<model::ParamSet<T>, ProbeMetrics> train_readout(const train::FeatureBank& bank,
                                                          const std::vector<int>& labels,
                                                          const LinearProbeConfig& pc,
                                                          const Split* split_override = nullptr) {
    const int classes = int(event_class_names().size());
    for (int l : labels)
        if (l < 0 || l >= classes) throw ProbeError("train_readout: label outside the event-class range");
    auto loss_node = [](Graph<T>& g, const model::IdMap& ids, int x, const std::vector<int>& y) {
        const int probs = g.softmax_lastdim(g.add(g.matmul(x, ids.at("out.w")), ids.at("out.b")));
        return g.cross_entropy(probs, y);
    };
    auto accuracy = [classes](Graph<T>& g, const model::IdMap& ids, int x, const std::vector<int>& y) {
        const int probs = g.softmax_lastdim(g.add(g.matmul(x, ids.at("out.w")), ids.at("out.b")));
        const Tensor<T>& p = g.val(probs);
        int hit = 0;
        for (size_t i = 0; i < y.size(); ++i) {
            const T* row = p.data.data() + int64_t(i) * classes;
            const int got = int(std::max_element(row, row + classes) - row);
            hit += got == y[i] ? 1 : 0;
        }
        return double(hit) / double(y.size());
    };
    return detail::train_linear_probe<T>(bank, labels, pc, make_readout_params<T>(bank.d, classes), loss_node,
                                         accuracy, "readout", split_override);
}

}  // namespace iajepa::probe
