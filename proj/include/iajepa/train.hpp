// Staged pre-training driver. Each step samples a batch of stored clips,
// builds masks with the stage's strategy, runs the masked-prediction loss,
// applies AdamW to the context encoder and predictor, and tracks the target
// encoder by EMA. Stages chain with optimizer resets at the boundaries.
// Also: checkpoint save/load (exact-resume capable) and frozen-feature
// extraction into a single consolidated bank file.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iajepa/autodiff.hpp"
#include "iajepa/binio.hpp"
#include "iajepa/clipfile.hpp"
#include "iajepa/dataset.hpp"
#include "iajepa/grid.hpp"
#include "iajepa/masking.hpp"
#include "iajepa/model.hpp"
#include "iajepa/optim.hpp"
#include "iajepa/rng.hpp"
#include "iajepa/tensor.hpp"
#include "iajepa/tokens.hpp"
#include "iajepa/worldsim.hpp"

namespace iajepa::train {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr uint32_t kCheckpointVersion = 1;
constexpr uint32_t kFeatureBankVersion = 1;

// One pre-training stage. `steps` of zero is allowed and leaves the model
// untouched (useful for pipeline plumbing tests).
struct StageConfig {
    std::string strategy = "patch";  // masking strategy registry name
    int steps = 300;
    int batch = 8;
    double lr = 1.5e-4;
    double weight_decay = 0.05;
    double ratio = 0.40;
    uint64_t seed = 0;
    std::string precision = "f32";  // "f32" | "f64"

    void validate() const {
        if (steps < 0) throw TrainError("stage config: steps must be non-negative");
        if (batch <= 0) throw TrainError("stage config: batch must be positive");
        if (lr <= 0.0) throw TrainError("stage config: lr must be positive");
        if (weight_decay < 0.0) throw TrainError("stage config: weight_decay must be non-negative");
        if (!(ratio > 0.0 && ratio <= 1.0)) throw TrainError("stage config: ratio must lie in (0,1]");
        const auto& reg = mask::mask_strategies();
        if (std::find(reg.begin(), reg.end(), strategy) == reg.end())
            throw TrainError("stage config: unknown masking strategy '" + strategy + "'");
        if (precision != "f32" && precision != "f64")
            throw TrainError("stage config: precision must be f32 or f64, got '" + precision + "'");
    }
};

struct RunLog {
    std::vector<double> losses;  // one batch-mean loss per step
};

// Dataset handle for training: the manifest plus per-clip per-object token
// occupancies, reconstructed by re-simulating each clip's seed (the same
// deterministic code path that generated the data). Clip pixels stay on disk
// and are loaded per batch item.
struct TrainData {
    std::string dir;
    DatasetManifest manifest;
    std::vector<std::vector<std::vector<double>>> object_occ;  // [clip][object][token]

    size_t size() const { return manifest.clips.size(); }
};

TrainData load_train_data(const std::string& dataset_dir);

// Raw pixels (for saliency) and normalized token rows for one stored clip.
template <typename T>
struct ClipTokens {
    Tensor<float> clip01;  // [16,3,96,96] in [0,1]
    Tensor<T> tokens;      // [288,1536] normalized
};

template <typename T>
ClipTokens<T> load_clip_tokens(const std::string& path) {
    auto [clip, labels] = read_clip(path);
    (void)labels;
    ClipTokens<T> out;
    if constexpr (std::is_same_v<T, float>) {
        out.tokens = tubelet_partition(normalize_clip(clip));
    } else {
        out.tokens = tubelet_partition(normalize_clip(clip.template cast<T>()));
    }
    out.clip01 = std::move(clip);
    return out;
}

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
    return std::is_same_v<T, double> ? "f64" : "f32";
}

}  // namespace detail

// Model plus optimizer state. Optimizer slots align with the parameter-set
// order of phi and theta; the target encoder xi is never optimized.
template <typename T>
struct TrainState {
    model::JepaModel<T> m;
    std::vector<OptState<T>> opt_phi;
    std::vector<OptState<T>> opt_theta;
    int64_t global_step = 0;
    std::string stage = "init";

    static TrainState init(const model::ModelConfig& cfg, uint64_t seed) {
        TrainState st;
        st.m = model::JepaModel<T>::init(cfg, seed);
        st.reset_optimizer();
        return st;
    }

    void reset_optimizer() {
        opt_phi.clear();
        opt_theta.clear();
        opt_phi.reserve(m.phi.size());
        opt_theta.reserve(m.theta.size());
        for (const auto& t : m.phi.tensors) opt_phi.emplace_back(t.shape);
        for (const auto& t : m.theta.tensors) opt_theta.emplace_back(t.shape);
    }
};

namespace detail {

template <typename T>
void accumulate_grads(std::vector<Tensor<T>>& acc, const Graph<T>& g, const model::IdMap& ids,
                      const model::ParamSet<T>& params) {
    if (acc.empty()) {
        acc.reserve(params.size());
        for (const auto& t : params.tensors) acc.push_back(Tensor<T>::zeros(t.shape));
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor<T>& gr = g.grad(ids.at(params.names[i]));
        for (int64_t j = 0; j < gr.numel(); ++j) acc[i].data[j] += gr.data[j];
    }
}

}  // namespace detail

// One stage of masked-prediction training. Per step: sample `batch` clips
// (with replacement, from a per-step seeded RNG), build one mask per item,
// accumulate gradients of the batch-mean loss over per-item graphs, apply
// one AdamW step to phi and theta, then track xi by EMA. Deterministic given
// (dataset, config, seed, precision mode): clip choice and mask seeds derive
// from the stage seed and the global step counter only, so a resumed run
// continues the exact trajectory.
template <typename T>
RunLog run_stage(TrainState<T>& st, const StageConfig& sc, const TrainData& data) {
    sc.validate();
    if (data.size() == 0) throw TrainError("run_stage: dataset is empty");
    if ((sc.precision == "f64") != std::is_same_v<T, double>)
        throw TrainError(std::string("run_stage: precision mode ") + sc.precision +
                         " does not match state dtype " + detail::dtype_name<T>());
    if (st.m.cfg.tokens != kTokens || st.m.cfg.values != kTubeletValues)
        throw TrainError("run_stage: stored clips tokenize to the fixed " + std::to_string(kTokens) + "x" +
                         std::to_string(kTubeletValues) + " grid; the model must match");
    const model::ModelConfig& cfg = st.m.cfg;
    AdamwHyper hyper;
    hyper.lr = sc.lr;
    hyper.weight_decay = sc.weight_decay;

    RunLog log;
    log.losses.reserve(size_t(sc.steps));
    for (int s = 0; s < sc.steps; ++s) {
        const uint64_t step_seed = derive_seed(sc.seed, uint64_t(st.global_step));
        Rng pick(step_seed);
        std::vector<Tensor<T>> gphi, gtheta;
        double step_loss = 0.0;
        for (int b = 0; b < sc.batch; ++b) {
            const size_t ci = size_t(pick.below(data.size()));
            const auto& entry = data.manifest.clips[ci];
            const ClipTokens<T> ct = load_clip_tokens<T>(data.dir + "/" + entry.file);
            const uint64_t mask_seed = derive_seed(step_seed, 1 + uint64_t(b));
            const mask::MaskSpec spec =
                mask::make_mask(sc.strategy, ct.clip01, data.object_occ[ci], sc.ratio, mask_seed);
            const std::vector<int> vis = spec.visible(cfg.tokens);
            const Tensor<T> targets = model::target_rows_for(cfg, st.m.xi, ct.tokens, spec.masked);

            Graph<T> g;
            const auto ids = model::build_jepa_step(g, cfg, st.m.phi, st.m.theta, ct.tokens, vis, spec.masked, targets);
            const double item_loss = double(g.val(ids.loss).data[0]);
            if (!std::isfinite(item_loss))
                throw TrainError("run_stage: non-finite loss at step " + std::to_string(st.global_step));
            step_loss += item_loss / double(sc.batch);
            g.backward(g.scale(ids.loss, 1.0 / double(sc.batch)));
            detail::accumulate_grads(gphi, g, ids.phi, st.m.phi);
            detail::accumulate_grads(gtheta, g, ids.theta, st.m.theta);
        }
        for (size_t i = 0; i < st.m.phi.size(); ++i)
            adamw_step(st.m.phi.tensors[i], gphi[i], st.opt_phi[i], hyper);
        for (size_t i = 0; i < st.m.theta.size(); ++i)
            adamw_step(st.m.theta.tensors[i], gtheta[i], st.opt_theta[i], hyper);
        model::ema_update(st.m.xi, st.m.phi, cfg.ema_momentum);
        log.losses.push_back(step_loss);
        ++st.global_step;
    }
    return log;
}

// ----- checkpointing -----

struct CheckpointInfo {
    std::string stage;
    int64_t step = 0;
    std::string config_digest;
    std::string dtype;
    uint64_t rng_state = 0;
    int64_t opt_t_phi = 0;
    int64_t opt_t_theta = 0;
};

// Header-only metadata read (no tensor payloads).
CheckpointInfo read_checkpoint_info(const std::string& path);

namespace detail {

template <typename T>
void write_tensor_entry(ByteWriter& w, const std::string& name, const Tensor<T>& t) {
    w.u32(uint32_t(name.size()));
    w.str(name);
    w.u32(uint32_t(t.rank()));
    for (int d : t.shape) w.u32(uint32_t(d));
    w.span(t.data.data(), t.data.size());
}

}  // namespace detail

// Serializes parameters (phi, xi, theta) and optimizer moments into a single
// little-endian file; metadata JSON carries stage tag, global step, config
// digest, RNG seed, payload dtype, and the AdamW step counters. The`xi`
// tensors are stored but never get optimizer slots (non-optimized by
// contract).
template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& st, const std::string& config_digest,
                     uint64_t rng_state) {
    for (const auto& o : st.opt_phi)
        if (o.t != st.opt_phi[0].t) throw TrainError("save_checkpoint: inconsistent phi optimizer counters");
    for (const auto& o : st.opt_theta)
        if (o.t != st.opt_theta[0].t) throw TrainError("save_checkpoint: inconsistent theta optimizer counters");

    nlohmann::json meta{{"stage", st.stage},
                        {"step", st.global_step},
                        {"config_digest", config_digest},
                        {"rng_state", std::to_string(rng_state)},
                        {"dtype", detail::dtype_name<T>()},
                        {"opt_t_phi", st.opt_phi.empty() ? int64_t(0) : st.opt_phi[0].t},
                        {"opt_t_theta", st.opt_theta.empty() ? int64_t(0) : st.opt_theta[0].t}};
    ByteWriter w;
    w.str("IAJC");
    w.u32(kCheckpointVersion);
    const std::string mj = meta.dump();
    w.u32(uint32_t(mj.size()));
    w.str(mj);
    for (size_t i = 0; i < st.m.phi.size(); ++i) detail::write_tensor_entry(w, "phi." + st.m.phi.names[i], st.m.phi.tensors[i]);
    for (size_t i = 0; i < st.m.xi.size(); ++i) detail::write_tensor_entry(w, "xi." + st.m.xi.names[i], st.m.xi.tensors[i]);
    for (size_t i = 0; i < st.m.theta.size(); ++i)
        detail::write_tensor_entry(w, "theta." + st.m.theta.names[i], st.m.theta.tensors[i]);
    for (size_t i = 0; i < st.m.phi.size(); ++i) {
        detail::write_tensor_entry(w, "opt.phi." + st.m.phi.names[i] + ".m", st.opt_phi[i].m);
        detail::write_tensor_entry(w, "opt.phi." + st.m.phi.names[i] + ".v", st.opt_phi[i].v);
    }
    for (size_t i = 0; i < st.m.theta.size(); ++i) {
        detail::write_tensor_entry(w, "opt.theta." + st.m.theta.names[i] + ".m", st.opt_theta[i].m);
        detail::write_tensor_entry(w, "opt.theta." + st.m.theta.names[i] + ".v", st.opt_theta[i].v);
    }
    w.to_file(path);
}

// Loads a checkpoint into a fresh state for `cfg`. Every expected tensor
// must be present with the exact shape; unknown extras are format errors.
// The payload dtype must match T.
template <typename T>
TrainState<T> load_checkpoint(const std::string& path, const model::ModelConfig& cfg,
                              CheckpointInfo* info_out = nullptr) {
    cfg.validate();
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("IAJC");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t mlen = r.u32();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.str(mlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": corrupt checkpoint metadata: " + e.what());
    }
    CheckpointInfo info;
    info.stage = meta.value("stage", std::string("?"));
    info.step = meta.value("step", int64_t(0));
    info.config_digest = meta.value("config_digest", std::string());
    info.dtype = meta.value("dtype", std::string("f32"));
    info.rng_state = std::stoull(meta.value("rng_state", std::string("0")));
    info.opt_t_phi = meta.value("opt_t_phi", int64_t(0));
    info.opt_t_theta = meta.value("opt_t_theta", int64_t(0));
    if (info.dtype != detail::dtype_name<T>())
        throw TrainError(path + ": checkpoint dtype " + info.dtype + " does not match requested " +
                         detail::dtype_name<T>());

    std::unordered_map<std::string, Tensor<T>> table;
    while (r.remaining() > 0) {
        const uint32_t nlen = r.u32();
        if (nlen == 0 || nlen > 4096) throw FormatError(path + ": implausible tensor name length");
        const std::string name = r.str(nlen);
        const uint32_t ndim = r.u32();
        if (ndim == 0 || ndim > 8) throw FormatError(path + ": implausible tensor rank for " + name);
        std::vector<int> shape(ndim);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = int(r.u32());
            if (d <= 0) throw FormatError(path + ": non-positive extent in " + name);
            numel *= d;
        }
        if (table.count(name)) throw FormatError(path + ": duplicate tensor " + name);
        table.emplace(name, Tensor<T>(shape, r.template span<T>(size_t(numel))));
    }

    TrainState<T> st = TrainState<T>::init(cfg, 0);
    st.global_step = info.step;
    st.stage = info.stage;
    auto take = [&](const std::string& name, Tensor<T>& dst) {
        auto it = table.find(name);
        if (it == table.end()) throw FormatError(path + ": missing tensor " + name);
        if (it->second.shape != dst.shape)
            throw FormatError(path + ": tensor " + name + " has shape " + shape_str(it->second.shape) +
                              ", expected " + shape_str(dst.shape));
        dst = std::move(it->second);
        table.erase(it);
    };
    for (size_t i = 0; i < st.m.phi.size(); ++i) take("phi." + st.m.phi.names[i], st.m.phi.tensors[i]);
    for (size_t i = 0; i < st.m.xi.size(); ++i) take("xi." + st.m.xi.names[i], st.m.xi.tensors[i]);
    for (size_t i = 0; i < st.m.theta.size(); ++i) take("theta." + st.m.theta.names[i], st.m.theta.tensors[i]);
    for (size_t i = 0; i < st.m.phi.size(); ++i) {
        take("opt.phi." + st.m.phi.names[i] + ".m", st.opt_phi[i].m);
        take("opt.phi." + st.m.phi.names[i] + ".v", st.opt_phi[i].v);
        st.opt_phi[i].t = info.opt_t_phi;
    }
    for (size_t i = 0; i < st.m.theta.size(); ++i) {
        take("opt.theta." + st.m.theta.names[i] + ".m", st.opt_theta[i].m);
        take("opt.theta." + st.m.theta.names[i] + ".v", st.opt_theta[i].v);
        st.opt_theta[i].t = info.opt_t_theta;
    }
    if (!table.empty()) throw FormatError(path + ": unexpected tensor " + table.begin()->first);
    if (info_out) *info_out = info;
    return st;
}

// ----- staged pipeline -----

struct StageResult {
    std::string tag;
    std::string checkpoint_path;
    RunLog log;
};

// Runs the stages in order, resetting optimizer state at each boundary, and
// writes one checkpoint per stage tagged "stage<i>-<strategy>". Two
// pipelines whose first stages share config and seed produce byte-identical
// first-stage checkpoints.
template <typename T>
std::vector<StageResult> run_staged_pipeline(TrainState<T>& st, const std::vector<StageConfig>& stages,
                                             const TrainData& data, const std::string& out_dir,
                                             const std::string& config_digest) {
    if (stages.empty()) throw TrainError("run_staged_pipeline: no stages");
    std::filesystem::create_directories(out_dir);
    std::vector<StageResult> results;
    results.reserve(stages.size());
    for (size_t i = 0; i < stages.size(); ++i) {
        st.reset_optimizer();
        RunLog log = run_stage(st, stages[i], data);
        st.stage = "stage" + std::to_string(i + 1) + "-" + stages[i].strategy;
        const std::string path = out_dir + "/" + st.stage + ".iajc";
        save_checkpoint(path, st, config_digest, stages[i].seed);
        results.push_back({st.stage, path, std::move(log)});
    }
    return results;
}

// ----- feature bank -----

// Full-visibility context-encoder outputs over a dataset, consolidated into
// one tensor [n_clips, slices, cells, d] plus the producing config digest.
struct FeatureBank {
    std::vector<uint32_t> clip_ids;  // ascending
    int slices = kSlices;
    int cells = kCells;
    int d = 192;
    std::vector<float> features;  // n * slices * cells * d
    std::string config_digest;

    size_t n() const { return clip_ids.size(); }
    int64_t clip_stride() const { return int64_t(slices) * cells * d; }
    const float* clip(size_t i) const { return features.data() + int64_t(i) * clip_stride(); }
};

void write_featurebank(const std::string& path, const FeatureBank& bank);
FeatureBank read_featurebank(const std::string& path);

// Frozen-feature extraction: each clip is normalized exactly as in training
// (enforced by digest equality), tokenized, and encoded with full
// visibility. Output order follows ascending clip id (= manifest order).
template <typename T>
FeatureBank extract_features(const model::ModelConfig& cfg, const model::ParamSet<T>& phi, const TrainData& data,
                             const std::string& checkpoint_digest, const std::string& current_digest) {
    if (checkpoint_digest != current_digest)
        throw TrainError("normalization mandate: checkpoint config digest '" + checkpoint_digest +
                         "' does not match extraction config digest '" + current_digest + "'");
    if (cfg.tokens != kTokens)
        throw TrainError("extract_features: feature bank requires the full " + std::to_string(kSlices) + "x" +
                         std::to_string(kCells) + " token grid");
    FeatureBank bank;
    bank.d = cfg.d;
    bank.config_digest = checkpoint_digest;
    bank.clip_ids.reserve(data.size());
    bank.features.resize(data.size() * size_t(bank.clip_stride()));
    std::vector<int> all(cfg.tokens);
    std::iota(all.begin(), all.end(), 0);
    for (size_t i = 0; i < data.size(); ++i) {
        const ClipTokens<T> ct = load_clip_tokens<T>(data.dir + "/" + data.manifest.clips[i].file);
        const Tensor<T> feats = model::encode_context(cfg, phi, ct.tokens, all);
        float* dst = bank.features.data() + int64_t(i) * bank.clip_stride();
        for (int64_t j = 0; j < feats.numel(); ++j) dst[j] = float(feats.data[j]);
        bank.clip_ids.push_back(uint32_t(i));
    }
    return bank;
}

}  // namespace iajepa::train
