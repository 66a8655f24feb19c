#include "iajepa/runconfig.hpp"

#include <fstream>

#include "iajepa/jsonconv.hpp"
#include "iajepa/masking.hpp"
#include "iajepa/sha256.hpp"

namespace iajepa {

using nlohmann::json;

void RunConfig::validate() const {
    try {
        world.validate();
        model.validate();
    } catch (const world::ConfigError& e) {
        throw RunConfigError(e.what());
    } catch (const model::ModelError& e) {
        throw RunConfigError(e.what());
    }
    if (model.tokens != kTokens || model.values != kTubeletValues)
        throw RunConfigError("run config: the model must use the fixed " + std::to_string(kTokens) + "x" +
                             std::to_string(kTubeletValues) + " token grid");
    if (dataset_clips <= 0) throw RunConfigError("run config: dataset clips must be positive");
    if (stages.empty()) throw RunConfigError("run config: at least one training stage is required");
    for (size_t i = 0; i < stages.size(); ++i) {
        const StageSection& s = stages[i];
        const std::string tag = "run config stage " + std::to_string(i + 1) + ": ";
        if (s.steps < 0) throw RunConfigError(tag + "steps must be non-negative");
        if (s.batch <= 0) throw RunConfigError(tag + "batch must be positive");
        if (!(s.lr > 0.0)) throw RunConfigError(tag + "learning rate must be positive");
        if (s.weight_decay < 0.0) throw RunConfigError(tag + "weight decay must be non-negative");
        if (!(s.ratio > 0.0 && s.ratio <= 1.0)) throw RunConfigError(tag + "mask ratio must lie in (0,1]");
        if (s.precision != "f32" && s.precision != "f64")
            throw RunConfigError(tag + "precision must be f32 or f64");
        if (s.precision != stages[0].precision)
            throw RunConfigError(tag + "all stages must share one precision mode");
    }
    if (!(reasoner.holdout > 0.0 && reasoner.holdout < 1.0) ||
        !(linear_probe.holdout > 0.0 && linear_probe.holdout < 1.0))
        throw RunConfigError("run config: probe holdout fractions must lie in (0,1)");
    if (reasoner.epochs <= 0 || reasoner.batch <= 0 || !(reasoner.lr > 0.0) || reasoner.weight_decay < 0.0 ||
        !(reasoner.dropout >= 0.0 && reasoner.dropout < 1.0))
        throw RunConfigError("run config: invalid reasoner probe settings");
    if (linear_probe.epochs <= 0 || !(linear_probe.lr > 0.0) || linear_probe.weight_decay < 0.0)
        throw RunConfigError("run config: invalid linear probe settings");
    if (!(analysis_mask_ratio > 0.0 && analysis_mask_ratio <= 1.0))
        throw RunConfigError("run config: analysis mask ratio must lie in (0,1]");
    if (rollout_context < 1 || rollout_context >= kSlices)
        throw RunConfigError("run config: rollout context slices must lie in [1,8)");
    const auto& known = mask::mask_strategies();
    for (const auto& s : recall_strategies)
        if (std::find(known.begin(), known.end(), s) == known.end())
            throw RunConfigError("run config: unknown recall strategy '" + s + "'");
}

json config_to_json(const RunConfig& cfg) {
    json stages = json::array();
    for (const auto& s : cfg.stages)
        stages.push_back(json{{"steps", s.steps},
                              {"batch", s.batch},
                              {"lr", s.lr},
                              {"weight_decay", s.weight_decay},
                              {"ratio", s.ratio},
                              {"precision", s.precision}});
    return json{{"world", cfg.world},
                {"model",
                 {{"d", cfg.model.d},
                  {"enc_layers", cfg.model.enc_layers},
                  {"pred_layers", cfg.model.pred_layers},
                  {"heads", cfg.model.heads},
                  {"ff_ratio", cfg.model.ff_ratio},
                  {"ema_momentum", cfg.model.ema_momentum},
                  {"normalize_targets", cfg.model.normalize_targets}}},
                {"dataset", {{"clips", cfg.dataset_clips}}},
                {"stages", stages},
                {"probe",
                 {{"reasoner",
                   {{"epochs", cfg.reasoner.epochs},
                    {"batch", cfg.reasoner.batch},
                    {"lr", cfg.reasoner.lr},
                    {"weight_decay", cfg.reasoner.weight_decay},
                    {"dropout", cfg.reasoner.dropout},
                    {"holdout", cfg.reasoner.holdout}}},
                  {"linear",
                   {{"epochs", cfg.linear_probe.epochs},
                    {"lr", cfg.linear_probe.lr},
                    {"weight_decay", cfg.linear_probe.weight_decay},
                    {"holdout", cfg.linear_probe.holdout}}}}},
                {"analysis",
                 {{"mask_ratio", cfg.analysis_mask_ratio},
                  {"rollout_context", cfg.rollout_context},
                  {"recall_strategies", cfg.recall_strategies}}}};
}

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw RunConfigError("run config: the document root must be a JSON object");
    RunConfig cfg;
    if (j.contains("world")) j.at("world").get_to(cfg.world);
    if (j.contains("model")) {
        const json& m = j.at("model");
        cfg.model.d = m.value("d", cfg.model.d);
        cfg.model.enc_layers = m.value("enc_layers", cfg.model.enc_layers);
        cfg.model.pred_layers = m.value("pred_layers", cfg.model.pred_layers);
        cfg.model.heads = m.value("heads", cfg.model.heads);
        cfg.model.ff_ratio = m.value("ff_ratio", cfg.model.ff_ratio);
        cfg.model.ema_momentum = m.value("ema_momentum", cfg.model.ema_momentum);
        cfg.model.normalize_targets = m.value("normalize_targets", cfg.model.normalize_targets);
    }
    if (j.contains("dataset")) cfg.dataset_clips = j.at("dataset").value("clips", cfg.dataset_clips);
    if (j.contains("stages")) {
        cfg.stages.clear();
        for (const json& js : j.at("stages")) {
            StageSection s;
            s.steps = js.value("steps", s.steps);
            s.batch = js.value("batch", s.batch);
            s.lr = js.value("lr", s.lr);
            s.weight_decay = js.value("weight_decay", s.weight_decay);
            s.ratio = js.value("ratio", s.ratio);
            s.precision = js.value("precision", s.precision);
            cfg.stages.push_back(s);
        }
    }
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        if (p.contains("reasoner")) {
            const json& r = p.at("reasoner");
            cfg.reasoner.epochs = r.value("epochs", cfg.reasoner.epochs);
            cfg.reasoner.batch = r.value("batch", cfg.reasoner.batch);
            cfg.reasoner.lr = r.value("lr", cfg.reasoner.lr);
            cfg.reasoner.weight_decay = r.value("weight_decay", cfg.reasoner.weight_decay);
            cfg.reasoner.dropout = r.value("dropout", cfg.reasoner.dropout);
            cfg.reasoner.holdout = r.value("holdout", cfg.reasoner.holdout);
        }
        if (p.contains("linear")) {
            const json& l = p.at("linear");
            cfg.linear_probe.epochs = l.value("epochs", cfg.linear_probe.epochs);
            cfg.linear_probe.lr = l.value("lr", cfg.linear_probe.lr);
            cfg.linear_probe.weight_decay = l.value("weight_decay", cfg.linear_probe.weight_decay);
            cfg.linear_probe.holdout = l.value("holdout", cfg.linear_probe.holdout);
        }
    }
    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        cfg.analysis_mask_ratio = a.value("mask_ratio", cfg.analysis_mask_ratio);
        cfg.rollout_context = a.value("rollout_context", cfg.rollout_context);
        if (a.contains("recall_strategies"))
            cfg.recall_strategies = a.at("recall_strategies").get<std::vector<std::string>>();
    }
    return cfg;
}

std::string config_digest(const RunConfig& cfg) { return sha256_hex(config_to_json(cfg).dump()); }

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RunConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw RunConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw RunConfigError("config file " + path + " has a malformed section: " + e.what());
    }
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RunConfigError("cannot write config file: " + path);
    out << config_to_json(cfg).dump(2) << "\n";
    if (!out) throw RunConfigError("write failed: " + path);
}

const std::vector<std::string>& pretrain_variants() {
    static const std::vector<std::string> v{"baseline", "object-ablation", "ia"};
    return v;
}

std::vector<std::string> variant_strategies(const std::string& variant) {
    if (variant == "baseline") return {"patch", "patch", "patch"};
    if (variant == "object-ablation") return {"patch", "object", "object"};
    if (variant == "ia") return {"patch", "object", "ia"};
    throw RunConfigError("unknown pre-training variant '" + variant +
                         "' (expected baseline, object-ablation, or ia)");
}

std::vector<train::StageConfig> stage_plan(const RunConfig& cfg, const std::string& variant, uint64_t run_seed) {
    const std::vector<std::string> strategies = variant_strategies(variant);
    if (strategies.size() != cfg.stages.size())
        throw RunConfigError("run config declares " + std::to_string(cfg.stages.size()) + " stages but variant '" +
                             variant + "' assigns " + std::to_string(strategies.size()) + " strategies");
    std::vector<train::StageConfig> plan;
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
        train::StageConfig sc;
        sc.strategy = strategies[i];
        sc.steps = cfg.stages[i].steps;
        sc.batch = cfg.stages[i].batch;
        sc.lr = cfg.stages[i].lr;
        sc.weight_decay = cfg.stages[i].weight_decay;
        sc.ratio = cfg.stages[i].ratio;
        sc.precision = cfg.stages[i].precision;
        sc.seed = derive_seed(run_seed, i);
        sc.validate();
        plan.push_back(std::move(sc));
    }
    return plan;
}

}  // namespace iajepa
