// Run configuration: one UTF-8 JSON document covering the world generator,
// model architecture, staged pre-training, probes, and analysis settings.
// Its SHA-256 digest (over the canonical serialized form) is embedded in
// every artifact a run produces, and downstream stages refuse inputs whose
// digest differs.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iajepa/model.hpp"
#include "iajepa/probe.hpp"
#include "iajepa/train.hpp"
#include "iajepa/worldsim.hpp"

namespace iajepa {

struct RunConfigError : std::runtime_error {
    explicit RunConfigError(const std::string& m) : std::runtime_error(m) {}
};

// Per-stage training budget and optimizer settings. The masking strategy is
// not stored here: it comes from the pre-training variant.
struct StageSection {
    int steps = 300;
    int batch = 8;
    double lr = 1.5e-4;
    double weight_decay = 0.05;
    double ratio = 0.40;
    std::string precision = "f32";  // f32 | f64
};

struct RunConfig {
    world::WorldConfig world;
    model::ModelConfig model;
    int dataset_clips = 512;
    std::vector<StageSection> stages{StageSection{}, StageSection{}, StageSection{}};
    probe::ReasonerConfig reasoner;
    probe::LinearProbeConfig linear_probe;
    double analysis_mask_ratio = 0.40;
    int rollout_context = 2;
    std::vector<std::string> recall_strategies{"patch", "object", "ia"};

    void validate() const;  // throws RunConfigError
};

nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);

// SHA-256 hex digest of the canonical serialized form (sorted keys), so two
// files that parse to the same configuration share a digest.
std::string config_digest(const RunConfig& cfg);

RunConfig load_config(const std::string& path);          // throws RunConfigError on unreadable/invalid JSON
void save_config(const std::string& path, const RunConfig& cfg);

// Pre-training variants: the masking curriculum each one assigns to the
// three stages.
//   baseline        -> patch, patch, patch
//   object-ablation -> patch, object, object
//   ia              -> patch, object, ia
const std::vector<std::string>& pretrain_variants();
std::vector<std::string> variant_strategies(const std::string& variant);

// Stage configs for a run: section settings plus the variant's strategy and
// a per-stage seed derived from the run seed. Requires one strategy per
// configured stage.
std::vector<train::StageConfig> stage_plan(const RunConfig& cfg, const std::string& variant, uint64_t run_seed);

}  // namespace iajepa
