// Measurement suite over frozen features: latent dispersion, ordinary
// least-squares linearity between motion energy and dispersion, autoregressive
// latent rollout curves, sparsified saliency maps, mask-recall assembly, and
// CSV/SVG emission.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iajepa/grid.hpp"
#include "iajepa/model.hpp"
#include "iajepa/tensor.hpp"
#include "iajepa/train.hpp"

namespace iajepa::analyze {

struct AnalyzeError : std::runtime_error {
    explicit AnalyzeError(const std::string& m) : std::runtime_error(m) {}
};

// Population standard deviation over all entries (double accumulation,
// two-pass). Empty input is degenerate.
double latent_dispersion(std::span<const float> entries);

// Dispersion of one clip's frozen-feature slab in a bank.
double clip_dispersion(const train::FeatureBank& bank, size_t index);

// Mean of the spatial motion-energy map (computed in double on the [0,1]
// clip), a per-clip scalar.
double clip_motion_energy(const Tensor<float>& clip01, const TokenGridSpec& grid = {});

struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// Simple ordinary least squares y = slope*x + intercept with R^2 = 1 -
// SS_res/SS_tot. Requires n >= 3 and positive variance in both variables;
// anything else throws (never a silent zero).
OlsFit ols_r2(const std::vector<double>& x, const std::vector<double>& y);

// Cosine similarity in double; 0.0 when either vector has zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Per-cell saliency of a feature slab: token L2 norms -> [slices, cells],
// max over time -> [cells]. Raw (unnormalized) values.
std::vector<double> token_magnitude_map(std::span<const float> slab, int slices, int cells, int d);

// Normalize a 36-cell map by `global_max` (own max when absent) and zero
// every cell strictly below the 80th percentile (nearest rank on the 36
// values; ties at the threshold all survive). All-zero input stays all-zero.
Tensor<double> sparsify_map(const std::vector<double>& cells36, std::optional<double> global_max = {});

// Full pipeline for one bank clip -> sparsified 6x6 map. Pass a shared
// `global_max` to keep two models on one scale.
Tensor<double> saliency_viz(const train::FeatureBank& bank, size_t index, std::optional<double> global_max = {});

struct AnalysisRecord {
    uint32_t clip_id = 0;
    double motion_energy = 0.0;
    double dispersion = 0.0;
    std::map<std::string, double> recall;  // per masking strategy; absent when the clip has no interaction tokens
};

// One record per clip: motion energy from the stored clip pixels, dispersion
// from the bank slab, and mask recall for each requested strategy (seeded per
// clip). Refuses banks whose config digest differs from the dataset's.
std::vector<AnalysisRecord> analyze_dataset(const train::FeatureBank& bank, const train::TrainData& data,
                                            const std::vector<std::string>& recall_strategies, double ratio,
                                            uint64_t seed);

// CSV with a leading `# config_digest=<hex>` comment, a header row, '.'
// decimals, and one recall_<strategy> column per strategy present anywhere
// (empty field where absent). parse_csv inverts emit_csv exactly.
void emit_csv(const std::string& path, const std::vector<AnalysisRecord>& records, const std::string& config_digest);
std::vector<AnalysisRecord> parse_csv(const std::string& path, std::string* config_digest = nullptr);

// Self-contained SVG plots; every file embeds the config digest in an XML
// comment. The scatter draws one circle per point, the fitted line, and the
// R^2 value; the heatmap draws one rect per cell; the curve draws a polyline
// with one marker per step.
void emit_scatter_svg(const std::string& path, const std::vector<double>& x, const std::vector<double>& y,
                      const OlsFit& fit, const std::string& x_label, const std::string& y_label,
                      const std::string& config_digest);
void emit_heatmap_svg(const std::string& path, const Tensor<double>& map, const std::string& config_digest);
void emit_curve_svg(const std::string& path, const std::vector<double>& values, int first_step,
                    const std::string& config_digest);

// Autoregressive latent rollout: encode the first k0 temporal slices, predict
// the next slice's 36 token latents, append the predictions as pseudo-context
// (they carry their positional identities), and repeat through the last
// slice. Returns the cosine similarity between consecutive predicted
// slice-mean vectors: 8 - k0 - 1 entries.
template <typename T>
std::vector<double> rollout_curve(const model::ModelConfig& cfg, const model::ParamSet<T>& phi,
                                  const model::ParamSet<T>& theta, const Tensor<T>& tokens, int k0) {
    if (k0 < 1 || k0 >= kSlices) throw AnalyzeError("rollout_curve: context slices must lie in [1,8)");
    if (cfg.tokens != kTokens || cfg.values != kTubeletValues)
        throw AnalyzeError("rollout_curve: model does not match the fixed token grid");
    std::vector<int> vis(static_cast<size_t>(k0) * kCells);
    std::iota(vis.begin(), vis.end(), 0);
    Tensor<T> ctx = model::encode_context(cfg, phi, tokens, vis);
    const Tensor<T>& pos = phi.at("embed.pos");

    std::vector<std::vector<double>> means;
    for (int s = k0; s < kSlices; ++s) {
        std::vector<int> masked(kCells);
        std::iota(masked.begin(), masked.end(), s * kCells);
        const Tensor<T> pred = model::predict(cfg, theta, pos, ctx, vis, masked);
        std::vector<double> m(static_cast<size_t>(cfg.d), 0.0);
        for (int r = 0; r < kCells; ++r)
            for (int c = 0; c < cfg.d; ++c) m[static_cast<size_t>(c)] += static_cast<double>(pred.at(r, c));
        for (double& v : m) v /= kCells;
        means.push_back(std::move(m));

        Tensor<T> grown({ctx.dim(0) + kCells, cfg.d});
        std::copy(ctx.data.begin(), ctx.data.end(), grown.data.begin());
        std::copy(pred.data.begin(), pred.data.end(), grown.data.begin() + ctx.numel());
        ctx = std::move(grown);
        vis.insert(vis.end(), masked.begin(), masked.end());
    }
    std::vector<double> curve;
    for (size_t i = 1; i < means.size(); ++i) curve.push_back(cosine_similarity(means[i - 1], means[i]));
    return curve;
}

}  // namespace iajepa::analyze
