// Motion-energy saliency and the masking distributions: uniform patch, tube,
// random-object, and interaction-aware (top-saliency) selection, plus the
// region-zeroing visualization hook and mask/saliency dump formats.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iajepa/grid.hpp"
#include "iajepa/tensor.hpp"

namespace iajepa::mask {

struct MaskError : std::runtime_error {
    explicit MaskError(const std::string& m) : std::runtime_error(m) {}
};

enum class SaliencyMode { spatial, spatiotemporal };

// Raw pixel motion energy from the temporal second-derivative stencil
// d2(t) = V[t+1] - 2 V[t] + V[t-1], defined on interior frames t in [1,14].
//   spatial:        G [96,96],  mean of |d2| over the 14 interior frames and 3 channels
//   spatiotemporal: G [8,96,96], per temporal slice, mean of |d2| over the
//                   slice's 2 frames (stencil index replicate-padded into
//                   [1,14] at the clip ends) and 3 channels
// Computed on unnormalized [0,1] pixels.
template <typename T>
Tensor<T> motion_energy(const Tensor<T>& clip, SaliencyMode mode, const TokenGridSpec& grid = {});

// Pool G into per-token scores S[288]: mean over each 16x16 spatial cell; a
// spatial-mode map is broadcast to all 8 temporal slices.
template <typename T>
std::vector<double> pool_saliency(const Tensor<T>& g, const TokenGridSpec& grid = {});

struct MaskSpec {
    std::string strategy;       // patch | tube | object | ia | ia_tube
    std::vector<int> masked;    // sorted, unique token ids
    uint64_t seed = 0;
    double ratio = 0.40;

    std::vector<int> visible(int n_tokens) const;
    void check(int n_tokens) const;  // sortedness, uniqueness, range
};

// Number of masked entries for a given ratio: ceil(ratio * n).
int mask_count(double ratio, int n);

// Top-k saliency selection, ties broken by ascending token index. S may have
// 288 entries (per-token, strategy "ia") or 36 (per-cell, strategy "ia_tube",
// selected cells masked across all 8 slices). When max(S) < 1e-8 the ranking
// is meaningless and the mask regresses to a seeded uniform draw.
MaskSpec ia_mask(const std::vector<double>& s, double ratio, uint64_t seed, const TokenGridSpec& grid = {});

// Uniform random subset of ceil(ratio*288) tokens, without replacement.
MaskSpec uniform_mask(const TokenGridSpec& grid, double ratio, uint64_t seed);

// ceil(ratio*36) spatial cells drawn uniformly, masked across all slices.
MaskSpec tube_mask(const TokenGridSpec& grid, double ratio, uint64_t seed);

// Shuffle objects with the seed; take every token whose per-object occupancy
// exceeds 0.10, object by object, until >= the budget; trim the excess by
// lowest occupancy (ties by ascending index), or pad with seeded uniform
// tokens from the complement when short.
MaskSpec object_mask(const std::vector<std::vector<double>>& per_object_occupancy, double ratio, uint64_t seed,
                     const TokenGridSpec& grid = {});

// Half-open pixel rectangle [x0,x1) x [y0,y1).
struct Rect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Visualization/diagnostic hook only (never used in training): returns G with
// the rectangle zeroed in every temporal slice.
template <typename T>
Tensor<T> zero_motion_region(const Tensor<T>& g, const Rect& region);

// Names accepted by the strategy dispatcher below.
const std::vector<std::string>& mask_strategies();

// Strategy dispatcher. `clip01` is the unnormalized [0,1] clip (needed by the
// ia modes); `per_object_occupancy` is needed by the object mode. Saliency is
// computed in double regardless of the clip's storage type.
MaskSpec make_mask(const std::string& strategy, const Tensor<float>& clip01,
                   const std::vector<std::vector<double>>& per_object_occupancy, double ratio, uint64_t seed,
                   const TokenGridSpec& grid = {});

// Fraction of ground-truth interaction tokens that are masked; absent when
// the clip has no interaction tokens.
std::optional<double> mask_recall(const MaskSpec& spec, const std::vector<int>& interaction_tokens);

// Total-variation distance between the masked tokens' spatial cell
// distribution and the uniform distribution over the 36 cells.
double spatial_tv_to_uniform(const MaskSpec& spec, const TokenGridSpec& grid = {});

// Diagnostic dumps: UTF-8 JSON {strategy, seed, masked}; 16-bit max-scaled
// binary PGM (spatiotemporal maps render as a horizontal film strip).
std::string mask_to_json(const MaskSpec& spec);
MaskSpec mask_from_json(const std::string& text);
void write_saliency_pgm(const std::string& path, const Tensor<double>& g);
void write_saliency_pgm(const std::string& path, const Tensor<float>& g);

// ---- template implementations ----

template <typename T>
Tensor<T> motion_energy(const Tensor<T>& clip, SaliencyMode mode, const TokenGridSpec& grid) {
    const int F = grid.frames, A = grid.image, C = kChannels;
    if (clip.rank() != 4 || clip.dim(0) != F || clip.dim(1) != C || clip.dim(2) != A || clip.dim(3) != A)
        throw MaskError("motion_energy expects [16,3,96,96], got " + shape_str(clip.shape));
    const size_t plane = static_cast<size_t>(A) * A;
    auto at = [&](int t, int c) { return clip.data.data() + (static_cast<size_t>(t) * C + c) * plane; };
    // |d2| for interior t in [1, F-2]; index helper replicate-pads the ends.
    auto abs_d2 = [&](int t, int c, size_t i) {
        int tc = t < 1 ? 1 : (t > F - 2 ? F - 2 : t);
        double v = static_cast<double>(at(tc + 1, c)[i]) - 2.0 * static_cast<double>(at(tc, c)[i]) +
                   static_cast<double>(at(tc - 1, c)[i]);
        return v < 0 ? -v : v;
    };
    if (mode == SaliencyMode::spatial) {
        Tensor<T> g({A, A});
        const double denom = static_cast<double>((F - 2) * C);
        for (size_t i = 0; i < plane; ++i) {
            double acc = 0.0;
            for (int t = 1; t <= F - 2; ++t)
                for (int c = 0; c < C; ++c) acc += abs_d2(t, c, i);
            g.data[i] = static_cast<T>(acc / denom);
        }
        return g;
    }
    Tensor<T> g({grid.slices(), A, A});
    const double denom = static_cast<double>(grid.tube_frames * C);
    for (int s = 0; s < grid.slices(); ++s) {
        for (size_t i = 0; i < plane; ++i) {
            double acc = 0.0;
            for (int fl = 0; fl < grid.tube_frames; ++fl)
                for (int c = 0; c < C; ++c) acc += abs_d2(s * grid.tube_frames + fl, c, i);
            g.data[static_cast<size_t>(s) * plane + i] = static_cast<T>(acc / denom);
        }
    }
    return g;
}

template <typename T>
std::vector<double> pool_saliency(const Tensor<T>& g, const TokenGridSpec& grid) {
    const int A = grid.image, P = grid.patch, G = grid.grid_side();
    const size_t plane = static_cast<size_t>(A) * A;
    auto pool_plane = [&](const T* src, double* cells) {
        for (int r = 0; r < G; ++r) {
            for (int c = 0; c < G; ++c) {
                double acc = 0.0;
                for (int y = r * P; y < (r + 1) * P; ++y)
                    for (int x = c * P; x < (c + 1) * P; ++x) acc += static_cast<double>(src[static_cast<size_t>(y) * A + x]);
                cells[r * G + c] = acc / (static_cast<double>(P) * P);
            }
        }
    };
    std::vector<double> s(static_cast<size_t>(grid.tokens()), 0.0);
    if (g.rank() == 2 && g.dim(0) == A && g.dim(1) == A) {
        std::vector<double> cells(grid.cells());
        pool_plane(g.data.data(), cells.data());
        for (int t = 0; t < grid.slices(); ++t)
            for (int k = 0; k < grid.cells(); ++k) s[static_cast<size_t>(t) * grid.cells() + k] = cells[k];
        return s;
    }
    if (g.rank() == 3 && g.dim(0) == grid.slices() && g.dim(1) == A && g.dim(2) == A) {
        for (int t = 0; t < grid.slices(); ++t)
            pool_plane(g.data.data() + static_cast<size_t>(t) * plane, s.data() + static_cast<size_t>(t) * grid.cells());
        return s;
    }
    throw MaskError("pool_saliency expects [96,96] or [8,96,96], got " + shape_str(g.shape));
}

template <typename T>
Tensor<T> zero_motion_region(const Tensor<T>& g, const Rect& region) {
    const bool rank2 = g.rank() == 2;
    if (!rank2 && g.rank() != 3) throw MaskError("zero_motion_region expects a rank-2 or rank-3 map");
    const int A = rank2 ? g.dim(1) : g.dim(2);
    const int H = rank2 ? g.dim(0) : g.dim(1);
    if (region.x0 < 0 || region.y0 < 0 || region.x1 > A || region.y1 > H || region.x0 >= region.x1 ||
        region.y0 >= region.y1)
        throw MaskError("zero_motion_region: rectangle out of bounds or empty");
    Tensor<T> out = g;
    const int slices = rank2 ? 1 : g.dim(0);
    const size_t plane = static_cast<size_t>(H) * A;
    for (int s = 0; s < slices; ++s)
        for (int y = region.y0; y < region.y1; ++y)
            for (int x = region.x0; x < region.x1; ++x) out.data[s * plane + static_cast<size_t>(y) * A + x] = T(0);
    return out;
}

}  // namespace iajepa::mask
