// Clip normalization, tubelet partition into 288 tokens of 1536 values, and
// linear patch embedding with a learned positional table.
#pragma once

#include <array>
#include <stdexcept>

#include "iajepa/grid.hpp"
#include "iajepa/kernels.hpp"
#include "iajepa/rng.hpp"
#include "iajepa/tensor.hpp"

namespace iajepa {

struct NormConstants {
    std::array<double, 3> mu{0.485, 0.456, 0.406};
    std::array<double, 3> sigma{0.229, 0.224, 0.225};

    void validate() const {
        for (double s : sigma)
            if (!(s > 0.0)) throw std::invalid_argument("normalization sigma must be positive");
    }
};

// x' = (x - mu_c) / sigma_c, per channel, on a [T,C,H,W] clip.
template <typename T>
Tensor<T> normalize_clip(const Tensor<T>& clip, const NormConstants& nc = {}) {
    nc.validate();
    if (clip.rank() != 4 || clip.dim(1) != kChannels)
        throw std::invalid_argument("normalize_clip expects [T,3,H,W], got " + shape_str(clip.shape));
    Tensor<T> out(clip.shape);
    const int t_n = clip.dim(0), h = clip.dim(2), w = clip.dim(3);
    const size_t plane = static_cast<size_t>(h) * w;
    for (int t = 0; t < t_n; ++t) {
        for (int c = 0; c < kChannels; ++c) {
            const T mu = static_cast<T>(nc.mu[c]);
            const T inv = static_cast<T>(1.0 / nc.sigma[c]);
            const T* src = clip.data.data() + (static_cast<size_t>(t) * kChannels + c) * plane;
            T* dst = out.data.data() + (static_cast<size_t>(t) * kChannels + c) * plane;
            for (size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * inv;
        }
    }
    return out;
}

// [16,3,96,96] -> [288,1536]; token idx = t'*36 + row*6 + col gathers frames
// [2t', 2t'+1], rows [16*row, ...), cols [16*col, ...); values flattened in
// (frame, channel, row, col) order.
template <typename T>
Tensor<T> tubelet_partition(const Tensor<T>& clip, const TokenGridSpec& grid = {}) {
    if (clip.rank() != 4 || clip.dim(0) != grid.frames || clip.dim(1) != kChannels || clip.dim(2) != grid.image ||
        clip.dim(3) != grid.image)
        throw std::invalid_argument("tubelet_partition expects [16,3,96,96], got " + shape_str(clip.shape));
    const int P = grid.patch, G = grid.grid_side(), A = grid.image;
    const int values = grid.tube_frames * kChannels * P * P;
    Tensor<T> tokens({grid.tokens(), values});
    for (int slice = 0; slice < grid.slices(); ++slice) {
        for (int row = 0; row < G; ++row) {
            for (int col = 0; col < G; ++col) {
                T* dst = tokens.data.data() + static_cast<size_t>(grid.index(slice, row, col)) * values;
                for (int fl = 0; fl < grid.tube_frames; ++fl) {
                    int t = slice * grid.tube_frames + fl;
                    for (int c = 0; c < kChannels; ++c) {
                        const T* plane = clip.data.data() + (static_cast<size_t>(t) * kChannels + c) * A * A;
                        for (int r = 0; r < P; ++r) {
                            const T* src = plane + static_cast<size_t>(row * P + r) * A + col * P;
                            for (int cc = 0; cc < P; ++cc) *dst++ = src[cc];
                        }
                    }
                }
            }
        }
    }
    return tokens;
}

// Exact inverse of tubelet_partition (partition property).
template <typename T>
Tensor<T> reassemble_clip(const Tensor<T>& tokens, const TokenGridSpec& grid = {}) {
    const int P = grid.patch, G = grid.grid_side(), A = grid.image;
    const int values = grid.tube_frames * kChannels * P * P;
    if (tokens.rank() != 2 || tokens.dim(0) != grid.tokens() || tokens.dim(1) != values)
        throw std::invalid_argument("reassemble_clip expects [288,1536], got " + shape_str(tokens.shape));
    Tensor<T> clip({grid.frames, kChannels, A, A});
    for (int slice = 0; slice < grid.slices(); ++slice) {
        for (int row = 0; row < G; ++row) {
            for (int col = 0; col < G; ++col) {
                const T* src = tokens.data.data() + static_cast<size_t>(grid.index(slice, row, col)) * values;
                for (int fl = 0; fl < grid.tube_frames; ++fl) {
                    int t = slice * grid.tube_frames + fl;
                    for (int c = 0; c < kChannels; ++c) {
                        T* plane = clip.data.data() + (static_cast<size_t>(t) * kChannels + c) * A * A;
                        for (int r = 0; r < P; ++r) {
                            T* dst = plane + static_cast<size_t>(row * P + r) * A + col * P;
                            for (int cc = 0; cc < P; ++cc) dst[cc] = *src++;
                        }
                    }
                }
            }
        }
    }
    return clip;
}

// Patch projection (1536 -> D) plus learned positional table (tokens x D).
template <typename T>
struct EmbedParams {
    Tensor<T> w_e;  // [1536, D]
    Tensor<T> b;    // [1, D]
    Tensor<T> pos;  // [tokens, D]

    EmbedParams(int values, int tokens, int d)
        : w_e({values, d}), b({1, d}), pos({tokens, d}) {}

    // normal(0, 0.02) weights and positions, zero bias
    void init(Rng& rng) {
        for (auto& v : w_e.data) v = static_cast<T>(rng.normal(0.0, 0.02));
        for (auto& v : b.data) v = T(0);
        for (auto& v : pos.data) v = static_cast<T>(rng.normal(0.0, 0.02));
    }
};

// e_idx = W_e^T token + b + P[idx], for all rows.
template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& tokens, const EmbedParams<T>& params) {
    if (tokens.rank() != 2 || tokens.dim(1) != params.w_e.dim(0))
        throw std::invalid_argument("embed_tokens: token shape " + shape_str(tokens.shape) +
                                    " does not match projection " + shape_str(params.w_e.shape));
    if (tokens.dim(0) != params.pos.dim(0))
        throw std::invalid_argument("embed_tokens: token count " + std::to_string(tokens.dim(0)) +
                                    " does not match positional table " + shape_str(params.pos.shape));
    const int n = tokens.dim(0), d = params.w_e.dim(1), k = tokens.dim(1);
    Tensor<T> out({n, d});
    kern::matmul(tokens.data.data(), params.w_e.data.data(), out.data.data(), n, d, k, false, false);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out.data[static_cast<size_t>(i) * d + j] += params.b.data[j] + params.pos.data[static_cast<size_t>(i) * d + j];
    return out;
}

}  // namespace iajepa
