// Pinned clip and token-grid geometry: 16-frame 96x96 RGB clips cut into
// 2x16x16 tubelets, giving 8 temporal slices x 6x6 spatial cells = 288 tokens.
#pragma once

#include <stdexcept>

namespace iajepa {

constexpr int kFrames = 16;
constexpr int kChannels = 3;
constexpr int kImage = 96;
constexpr int kPatch = 16;
constexpr int kTubeFrames = 2;
constexpr int kSlices = kFrames / kTubeFrames;              // 8
constexpr int kGridSide = kImage / kPatch;                  // 6
constexpr int kCells = kGridSide * kGridSide;               // 36
constexpr int kTokens = kSlices * kCells;                   // 288
constexpr int kTubeletValues = kTubeFrames * kChannels * kPatch * kPatch;  // 1536

struct TokenGridSpec {
    int frames = kFrames;
    int tube_frames = kTubeFrames;
    int image = kImage;
    int patch = kPatch;

    int slices() const { return frames / tube_frames; }
    int grid_side() const { return image / patch; }
    int cells() const { return grid_side() * grid_side(); }
    int tokens() const { return slices() * cells(); }

    // idx = t'*36 + row*6 + col
    int index(int slice, int row, int col) const {
        if (slice < 0 || slice >= slices() || row < 0 || row >= grid_side() || col < 0 || col >= grid_side())
            throw std::out_of_range("token index out of grid");
        return slice * cells() + row * grid_side() + col;
    }
    int slice_of(int idx) const { return idx / cells(); }
    int row_of(int idx) const { return (idx % cells()) / grid_side(); }
    int col_of(int idx) const { return idx % grid_side(); }
};

}  // namespace iajepa
