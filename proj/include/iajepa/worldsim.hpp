// Deterministic 2D rigid-body world: colored elastic disks in a square arena,
// rendered to fixed-length RGB clips with dense event / occupancy labels.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iajepa/grid.hpp"
#include "iajepa/tensor.hpp"

namespace iajepa::world {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct PlacementError : std::runtime_error {
    explicit PlacementError(const std::string& m) : std::runtime_error(m) {}
};

// Named palette used for disk colors; a seeded permutation assigns one
// distinct entry per object.
constexpr int kPaletteSize = 8;
extern const float kPalette[kPaletteSize][3];
extern const char* const kPaletteNames[kPaletteSize];

struct WorldConfig {
    int arena = 96;           // visible square, pixels
    int frames = 16;
    int substeps = 4;         // physics substeps per frame transition
    int n_min = 3;
    int n_max = 5;
    double r_min = 8.0;
    double r_max = 12.0;
    double speed_max = 3.0;   // per-frame speed bound per axis
    double margin = 30.0;     // off-screen band before the reflecting wall
    double p_clip_static = 0.08;  // whole clip frozen
    double p_obj_static = 0.10;   // per-object frozen
    std::string background = "gray";  // "gray" | "checker"
    int pan_dx = 0;           // camera pan, integer pixels per frame
    int pan_dy = 0;

    void validate() const;    // throws ConfigError on out-of-range values
};

// One recorded event. For kind=="collision", j is the second participant and
// (x, y) the contact midpoint in arena coordinates; otherwise j = -1, x=y=0.
struct WorldEvent {
    std::string kind;   // "collision" | "wall_bounce" | "exit"
    int frame = 0;      // transitions during frame f -> f+1 log frame f; exits log the boundary
    int i = -1;
    int j = -1;
    double x = 0.0;
    double y = 0.0;
};

struct ObjTrack {
    double radius = 0.0;
    int color = 0;            // palette index
    bool removed = false;     // counterfactually deleted: excluded from physics/render/labels
    bool is_static = false;   // drawn with zero velocity
    std::vector<double> x, y, vx, vy;  // per-frame states, size frames
};

struct WorldTrace {
    uint64_t seed = 0;
    int frames = 0;
    int arena = 0;
    std::vector<ObjTrack> objects;
    std::vector<WorldEvent> events;
    // Minimum center distance / (r_i + r_j) seen over all substates, upper-
    // triangular pair order (i<j); pairs with a removed object hold +inf.
    std::vector<double> pair_min_ratio;

    int live_count() const;
    int collision_count() const;
    bool collision_present() const { return collision_count() > 0; }
    double min_pair_ratio() const;  // +inf when fewer than two live objects
};

struct LabelSet {
    bool collision_present = false;
    std::string event_class;  // static | near-miss | single-collision | multi-collision | exit
    std::vector<WorldEvent> events;
    std::vector<double> occupancy;        // per token, fraction of pixels covered by any disk
    std::vector<int> interaction_tokens;  // sorted unique token ids around collisions
    uint64_t seed = 0;
};

// Event-class precedence: multi-collision > single-collision > exit > near-miss > static.
std::string classify_events(const WorldTrace& trace, double near_miss_ratio = 1.5);

WorldTrace simulate(const WorldConfig& cfg, uint64_t seed);

// Hand-constructed initial condition, bypassing the seeded draws. Used to
// probe the dynamics with exact known states.
struct SceneInit {
    std::vector<double> radius, x, y, vx, vy;
    std::vector<bool> is_static;  // empty -> all false
    std::vector<int> color;       // palette indices; empty -> 0,1,2,...
};
WorldTrace simulate_scene(const WorldConfig& cfg, const SceneInit& init, uint64_t seed_label = 0);

// Same draws as simulate(cfg, seed), with object `removed` excluded from the
// dynamics. Object indices and colors are preserved. Throws ConfigError when
// `removed` is out of range for the scene.
WorldTrace counterfactual_remove(const WorldConfig& cfg, uint64_t seed, int removed);

// [frames, 3, arena, arena] float clip in [0,1]. Pixels are painted when the
// pixel center falls inside a disk, later object indices over earlier; the
// composed scene is cyclically shifted by t*(pan_dx, pan_dy) per frame.
Tensor<float> render(const WorldTrace& trace, const WorldConfig& cfg);

LabelSet make_labels(const WorldTrace& trace, const WorldConfig& cfg, const TokenGridSpec& grid);

// Per-object token occupancy [n_objects][tokens], same coverage counting as
// make_labels but split by object (later-over-earlier does not apply: each
// object counts its own coverage).
std::vector<std::vector<double>> per_object_occupancy(const WorldTrace& trace, const WorldConfig& cfg,
                                                      const TokenGridSpec& grid);

}  // namespace iajepa::world
