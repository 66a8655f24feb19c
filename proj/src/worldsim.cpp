#include "iajepa/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "iajepa/rng.hpp"

namespace iajepa::world {

const float kPalette[kPaletteSize][3] = {
    {0.90f, 0.10f, 0.10f},  // red
    {0.10f, 0.75f, 0.10f},  // green
    {0.15f, 0.25f, 0.95f},  // blue
    {0.95f, 0.85f, 0.10f},  // yellow
    {0.85f, 0.15f, 0.85f},  // magenta
    {0.10f, 0.80f, 0.80f},  // cyan
    {0.95f, 0.55f, 0.10f},  // orange
    {0.95f, 0.95f, 0.95f},  // white
};
const char* const kPaletteNames[kPaletteSize] = {"red",     "green", "blue",   "yellow",
                                                 "magenta", "cyan",  "orange", "white"};

void WorldConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("world config: " + m); };
    if (arena <= 0) fail("arena must be positive");
    if (frames < 3) fail("frames must be at least 3");
    if (substeps < 1) fail("substeps must be at least 1");
    if (n_min < 1 || n_max < n_min) fail("object count range invalid");
    if (n_max > kPaletteSize) fail("n_max exceeds palette size");
    if (r_min <= 0.0 || r_max < r_min) fail("radius range invalid");
    if (2.0 * r_max >= arena) fail("objects must fit in the arena");
    if (speed_max < 0.0) fail("speed_max must be non-negative");
    if (margin < 0.0) fail("margin must be non-negative");
    if (margin > 0.0 && margin <= 2.0 * r_max)
        fail("margin must exceed twice r_max so exits are reachable");
    if (p_clip_static < 0.0 || p_clip_static > 1.0) fail("p_clip_static out of [0,1]");
    if (p_obj_static < 0.0 || p_obj_static > 1.0) fail("p_obj_static out of [0,1]");
    if (background != "gray" && background != "checker") fail("background must be gray or checker");
}

namespace {

struct Scene {
    int n = 0;
    bool clip_static = false;
    std::vector<double> radius, x0, y0, vx0, vy0;
    std::vector<bool> is_static;
    std::vector<int> color;
};

// The full draw sequence is shared between simulate and counterfactual_remove
// so removing an object never perturbs any other draw.
Scene init_scene(const WorldConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    Scene s;
    s.n = cfg.n_min + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_max - cfg.n_min + 1)));
    s.clip_static = rng.uniform() < cfg.p_clip_static;
    s.radius.resize(s.n);
    for (int i = 0; i < s.n; ++i) s.radius[i] = rng.uniform(cfg.r_min, cfg.r_max);

    s.x0.resize(s.n);
    s.y0.resize(s.n);
    for (int i = 0; i < s.n; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            double cx = rng.uniform(s.radius[i], cfg.arena - s.radius[i]);
            double cy = rng.uniform(s.radius[i], cfg.arena - s.radius[i]);
            bool ok = true;
            for (int j = 0; j < i; ++j) {
                double dx = cx - s.x0[j], dy = cy - s.y0[j];
                double need = s.radius[i] + s.radius[j] + 1.0;
                if (dx * dx + dy * dy < need * need) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                s.x0[i] = cx;
                s.y0[i] = cy;
                placed = true;
            }
        }
        if (!placed)
            throw PlacementError("could not place object " + std::to_string(i) + " after 1000 attempts (seed " +
                                 std::to_string(seed) + ")");
    }

    s.vx0.resize(s.n);
    s.vy0.resize(s.n);
    s.is_static.resize(s.n);
    for (int i = 0; i < s.n; ++i) {
        double vx = rng.uniform(-cfg.speed_max, cfg.speed_max);
        double vy = rng.uniform(-cfg.speed_max, cfg.speed_max);
        bool stat = s.clip_static || rng.uniform() < cfg.p_obj_static;
        s.is_static[i] = stat;
        s.vx0[i] = stat ? 0.0 : vx;
        s.vy0[i] = stat ? 0.0 : vy;
    }

    std::vector<int> palette(kPaletteSize);
    std::iota(palette.begin(), palette.end(), 0);
    rng.shuffle(palette);
    s.color.assign(palette.begin(), palette.begin() + s.n);
    return s;
}

int pair_slot(int n, int i, int j) {
    // Upper-triangular (i<j) row-major slot.
    return i * n - i * (i + 1) / 2 + (j - i - 1);
}

WorldTrace run_dynamics(const WorldConfig& cfg, uint64_t seed, int removed, const Scene& s) {
    if (removed >= s.n)
        throw ConfigError("counterfactual removal index " + std::to_string(removed) + " out of range for scene with " +
                          std::to_string(s.n) + " objects");

    WorldTrace tr;
    tr.seed = seed;
    tr.frames = cfg.frames;
    tr.arena = cfg.arena;
    tr.objects.resize(s.n);
    for (int i = 0; i < s.n; ++i) {
        ObjTrack& o = tr.objects[i];
        o.radius = s.radius[i];
        o.color = s.color[i];
        o.removed = (i == removed);
        o.is_static = s.is_static[i];
        o.x.assign(cfg.frames, s.x0[i]);
        o.y.assign(cfg.frames, s.y0[i]);
        o.vx.assign(cfg.frames, 0.0);
        o.vy.assign(cfg.frames, 0.0);
    }

    int n_pairs = s.n * (s.n - 1) / 2;
    tr.pair_min_ratio.assign(n_pairs, std::numeric_limits<double>::infinity());

    std::vector<double> x = s.x0, y = s.y0, vx = s.vx0, vy = s.vy0;
    if (removed >= 0) {
        vx[removed] = 0.0;
        vy[removed] = 0.0;
    }
    auto live = [&](int i) { return !tr.objects[i].removed; };

    auto record_ratios = [&]() {
        for (int i = 0; i < s.n; ++i) {
            if (!live(i)) continue;
            for (int j = i + 1; j < s.n; ++j) {
                if (!live(j)) continue;
                double dx = x[j] - x[i], dy = y[j] - y[i];
                double ratio = std::sqrt(dx * dx + dy * dy) / (s.radius[i] + s.radius[j]);
                double& slot = tr.pair_min_ratio[pair_slot(s.n, i, j)];
                slot = std::min(slot, ratio);
            }
        }
    };

    auto store_frame = [&](int f) {
        for (int i = 0; i < s.n; ++i) {
            tr.objects[i].x[f] = x[i];
            tr.objects[i].y[f] = y[i];
            tr.objects[i].vx[f] = vx[i];
            tr.objects[i].vy[f] = vy[i];
        }
    };

    store_frame(0);
    record_ratios();

    const double lo = -cfg.margin;
    const double hi = cfg.arena + cfg.margin;
    const double dt = 1.0 / cfg.substeps;
    std::vector<bool> exited(s.n, false);

    for (int f = 0; f + 1 < cfg.frames; ++f) {
        for (int step = 0; step < cfg.substeps; ++step) {
            for (int i = 0; i < s.n; ++i) {
                if (!live(i)) continue;
                x[i] += vx[i] * dt;
                y[i] += vy[i] * dt;
            }
            // Reflecting outer walls, one pixel band `margin` beyond the view.
            for (int i = 0; i < s.n; ++i) {
                if (!live(i)) continue;
                double r = s.radius[i];
                if (x[i] - r < lo && vx[i] < 0.0) {
                    x[i] = 2.0 * (lo + r) - x[i];
                    vx[i] = -vx[i];
                    tr.events.push_back({"wall_bounce", f, i, -1, 0.0, 0.0});
                } else if (x[i] + r > hi && vx[i] > 0.0) {
                    x[i] = 2.0 * (hi - r) - x[i];
                    vx[i] = -vx[i];
                    tr.events.push_back({"wall_bounce", f, i, -1, 0.0, 0.0});
                }
                if (y[i] - r < lo && vy[i] < 0.0) {
                    y[i] = 2.0 * (lo + r) - y[i];
                    vy[i] = -vy[i];
                    tr.events.push_back({"wall_bounce", f, i, -1, 0.0, 0.0});
                } else if (y[i] + r > hi && vy[i] > 0.0) {
                    y[i] = 2.0 * (hi - r) - y[i];
                    vy[i] = -vy[i];
                    tr.events.push_back({"wall_bounce", f, i, -1, 0.0, 0.0});
                }
            }
            // Equal-mass elastic contacts: swap normal velocity components of
            // overlapping, approaching pairs, ascending pair order.
            for (int i = 0; i < s.n; ++i) {
                if (!live(i)) continue;
                for (int j = i + 1; j < s.n; ++j) {
                    if (!live(j)) continue;
                    double dx = x[j] - x[i], dy = y[j] - y[i];
                    double d2 = dx * dx + dy * dy;
                    double rsum = s.radius[i] + s.radius[j];
                    if (d2 > rsum * rsum || d2 <= 0.0) continue;
                    double dvx = vx[j] - vx[i], dvy = vy[j] - vy[i];
                    if (dvx * dx + dvy * dy >= 0.0) continue;  // separating
                    double d = std::sqrt(d2);
                    double nx = dx / d, ny = dy / d;
                    double vin = vx[i] * nx + vy[i] * ny;
                    double vjn = vx[j] * nx + vy[j] * ny;
                    vx[i] += (vjn - vin) * nx;
                    vy[i] += (vjn - vin) * ny;
                    vx[j] += (vin - vjn) * nx;
                    vy[j] += (vin - vjn) * ny;
                    tr.events.push_back({"collision", f, i, j, 0.5 * (x[i] + x[j]), 0.5 * (y[i] + y[j])});
                }
            }
            record_ratios();
        }
        // Exit: first frame boundary at which the disk lies fully outside the view.
        for (int i = 0; i < s.n; ++i) {
            if (!live(i) || exited[i]) continue;
            double r = s.radius[i];
            if (x[i] + r < 0.0 || x[i] - r > cfg.arena || y[i] + r < 0.0 || y[i] - r > cfg.arena) {
                exited[i] = true;
                tr.events.push_back({"exit", f + 1, i, -1, 0.0, 0.0});
            }
        }
        store_frame(f + 1);
    }
    return tr;
}

// Pixel-center disk coverage in arena (pre-pan) coordinates.
bool covered_by(const ObjTrack& o, int frame, int px, int py) {
    double dx = px + 0.5 - o.x[frame];
    double dy = py + 0.5 - o.y[frame];
    return dx * dx + dy * dy <= o.radius * o.radius;
}

int wrap_mod(int v, int m) {
    int r = v % m;
    return r < 0 ? r + m : r;
}

}  // namespace

int WorldTrace::live_count() const {
    int n = 0;
    for (const auto& o : objects) n += o.removed ? 0 : 1;
    return n;
}

int WorldTrace::collision_count() const {
    int n = 0;
    for (const auto& e : events) n += (e.kind == "collision") ? 1 : 0;
    return n;
}

double WorldTrace::min_pair_ratio() const {
    double m = std::numeric_limits<double>::infinity();
    for (double r : pair_min_ratio) m = std::min(m, r);
    return m;
}

WorldTrace simulate(const WorldConfig& cfg, uint64_t seed) {
    cfg.validate();
    return run_dynamics(cfg, seed, -1, init_scene(cfg, seed));
}

WorldTrace counterfactual_remove(const WorldConfig& cfg, uint64_t seed, int removed) {
    cfg.validate();
    if (removed < 0) throw ConfigError("counterfactual removal index must be non-negative");
    return run_dynamics(cfg, seed, removed, init_scene(cfg, seed));
}

WorldTrace simulate_scene(const WorldConfig& cfg, const SceneInit& init, uint64_t seed_label) {
    cfg.validate();
    Scene s;
    s.n = static_cast<int>(init.radius.size());
    if (s.n < 1) throw ConfigError("scene init needs at least one object");
    if (init.x.size() != init.radius.size() || init.y.size() != init.radius.size() ||
        init.vx.size() != init.radius.size() || init.vy.size() != init.radius.size())
        throw ConfigError("scene init arrays must have equal length");
    s.radius = init.radius;
    s.x0 = init.x;
    s.y0 = init.y;
    s.vx0 = init.vx;
    s.vy0 = init.vy;
    s.is_static.assign(s.n, false);
    if (!init.is_static.empty()) {
        if (static_cast<int>(init.is_static.size()) != s.n) throw ConfigError("scene init is_static length mismatch");
        for (int i = 0; i < s.n; ++i) {
            s.is_static[i] = init.is_static[i];
            if (s.is_static[i]) {
                s.vx0[i] = 0.0;
                s.vy0[i] = 0.0;
            }
        }
    }
    if (init.color.empty()) {
        s.color.resize(s.n);
        std::iota(s.color.begin(), s.color.end(), 0);
    } else {
        if (static_cast<int>(init.color.size()) != s.n) throw ConfigError("scene init color length mismatch");
        for (int c : init.color)
            if (c < 0 || c >= kPaletteSize) throw ConfigError("scene init color out of palette range");
        s.color = init.color;
    }
    if (s.n > kPaletteSize) throw ConfigError("scene init has more objects than palette entries");
    return run_dynamics(cfg, seed_label, -1, s);
}

std::string classify_events(const WorldTrace& trace, double near_miss_ratio) {
    int collisions = trace.collision_count();
    if (collisions >= 2) return "multi-collision";
    if (collisions == 1) return "single-collision";
    for (const auto& e : trace.events)
        if (e.kind == "exit") return "exit";
    bool anything_moves = false;
    for (const auto& o : trace.objects)
        if (!o.removed && (o.vx[0] != 0.0 || o.vy[0] != 0.0)) anything_moves = true;
    if (anything_moves && trace.min_pair_ratio() < near_miss_ratio) return "near-miss";
    return "static";
}

Tensor<float> render(const WorldTrace& trace, const WorldConfig& cfg) {
    const int A = cfg.arena;
    Tensor<float> clip({trace.frames, kChannels, A, A});
    std::vector<float> scene(static_cast<size_t>(kChannels) * A * A);
    for (int t = 0; t < trace.frames; ++t) {
        // Compose the unshifted scene for frame t.
        for (int py = 0; py < A; ++py) {
            for (int px = 0; px < A; ++px) {
                float rgb[3];
                if (cfg.background == "checker") {
                    bool dark = ((px / 8) + (py / 8)) % 2 == 0;
                    float g = dark ? 0.25f : 0.55f;
                    rgb[0] = rgb[1] = rgb[2] = g;
                } else {
                    rgb[0] = rgb[1] = rgb[2] = 0.10f;
                }
                for (const auto& o : trace.objects) {
                    if (o.removed) continue;
                    if (covered_by(o, t, px, py)) {
                        rgb[0] = kPalette[o.color][0];
                        rgb[1] = kPalette[o.color][1];
                        rgb[2] = kPalette[o.color][2];
                    }
                }
                size_t base = (static_cast<size_t>(py) * A + px);
                scene[0 * A * A + base] = rgb[0];
                scene[1 * A * A + base] = rgb[1];
                scene[2 * A * A + base] = rgb[2];
            }
        }
        // Camera pan as a cyclic shift of the composed frame.
        int sx = wrap_mod(t * cfg.pan_dx, A);
        int sy = wrap_mod(t * cfg.pan_dy, A);
        for (int c = 0; c < kChannels; ++c) {
            for (int py = 0; py < A; ++py) {
                int src_y = wrap_mod(py - sy, A);
                for (int px = 0; px < A; ++px) {
                    int src_x = wrap_mod(px - sx, A);
                    float v = scene[(static_cast<size_t>(c) * A + src_y) * A + src_x];
                    clip.data[((static_cast<size_t>(t) * kChannels + c) * A + py) * A + px] =
                        std::clamp(v, 0.0f, 1.0f);
                }
            }
        }
    }
    return clip;
}

namespace {

// Shared coverage counting for make_labels / per_object_occupancy. Screen
// pixel (px,py) at frame t views arena pixel ((px - t*dx) mod A, ...).
template <typename Fn>
void count_coverage(const WorldTrace& trace, const WorldConfig& cfg, const TokenGridSpec& grid, Fn&& add) {
    const int A = cfg.arena;
    for (int t = 0; t < trace.frames; ++t) {
        int sx = wrap_mod(t * cfg.pan_dx, A);
        int sy = wrap_mod(t * cfg.pan_dy, A);
        int slice = t / grid.tube_frames;
        for (int py = 0; py < A; ++py) {
            int src_y = wrap_mod(py - sy, A);
            int row = py / grid.patch;
            for (int px = 0; px < A; ++px) {
                int src_x = wrap_mod(px - sx, A);
                int tok = grid.index(slice, row, px / grid.patch);
                for (int i = 0; i < static_cast<int>(trace.objects.size()); ++i) {
                    const auto& o = trace.objects[i];
                    if (o.removed) continue;
                    if (covered_by(o, t, src_x, src_y)) add(tok, i);
                }
            }
        }
    }
}

}  // namespace

LabelSet make_labels(const WorldTrace& trace, const WorldConfig& cfg, const TokenGridSpec& grid) {
    LabelSet lab;
    lab.seed = trace.seed;
    lab.events = trace.events;
    lab.collision_present = trace.collision_present();
    lab.event_class = classify_events(trace);

    const double pixels_per_token = static_cast<double>(grid.patch) * grid.patch * grid.tube_frames;
    lab.occupancy.assign(grid.tokens(), 0.0);
    // "Any disk covers the pixel" must not double-count overlapping disks:
    // each pixel contributes at most one count.
    {
        const int A = cfg.arena;
        for (int t = 0; t < trace.frames; ++t) {
            int sx = wrap_mod(t * cfg.pan_dx, A);
            int sy = wrap_mod(t * cfg.pan_dy, A);
            int slice = t / grid.tube_frames;
            for (int py = 0; py < A; ++py) {
                int src_y = wrap_mod(py - sy, A);
                int row = py / grid.patch;
                for (int px = 0; px < A; ++px) {
                    int src_x = wrap_mod(px - sx, A);
                    bool hit = false;
                    for (const auto& o : trace.objects) {
                        if (o.removed) continue;
                        if (covered_by(o, t, src_x, src_y)) {
                            hit = true;
                            break;
                        }
                    }
                    if (hit) lab.occupancy[grid.index(slice, row, px / grid.patch)] += 1.0;
                }
            }
        }
        for (double& v : lab.occupancy) v /= pixels_per_token;
    }

    // Interaction neighborhood: for each collision at transition frame f with
    // contact point (x,y), the 3x3 spatial patch block around the contact cell
    // in the temporal slices covering frames f-1, f, f+1 (clamped to range).
    std::set<int> toks;
    for (const auto& e : trace.events) {
        if (e.kind != "collision") continue;
        bool panning = cfg.pan_dx != 0 || cfg.pan_dy != 0;
        double cx = std::clamp(e.x, 0.0, cfg.arena - 1e-9);
        double cy = std::clamp(e.y, 0.0, cfg.arena - 1e-9);
        for (int df = e.frame - 1; df <= e.frame + 1; ++df) {
            if (df < 0 || df >= trace.frames) continue;
            double sxd = cx, syd = cy;
            if (panning) {
                sxd = std::fmod(cx + static_cast<double>(df) * cfg.pan_dx, static_cast<double>(cfg.arena));
                if (sxd < 0) sxd += cfg.arena;
                syd = std::fmod(cy + static_cast<double>(df) * cfg.pan_dy, static_cast<double>(cfg.arena));
                if (syd < 0) syd += cfg.arena;
            }
            int col = std::clamp(static_cast<int>(sxd) / grid.patch, 0, grid.grid_side() - 1);
            int row = std::clamp(static_cast<int>(syd) / grid.patch, 0, grid.grid_side() - 1);
            int slice = df / grid.tube_frames;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    int r2 = row + dr, c2 = col + dc;
                    if (r2 < 0 || r2 >= grid.grid_side() || c2 < 0 || c2 >= grid.grid_side()) continue;
                    toks.insert(grid.index(slice, r2, c2));
                }
            }
        }
    }
    lab.interaction_tokens.assign(toks.begin(), toks.end());
    return lab;
}

std::vector<std::vector<double>> per_object_occupancy(const WorldTrace& trace, const WorldConfig& cfg,
                                                      const TokenGridSpec& grid) {
    const double pixels_per_token = static_cast<double>(grid.patch) * grid.patch * grid.tube_frames;
    std::vector<std::vector<double>> occ(trace.objects.size(), std::vector<double>(grid.tokens(), 0.0));
    count_coverage(trace, cfg, grid, [&](int tok, int obj) { occ[obj][tok] += 1.0; });
    for (auto& row : occ)
        for (double& v : row) v /= pixels_per_token;
    return occ;
}

}  // namespace iajepa::world
