// World-model tests: conservation laws checked against first-principles
// accounting, event classification, rendering geometry, label coverage, and
// counterfactual consistency.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <set>

#include "iajepa/dataset.hpp"
#include "iajepa/worldsim.hpp"

using namespace iajepa;
using namespace iajepa::world;

namespace {

double kinetic_energy(const WorldTrace& tr, int f) {
    double e = 0.0;
    for (const auto& o : tr.objects)
        if (!o.removed) e += o.vx[f] * o.vx[f] + o.vy[f] * o.vy[f];
    return e;
}

std::pair<double, double> momentum(const WorldTrace& tr, int f) {
    double px = 0.0, py = 0.0;
    for (const auto& o : tr.objects) {
        if (o.removed) continue;
        px += o.vx[f];
        py += o.vy[f];
    }
    return {px, py};
}

bool frame_has_wall_bounce(const WorldTrace& tr, int f) {
    for (const auto& e : tr.events)
        if (e.kind == "wall_bounce" && e.frame == f) return true;
    return false;
}

}  // namespace

TEST_CASE("config validation rejects out-of-range values") {
    WorldConfig c;
    CHECK_NOTHROW(c.validate());
    WorldConfig bad = c;
    bad.n_max = 9;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.r_max = 50.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.background = "plaid";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.margin = 10.0;  // must exceed 2*r_max
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.p_obj_static = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("simulation and render are bit-identical for equal seeds") {
    WorldConfig cfg;
    WorldTrace a = simulate(cfg, 123);
    WorldTrace b = simulate(cfg, 123);
    REQUIRE(a.objects.size() == b.objects.size());
    for (size_t i = 0; i < a.objects.size(); ++i) {
        CHECK(a.objects[i].x == b.objects[i].x);
        CHECK(a.objects[i].y == b.objects[i].y);
        CHECK(a.objects[i].vx == b.objects[i].vx);
        CHECK(a.objects[i].vy == b.objects[i].vy);
        CHECK(a.objects[i].color == b.objects[i].color);
    }
    REQUIRE(a.events.size() == b.events.size());
    Tensor<float> ra = render(a, cfg), rb = render(b, cfg);
    CHECK(std::memcmp(ra.data.data(), rb.data.data(), ra.data.size() * sizeof(float)) == 0);

    WorldTrace c = simulate(cfg, 124);
    bool differs = a.objects.size() != c.objects.size();
    if (!differs) differs = a.objects[0].x != c.objects[0].x;
    CHECK(differs);
}

TEST_CASE("kinetic energy is conserved through every transition") {
    WorldConfig cfg;
    int checked = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        WorldTrace tr = simulate(cfg, seed);
        double e0 = kinetic_energy(tr, 0);
        for (int f = 1; f < tr.frames; ++f) {
            CHECK(std::abs(kinetic_energy(tr, f) - e0) <= 1e-9 * (1.0 + e0));
            ++checked;
        }
    }
    CHECK(checked == 200 * 15);
}

TEST_CASE("momentum is conserved across transitions without wall bounces") {
    WorldConfig cfg;
    int collision_frames_checked = 0;
    for (uint64_t seed = 0; seed < 200; ++seed) {
        WorldTrace tr = simulate(cfg, seed);
        for (int f = 0; f + 1 < tr.frames; ++f) {
            if (frame_has_wall_bounce(tr, f)) continue;
            auto [px0, py0] = momentum(tr, f);
            auto [px1, py1] = momentum(tr, f + 1);
            CHECK(std::abs(px1 - px0) <= 1e-9 * (1.0 + std::abs(px0)));
            CHECK(std::abs(py1 - py0) <= 1e-9 * (1.0 + std::abs(py0)));
            for (const auto& e : tr.events)
                if (e.kind == "collision" && e.frame == f) ++collision_frames_checked;
        }
    }
    CHECK(collision_frames_checked > 20);  // the check actually covered collisions
}

TEST_CASE("wall-free world conserves total momentum over the whole trace") {
    WorldConfig cfg;
    cfg.margin = 4096.0;  // unreachable in 15 transitions at speed <= 4
    for (uint64_t seed = 300; seed < 360; ++seed) {
        WorldTrace tr = simulate(cfg, seed);
        auto [px0, py0] = momentum(tr, 0);
        for (int f = 1; f < tr.frames; ++f) {
            auto [px, py] = momentum(tr, f);
            CHECK(std::abs(px - px0) <= 1e-9 * (1.0 + std::abs(px0)));
            CHECK(std::abs(py - py0) <= 1e-9 * (1.0 + std::abs(py0)));
        }
    }
}

TEST_CASE("symmetric head-on contact swaps velocities exactly") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {8.0, 8.0};
    s.x = {30.0, 66.0};
    s.y = {48.0, 48.0};
    s.vx = {3.0, -3.0};
    s.vy = {0.0, 0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    REQUIRE(tr.collision_count() == 1);
    int f_end = tr.frames - 1;
    // Equal-mass elastic exchange: vx swap, vy untouched, bitwise.
    CHECK(tr.objects[0].vx[f_end] == -3.0);
    CHECK(tr.objects[1].vx[f_end] == 3.0);
    CHECK(tr.objects[0].vy[f_end] == 0.0);
    CHECK(tr.objects[1].vy[f_end] == 0.0);
    // Contact at the midpoint between equal disks: y stays on the line.
    const WorldEvent* hit = nullptr;
    for (const auto& e : tr.events)
        if (e.kind == "collision") hit = &e;
    REQUIRE(hit != nullptr);
    CHECK(hit->y == doctest::Approx(48.0).epsilon(1e-12));
    CHECK(std::abs(hit->x - 48.0) < 2.0);  // contact near arena center
    CHECK(classify_events(tr) == "single-collision");
}

TEST_CASE("grazing pass below threshold classifies near-miss") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {6.0, 6.0};
    s.x = {20.0, 76.0};
    s.y = {40.0, 56.0};  // vertical gap 16 > 12 (no contact), ratio 16/12 < 1.5 at closest x
    s.vx = {3.0, -3.0};
    s.vy = {0.0, 0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    CHECK(tr.collision_count() == 0);
    CHECK(tr.min_pair_ratio() < 1.5);
    CHECK(tr.min_pair_ratio() > 1.0);
    CHECK(classify_events(tr) == "near-miss");
}

TEST_CASE("fast object leaving the view records a single exit") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {6.0, 6.0};
    s.x = {10.0, 80.0};
    s.y = {20.0, 80.0};
    s.vx = {-4.0, 0.0};
    s.vy = {0.0, 0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    int exits = 0;
    int exit_frame = -1;
    for (const auto& e : tr.events)
        if (e.kind == "exit") {
            ++exits;
            exit_frame = e.frame;
            CHECK(e.i == 0);
        }
    REQUIRE(exits == 1);
    // Fully outside needs x < -6, starting at 10 with -4/frame: first boundary after frame 4.
    CHECK(exit_frame == 5);
    CHECK(classify_events(tr) == "exit");
}

TEST_CASE("all-static scene classifies static even when disks sit close") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {8.0, 8.0};
    s.x = {40.0, 57.0};  // gap ratio 17/16 < 1.5 but nothing moves
    s.y = {48.0, 48.0};
    s.vx = {0.0, 0.0};
    s.vy = {0.0, 0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    CHECK(tr.events.empty());
    CHECK(classify_events(tr) == "static");
    Tensor<float> clip = render(tr, cfg);
    size_t frame_sz = static_cast<size_t>(kChannels) * cfg.arena * cfg.arena;
    for (int t = 1; t < tr.frames; ++t)
        CHECK(std::memcmp(clip.data.data(), clip.data.data() + t * frame_sz, frame_sz * sizeof(float)) == 0);
}

TEST_CASE("three-disk chain produces multiple collisions") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {6.0, 6.0, 6.0};
    s.x = {20.0, 48.0, 76.0};
    s.y = {48.0, 48.0, 48.0};
    s.vx = {4.0, 0.0, -4.0};
    s.vy = {0.0, 0.0, 0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    CHECK(tr.collision_count() >= 2);
    CHECK(classify_events(tr) == "multi-collision");
}

TEST_CASE("render paints disks over background with palette colors in [0,1]") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {10.0};
    s.x = {48.0};
    s.y = {48.0};
    s.vx = {0.0};
    s.vy = {0.0};
    s.color = {2};  // blue
    WorldTrace tr = simulate_scene(cfg, s);
    Tensor<float> clip = render(tr, cfg);
    REQUIRE(clip.shape == std::vector<int>({16, 3, 96, 96}));
    auto px = [&](int t, int c, int y, int x) {
        return clip.data[((static_cast<size_t>(t) * 3 + c) * 96 + y) * 96 + x];
    };
    CHECK(px(0, 0, 48, 48) == kPalette[2][0]);
    CHECK(px(0, 1, 48, 48) == kPalette[2][1]);
    CHECK(px(0, 2, 48, 48) == kPalette[2][2]);
    CHECK(px(0, 0, 2, 2) == 0.10f);  // gray background
    for (float v : clip.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("checker background uses 8px cells of two grays") {
    WorldConfig cfg;
    cfg.background = "checker";
    SceneInit s;
    s.radius = {6.0};
    s.x = {80.0};
    s.y = {80.0};
    s.vx = {0.0};
    s.vy = {0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    Tensor<float> clip = render(tr, cfg);
    auto px = [&](int c, int y, int x) { return clip.data[((0 * 3 + static_cast<size_t>(c)) * 96 + y) * 96 + x]; };
    CHECK(px(0, 0, 0) == 0.25f);   // cell (0,0) dark
    CHECK(px(0, 0, 8) == 0.55f);   // cell (0,1) light
    CHECK(px(0, 8, 0) == 0.55f);
    CHECK(px(0, 8, 8) == 0.25f);
}

TEST_CASE("camera pan produces exact cyclic shifts of the composed frame") {
    WorldConfig cfg;
    cfg.pan_dx = 2;
    cfg.pan_dy = 0;
    cfg.background = "checker";
    SceneInit s;
    s.radius = {9.0};
    s.x = {30.0};
    s.y = {40.0};
    s.vx = {0.0};
    s.vy = {0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    Tensor<float> clip = render(tr, cfg);
    auto px = [&](int t, int c, int y, int x) {
        return clip.data[((static_cast<size_t>(t) * 3 + c) * 96 + y) * 96 + x];
    };
    for (int t = 1; t < 16; ++t) {
        int shift = (2 * t) % 96;
        for (int y = 0; y < 96; y += 7) {
            for (int x = 0; x < 96; x += 5) {
                int sx = ((x - shift) % 96 + 96) % 96;
                CHECK(px(t, 0, y, x) == px(0, 0, y, sx));
            }
        }
    }
}

TEST_CASE("occupancy is exact for a disk fully covering one cell") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {16.0};
    s.x = {24.0};  // cell (row 1, col 1) spans [16,32)^2; all its pixel centers are inside
    s.y = {24.0};
    s.vx = {0.0};
    s.vy = {0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    TokenGridSpec grid;
    LabelSet lab = make_labels(tr, cfg, grid);
    for (int t = 0; t < 8; ++t) {
        CHECK(lab.occupancy[grid.index(t, 1, 1)] == 1.0);
        CHECK(lab.occupancy[grid.index(t, 5, 5)] == 0.0);
    }
    // Total covered pixels per frame = pi r^2 to within the pixelization.
    double total = 0.0;
    for (int k = 0; k < grid.tokens(); ++k) total += lab.occupancy[k];
    double pixels = total * grid.patch * grid.patch * grid.tube_frames / 16.0;  // per frame
    CHECK(std::abs(pixels - 3.14159265 * 256.0) < 30.0);
}

TEST_CASE("interaction tokens are nonempty exactly when a collision happened") {
    WorldConfig cfg;
    TokenGridSpec grid;
    int with = 0, without = 0;
    for (uint64_t seed = 0; seed < 120; ++seed) {
        WorldTrace tr = simulate(cfg, seed);
        LabelSet lab = make_labels(tr, cfg, grid);
        CHECK(lab.collision_present == !lab.interaction_tokens.empty());
        (lab.collision_present ? with : without)++;
        int prev = -1;
        for (int t : lab.interaction_tokens) {
            CHECK(t > prev);  // sorted unique
            CHECK(t >= 0);
            CHECK(t < grid.tokens());
            prev = t;
        }
    }
    CHECK(with > 10);
    CHECK(without > 10);
}

TEST_CASE("interaction neighborhood covers the 3x3 patches around the contact") {
    WorldConfig cfg;
    SceneInit s;
    s.radius = {8.0, 8.0};
    s.x = {30.0, 66.0};
    s.y = {40.0, 40.0};
    s.vx = {3.0, -3.0};
    s.vy = {0.0, 0.0};
    WorldTrace tr = simulate_scene(cfg, s);
    REQUIRE(tr.collision_count() == 1);
    const WorldEvent* hit = nullptr;
    for (const auto& e : tr.events)
        if (e.kind == "collision") hit = &e;
    TokenGridSpec grid;
    LabelSet lab = make_labels(tr, cfg, grid);
    int col = static_cast<int>(hit->x) / 16;
    int row = static_cast<int>(hit->y) / 16;
    std::set<int> expect;
    for (int df = hit->frame - 1; df <= hit->frame + 1; ++df) {
        if (df < 0 || df >= 16) continue;
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                int r2 = row + dr, c2 = col + dc;
                if (r2 < 0 || r2 >= 6 || c2 < 0 || c2 >= 6) continue;
                expect.insert(grid.index(df / 2, r2, c2));
            }
    }
    CHECK(lab.interaction_tokens == std::vector<int>(expect.begin(), expect.end()));
}

TEST_CASE("counterfactual removal preserves draws and non-interacting tracks") {
    WorldConfig cfg;
    int checked = 0;
    for (uint64_t seed = 0; seed < 80 && checked < 25; ++seed) {
        WorldTrace orig = simulate(cfg, seed);
        int n = static_cast<int>(orig.objects.size());
        // Pick an object never involved in any collision.
        int lonely = -1;
        for (int k = 0; k < n && lonely < 0; ++k) {
            bool involved = false;
            for (const auto& e : orig.events)
                if (e.kind == "collision" && (e.i == k || e.j == k)) involved = true;
            if (!involved) lonely = k;
        }
        if (lonely < 0) continue;
        WorldTrace cf = counterfactual_remove(cfg, seed, lonely);
        REQUIRE(cf.objects.size() == orig.objects.size());
        CHECK(cf.objects[lonely].removed);
        for (int i = 0; i < n; ++i) {
            CHECK(cf.objects[i].radius == orig.objects[i].radius);
            CHECK(cf.objects[i].color == orig.objects[i].color);
            if (i == lonely) continue;
            CHECK(cf.objects[i].x == orig.objects[i].x);
            CHECK(cf.objects[i].y == orig.objects[i].y);
            CHECK(cf.objects[i].vx == orig.objects[i].vx);
            CHECK(cf.objects[i].vy == orig.objects[i].vy);
        }
        ++checked;
    }
    CHECK(checked >= 25);
}

TEST_CASE("removed object disappears from render and labels") {
    WorldConfig cfg;
    cfg.n_min = 1;
    cfg.n_max = 1;
    WorldTrace tr = counterfactual_remove(cfg, 7, 0);
    Tensor<float> clip = render(tr, cfg);
    for (float v : clip.data) CHECK(v == 0.10f);  // pure background
    TokenGridSpec grid;
    LabelSet lab = make_labels(tr, cfg, grid);
    for (double v : lab.occupancy) CHECK(v == 0.0);
    CHECK(counterfactual_remove(cfg, 7, 0).events.empty());
    CHECK_THROWS_AS(counterfactual_remove(cfg, 7, 3), ConfigError);
}

TEST_CASE("impossible packing raises a placement error") {
    WorldConfig cfg;
    cfg.n_min = 5;
    cfg.n_max = 5;
    cfg.r_min = 23.0;
    cfg.r_max = 23.0;
    cfg.margin = 50.0;
    CHECK_THROWS_AS(simulate(cfg, 1), PlacementError);
}

TEST_CASE("default dataset hits every event class with at least 5% share") {
    WorldConfig cfg;
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "iajepa_ds_test";
    std::filesystem::remove_all(dir);
    DatasetManifest mf = gen_dataset(cfg, 512, 9000, dir.string(), "unit-test-digest");
    REQUIRE(mf.clips.size() == 512);
    const char* classes[] = {"static", "near-miss", "single-collision", "multi-collision", "exit"};
    for (const char* cls : classes) {
        INFO("class ", cls, " count ", mf.class_counts[cls]);
        CHECK(mf.class_counts[cls] >= 26);  // >= 5% of 512
    }
    int total = 0;
    for (auto& [k, v] : mf.class_counts) total += v;
    CHECK(total == 512);

    DatasetManifest back = read_manifest((dir / "manifest.json").string());
    CHECK(back.clips.size() == mf.clips.size());
    CHECK(back.master_seed == 9000);
    CHECK(back.config_digest == "unit-test-digest");
    CHECK(back.clips[3].seed == 9003);
    CHECK(back.clips[3].event_class == mf.clips[3].event_class);
    std::filesystem::remove_all(dir);
}
