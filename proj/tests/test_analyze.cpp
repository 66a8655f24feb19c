// Analyzer tests: dispersion against a long-double two-pass oracle, ordinary
// least squares against hand computations and the closed-form correlation
// identity, cosine/rollout behavior including the constant-predictor case,
// saliency sparsification cardinality and tie handling, dataset record
// assembly with digest refusal, and CSV/SVG emission round-trips.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "iajepa/analyze.hpp"
#include "iajepa/clipfile.hpp"
#include "iajepa/dataset.hpp"
#include "iajepa/masking.hpp"

using namespace iajepa;
namespace fs = std::filesystem;

namespace {

std::string unique_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("iajepa_analyze_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

// Independent dispersion oracle: two-pass in long double.
long double dispersion_oracle(const std::vector<float>& v) {
    long double mean = 0.0L;
    for (float x : v) mean += static_cast<long double>(x);
    mean /= static_cast<long double>(v.size());
    long double ss = 0.0L;
    for (float x : v) {
        const long double d = static_cast<long double>(x) - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<long double>(v.size()));
}

train::FeatureBank synth_bank(int n, int d, uint64_t seed) {
    train::FeatureBank bank;
    bank.d = d;
    bank.config_digest = "synth";
    bank.clip_ids.resize(size_t(n));
    std::iota(bank.clip_ids.begin(), bank.clip_ids.end(), 0u);
    bank.features.resize(size_t(n) * size_t(bank.clip_stride()));
    Rng rng(seed);
    for (auto& f : bank.features) f = float(rng.normal());
    return bank;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

size_t count_substr(const std::string& hay, const std::string& needle) {
    size_t n = 0;
    for (size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

int nonzero_cells(const Tensor<double>& map) {
    int n = 0;
    for (double v : map.data) n += v != 0.0 ? 1 : 0;
    return n;
}

}  // namespace

TEST_CASE("latent dispersion: constants, two-point distribution, random oracle") {
    std::vector<float> constant(500, 3.25f);
    CHECK(analyze::latent_dispersion(constant) == 0.0);

    std::vector<float> pm(400);
    for (size_t i = 0; i < pm.size(); ++i) pm[i] = i % 2 == 0 ? 1.0f : -1.0f;
    CHECK(analyze::latent_dispersion(pm) == doctest::Approx(1.0).epsilon(1e-14));

    Rng rng(17);
    std::vector<float> random(8 * 36 * 16);
    for (auto& v : random) v = float(rng.uniform(-2.0, 5.0));
    const double got = analyze::latent_dispersion(random);
    CHECK(std::abs(got - double(dispersion_oracle(random))) <= 1e-10);

    CHECK_THROWS_AS(analyze::latent_dispersion(std::span<const float>{}), analyze::AnalyzeError);
}

TEST_CASE("clip dispersion reads the right slab from a bank") {
    const train::FeatureBank bank = synth_bank(3, 4, 18);
    for (size_t i = 0; i < bank.n(); ++i) {
        const std::vector<float> slab(bank.clip(i), bank.clip(i) + bank.clip_stride());
        CHECK(analyze::clip_dispersion(bank, i) == analyze::latent_dispersion(slab));
    }
    CHECK_THROWS_AS(analyze::clip_dispersion(bank, 3), analyze::AnalyzeError);
}

TEST_CASE("ordinary least squares: exact line, hand oracle, degenerate rejects") {
    SUBCASE("exact line y = 2x + 1") {
        std::vector<double> x(10), y(10);
        for (int i = 0; i < 10; ++i) {
            x[size_t(i)] = i;
            y[size_t(i)] = 2.0 * i + 1.0;
        }
        const auto fit = analyze::ols_r2(x, y);
        CHECK(fit.slope == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(fit.intercept == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fit.r2 >= 0.999);
        CHECK(fit.r2 <= 1.0 + 1e-12);
    }
    SUBCASE("hand-computed three-point fit") {
        // x=[0,1,2], y=[0,1,1]: mx=1, my=2/3, sxx=2, sxy=1 -> slope 1/2,
        // intercept 1/6; ss_res=1/6, syy=2/3 -> R^2 = 1 - 1/4 = 3/4.
        const auto fit = analyze::ols_r2({0, 1, 2}, {0, 1, 1});
        CHECK(fit.slope == 0.5);  // bit-exact: extended-precision accumulation
        CHECK(fit.intercept == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
        CHECK(fit.r2 == 0.75);  // bit-exact

    }
    SUBCASE("independent noise has near-zero explained variance") {
        Rng rng(19);
        std::vector<double> x(1000), y(1000);
        for (size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.uniform(0.0, 1.0);
            y[i] = rng.uniform(0.0, 1.0);
        }
        const auto fit = analyze::ols_r2(x, y);
        CHECK(fit.r2 >= 0.0);
        CHECK(fit.r2 < 0.05);
    }
    SUBCASE("matches the closed-form squared correlation") {
        Rng rng(20);
        std::vector<double> x(50), y(50);
        for (size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.normal();
            y[i] = 0.7 * x[i] + 0.4 * rng.normal();
        }
        const auto fit = analyze::ols_r2(x, y);
        double mx = 0, my = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            mx += x[i];
            my += y[i];
        }
        mx /= 50;
        my /= 50;
        double sxx = 0, syy = 0, sxy = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            sxx += (x[i] - mx) * (x[i] - mx);
            syy += (y[i] - my) * (y[i] - my);
            sxy += (x[i] - mx) * (y[i] - my);
        }
        const double corr = sxy / std::sqrt(sxx * syy);
        CHECK(std::abs(fit.r2 - corr * corr) <= 1e-10);
    }
    SUBCASE("degenerate inputs are loud errors, never silent zeros") {
        CHECK_THROWS_AS(analyze::ols_r2({0, 1}, {0, 1}), analyze::AnalyzeError);
        CHECK_THROWS_WITH_AS(analyze::ols_r2({2, 2, 2}, {0, 1, 2}), doctest::Contains("degenerate"),
                             analyze::AnalyzeError);
        CHECK_THROWS_WITH_AS(analyze::ols_r2({0, 1, 2}, {5, 5, 5}), doctest::Contains("degenerate"),
                             analyze::AnalyzeError);
        CHECK_THROWS_AS(analyze::ols_r2({0, 1, 2}, {0, 1}), analyze::AnalyzeError);
    }
}

TEST_CASE("cosine similarity: orthogonal, parallel, zero-norm") {
    CHECK(analyze::cosine_similarity({1, 0, 0}, {0, 1, 0}) == 0.0);
    CHECK(analyze::cosine_similarity({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(analyze::cosine_similarity({1, 2, 3}, {-1, -2, -3}) == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(analyze::cosine_similarity({0, 0}, {1, 1}) == 0.0);
    CHECK_THROWS_AS(analyze::cosine_similarity({1}, {1, 2}), analyze::AnalyzeError);
}

TEST_CASE("token magnitude map takes the temporal max of per-token norms") {
    const int slices = 3, cells = kCells, d = 2;
    std::vector<float> slab(size_t(slices) * cells * d, 0.0f);
    auto set = [&](int s, int c, float a, float b) {
        slab[(size_t(s) * cells + c) * d] = a;
        slab[(size_t(s) * cells + c) * d + 1] = b;
    };
    set(0, 5, 3.0f, 4.0f);   // norm 5 at slice 0
    set(2, 5, 1.0f, 1.0f);   // smaller later: max stays 5
    set(1, 20, 0.0f, 2.5f);  // norm 2.5
    const auto map = analyze::token_magnitude_map(slab, slices, cells, d);
    REQUIRE(map.size() == size_t(cells));
    CHECK(map[5] == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(map[20] == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(map[0] == 0.0);
    CHECK_THROWS_AS(analyze::token_magnitude_map(slab, slices, cells, d + 1), analyze::AnalyzeError);
}

TEST_CASE("saliency sparsification: cardinality, one-hot, ties, shared scale") {
    SUBCASE("generic distinct values leave exactly 8 survivors") {
        Rng rng(21);
        std::vector<double> cells(kCells);
        for (auto& v : cells) v = rng.uniform(0.1, 1.0);
        const auto map = analyze::sparsify_map(cells);
        REQUIRE(map.shape == std::vector<int>{6, 6});
        CHECK(nonzero_cells(map) == 8);
        CHECK(*std::max_element(map.data.begin(), map.data.end()) == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("one hot token survives alone at value 1") {
        std::vector<double> cells(kCells, 0.0);
        cells[13] = 4.2;
        const auto map = analyze::sparsify_map(cells);
        CHECK(nonzero_cells(map) == 1);
        CHECK(map.data[13] == 1.0);
    }
    SUBCASE("ties at the threshold all survive") {
        const std::vector<double> cells(kCells, 2.0);
        const auto map = analyze::sparsify_map(cells);
        CHECK(nonzero_cells(map) == kCells);
        for (double v : map.data) CHECK(v == 1.0);
    }
    SUBCASE("all-zero features give an all-zero map, not an error") {
        const std::vector<double> cells(kCells, 0.0);
        const auto map = analyze::sparsify_map(cells);
        CHECK(nonzero_cells(map) == 0);
    }
    SUBCASE("a shared global max preserves cross-model magnitude ordering") {
        Rng rng(22);
        std::vector<double> a(kCells), b(kCells);
        for (size_t i = 0; i < a.size(); ++i) {
            b[i] = rng.uniform(0.5, 1.0);
            a[i] = 2.0 * b[i];  // model A uniformly twice as strong
        }
        const double gmax = std::max(*std::max_element(a.begin(), a.end()),
                                     *std::max_element(b.begin(), b.end()));
        const auto ma = analyze::sparsify_map(a, gmax);
        const auto mb = analyze::sparsify_map(b, gmax);
        for (int i = 0; i < kCells; ++i)
            if (ma.data[i] != 0.0 && mb.data[i] != 0.0) CHECK(ma.data[i] > mb.data[i]);
        CHECK(*std::max_element(mb.data.begin(), mb.data.end()) < 1.0);  // B never reaches the shared scale
    }
    SUBCASE("bank pipeline produces a 6x6 map with the usual cardinality") {
        const train::FeatureBank bank = synth_bank(2, 16, 23);
        const auto map = analyze::saliency_viz(bank, 1);
        REQUIRE(map.shape == std::vector<int>{6, 6});
        CHECK(nonzero_cells(map) == 8);
        CHECK_THROWS_AS(analyze::saliency_viz(bank, 2), analyze::AnalyzeError);
    }
}

TEST_CASE("latent rollout: curve length, bounds, constant predictor") {
    model::ModelConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.enc_layers = 2;
    cfg.pred_layers = 1;
    auto m = model::JepaModel<double>::init(cfg, 24);
    Rng rng(25);
    Tensor<double> tokens({kTokens, kTubeletValues});
    for (auto& v : tokens.data) v = rng.uniform(0.0, 1.0);

    SUBCASE("length is 8 - k0 - 1 and values are valid cosines") {
        const auto curve = analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 2);
        REQUIRE(curve.size() == 5);
        for (double v : curve) {
            CHECK(v >= -1.0 - 1e-12);
            CHECK(v <= 1.0 + 1e-12);
        }
        CHECK(analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 7).empty());
        CHECK(analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 1).size() == 6);
    }
    SUBCASE("k0 bounds are enforced") {
        CHECK_THROWS_AS(analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 0), analyze::AnalyzeError);
        CHECK_THROWS_AS(analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 8), analyze::AnalyzeError);
    }
    SUBCASE("a constant predictor yields similarity 1 at every step") {
        auto constant = m;
        for (auto& t : constant.phi.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
        for (auto& t : constant.theta.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
        Tensor<double>& out_b = constant.theta.at("out.b");
        for (int c = 0; c < cfg.d; ++c) out_b.at(0, c) = 0.25 * (c + 1);
        const auto curve = analyze::rollout_curve(cfg, constant.phi, constant.theta, tokens, 3);
        REQUIRE(curve.size() == 4);
        for (double v : curve) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("rollouts are deterministic") {
        const auto a = analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 4);
        const auto b = analyze::rollout_curve(cfg, m.phi, m.theta, tokens, 4);
        CHECK(a == b);
    }
}

TEST_CASE("dataset analysis: records, digest refusal, CSV and SVG emission") {
    const std::string dir = unique_dir("dataset");
    const world::WorldConfig wcfg;
    gen_dataset(wcfg, 8, 4100, dir, "digest-a");
    const train::TrainData data = train::load_train_data(dir);

    model::ModelConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.enc_layers = 2;
    cfg.pred_layers = 1;
    const auto m = model::JepaModel<float>::init(cfg, 26);
    const train::FeatureBank bank = train::extract_features<float>(cfg, m.phi, data, "digest-a", "digest-a");

    const auto records = analyze::analyze_dataset(bank, data, {"patch", "ia"}, 0.40, 27);
    REQUIRE(records.size() == 8);
    bool any_recall = false;
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].clip_id == uint32_t(i));
        CHECK(records[i].motion_energy >= 0.0);
        CHECK(records[i].dispersion >= 0.0);
        CHECK(records[i].dispersion == analyze::clip_dispersion(bank, i));
        const auto [clip01, labels] = read_clip(dir + "/" + data.manifest.clips[i].file);
        CHECK(records[i].motion_energy == analyze::clip_motion_energy(clip01));
        const bool has_interactions = !labels.interaction_tokens.empty();
        CHECK(records[i].recall.count("patch") == size_t(has_interactions));
        CHECK(records[i].recall.count("ia") == size_t(has_interactions));
        for (const auto& [strategy, r] : records[i].recall) {
            CHECK(r >= 0.0);
            CHECK(r <= 1.0);
            any_recall = true;
        }
    }
    CHECK(any_recall);  // the seeded dataset contains collision clips

    SUBCASE("digest mismatch is refused") {
        train::FeatureBank tampered = bank;
        tampered.config_digest = "digest-b";
        CHECK_THROWS_WITH_AS(analyze::analyze_dataset(tampered, data, {"patch"}, 0.40, 27),
                             doctest::Contains("digest"), analyze::AnalyzeError);
        CHECK_THROWS_AS(analyze::analyze_dataset(bank, data, {"bogus"}, 0.40, 27), analyze::AnalyzeError);
    }
    SUBCASE("CSV round-trips records and digest exactly") {
        const std::string csv = dir + "/records.csv";
        analyze::emit_csv(csv, records, "digest-a");
        std::string digest;
        const auto parsed = analyze::parse_csv(csv, &digest);
        CHECK(digest == "digest-a");
        REQUIRE(parsed.size() == records.size());
        for (size_t i = 0; i < records.size(); ++i) {
            CHECK(parsed[i].clip_id == records[i].clip_id);
            CHECK(std::abs(parsed[i].motion_energy - records[i].motion_energy) <= 1e-9);
            CHECK(std::abs(parsed[i].dispersion - records[i].dispersion) <= 1e-9);
            REQUIRE(parsed[i].recall.size() == records[i].recall.size());
            for (const auto& [strategy, r] : records[i].recall)
                CHECK(std::abs(parsed[i].recall.at(strategy) - r) <= 1e-9);
        }
        std::ofstream(dir + "/bad.csv") << "clip_id,motion_energy,dispersion\n";
        CHECK_THROWS_AS(analyze::parse_csv(dir + "/bad.csv"), analyze::AnalyzeError);
    }
    SUBCASE("SVG plots carry the digest and the expected element counts") {
        std::vector<double> xs, ys;
        for (const auto& r : records) {
            xs.push_back(r.motion_energy);
            ys.push_back(r.dispersion);
        }
        const auto fit = analyze::ols_r2(xs, ys);
        const std::string scatter = dir + "/scatter.svg";
        analyze::emit_scatter_svg(scatter, xs, ys, fit, "motion energy", "dispersion", "digest-a");
        const std::string s = slurp(scatter);
        CHECK(count_substr(s, "<circle") == xs.size());
        CHECK(s.find("config_digest=digest-a") != std::string::npos);
        CHECK(s.find("R^2 = ") != std::string::npos);

        const std::string heat = dir + "/heat.svg";
        analyze::emit_heatmap_svg(heat, analyze::saliency_viz(bank, 0), "digest-a");
        const std::string h = slurp(heat);
        CHECK(count_substr(h, "<rect") == 36 + 1);  // 36 cells plus the background
        CHECK(h.find("config_digest=digest-a") != std::string::npos);

        const std::string curvep = dir + "/curve.svg";
        analyze::emit_curve_svg(curvep, {0.9, 0.8, 0.85, 0.7}, 3, "digest-a");
        const std::string c = slurp(curvep);
        CHECK(count_substr(c, "<polyline") == 1);
        CHECK(count_substr(c, "<circle") == 4);
        CHECK(c.find("config_digest=digest-a") != std::string::npos);
    }
    fs::remove_all(dir);
}
