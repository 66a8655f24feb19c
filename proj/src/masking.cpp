#include "iajepa/masking.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "iajepa/binio.hpp"
#include "iajepa/rng.hpp"

namespace iajepa::mask {

using nlohmann::json;

namespace {
constexpr double kDegenerateEps = 1e-8;
}

std::vector<int> MaskSpec::visible(int n_tokens) const {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(n_tokens) - masked.size());
    size_t at = 0;
    for (int i = 0; i < n_tokens; ++i) {
        if (at < masked.size() && masked[at] == i) {
            ++at;
            continue;
        }
        out.push_back(i);
    }
    return out;
}

void MaskSpec::check(int n_tokens) const {
    int prev = -1;
    for (int m : masked) {
        if (m <= prev) throw MaskError("mask indices must be sorted and unique");
        if (m < 0 || m >= n_tokens) throw MaskError("mask index out of range");
        prev = m;
    }
}

int mask_count(double ratio, int n) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw MaskError("mask ratio must lie strictly inside (0,1)");
    return static_cast<int>(std::ceil(ratio * n));
}

namespace {

// Seeded uniform k-subset as a sorted vector.
std::vector<int> uniform_subset(int n, int k, uint64_t seed) {
    Rng rng(seed);
    return rng.k_subset(n, k);
}

// Selection by (score desc, index asc) without a full sort: max-heap style
// partial selection; the oracle in the tests uses a full stable sort instead.
std::vector<int> top_k_by_score(const std::vector<double>& s, int k) {
    std::vector<int> idx(s.size());
    for (size_t i = 0; i < s.size(); ++i) idx[i] = static_cast<int>(i);
    auto better = [&](int a, int b) {  // a ranks before b
        if (s[a] != s[b]) return s[a] > s[b];
        return a < b;
    };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), better);
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

MaskSpec ia_mask(const std::vector<double>& s, double ratio, uint64_t seed, const TokenGridSpec& grid) {
    MaskSpec spec;
    spec.seed = seed;
    spec.ratio = ratio;
    double mx = 0.0;
    for (double v : s) mx = std::max(mx, v);

    if (static_cast<int>(s.size()) == grid.tokens()) {
        spec.strategy = "ia";
        int k = mask_count(ratio, grid.tokens());
        spec.masked = (mx < kDegenerateEps) ? uniform_subset(grid.tokens(), k, seed) : top_k_by_score(s, k);
    } else if (static_cast<int>(s.size()) == grid.cells()) {
        spec.strategy = "ia_tube";
        int kc = mask_count(ratio, grid.cells());
        std::vector<int> cells =
            (mx < kDegenerateEps) ? uniform_subset(grid.cells(), kc, seed) : top_k_by_score(s, kc);
        for (int t = 0; t < grid.slices(); ++t)
            for (int c : cells) spec.masked.push_back(t * grid.cells() + c);
        std::sort(spec.masked.begin(), spec.masked.end());
    } else {
        throw MaskError("ia_mask expects 288 token scores or 36 cell scores, got " + std::to_string(s.size()));
    }
    spec.check(grid.tokens());
    return spec;
}

MaskSpec uniform_mask(const TokenGridSpec& grid, double ratio, uint64_t seed) {
    MaskSpec spec;
    spec.strategy = "patch";
    spec.seed = seed;
    spec.ratio = ratio;
    spec.masked = uniform_subset(grid.tokens(), mask_count(ratio, grid.tokens()), seed);
    spec.check(grid.tokens());
    return spec;
}

MaskSpec tube_mask(const TokenGridSpec& grid, double ratio, uint64_t seed) {
    MaskSpec spec;
    spec.strategy = "tube";
    spec.seed = seed;
    spec.ratio = ratio;
    std::vector<int> cells = uniform_subset(grid.cells(), mask_count(ratio, grid.cells()), seed);
    for (int t = 0; t < grid.slices(); ++t)
        for (int c : cells) spec.masked.push_back(t * grid.cells() + c);
    std::sort(spec.masked.begin(), spec.masked.end());
    spec.check(grid.tokens());
    return spec;
}

MaskSpec object_mask(const std::vector<std::vector<double>>& per_object_occupancy, double ratio, uint64_t seed,
                     const TokenGridSpec& grid) {
    const int n_tok = grid.tokens();
    const int budget = mask_count(ratio, n_tok);
    for (const auto& row : per_object_occupancy)
        if (static_cast<int>(row.size()) != n_tok) throw MaskError("object occupancy rows must have 288 entries");

    MaskSpec spec;
    spec.strategy = "object";
    spec.seed = seed;
    spec.ratio = ratio;

    Rng rng(seed);
    std::vector<int> order(per_object_occupancy.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    // value[tok] = best occupancy among the objects that contributed it.
    std::vector<double> value(static_cast<size_t>(n_tok), -1.0);
    int taken = 0;
    for (int obj : order) {
        if (taken >= budget) break;
        const auto& occ = per_object_occupancy[static_cast<size_t>(obj)];
        for (int t = 0; t < n_tok; ++t) {
            if (occ[t] > 0.10) {
                if (value[t] < 0.0) ++taken;
                value[t] = std::max(value[t], occ[t]);
            }
        }
    }

    std::vector<int> chosen;
    chosen.reserve(static_cast<size_t>(taken));
    for (int t = 0; t < n_tok; ++t)
        if (value[t] >= 0.0) chosen.push_back(t);

    if (static_cast<int>(chosen.size()) > budget) {
        // Trim the lowest-occupancy excess (keep high values; ties keep the
        // lower index).
        std::stable_sort(chosen.begin(), chosen.end(), [&](int a, int b) {
            if (value[a] != value[b]) return value[a] > value[b];
            return a < b;
        });
        chosen.resize(static_cast<size_t>(budget));
        std::sort(chosen.begin(), chosen.end());
    } else if (static_cast<int>(chosen.size()) < budget) {
        // Seeded uniform padding from the complement.
        std::set<int> have(chosen.begin(), chosen.end());
        std::vector<int> rest;
        rest.reserve(static_cast<size_t>(n_tok) - have.size());
        for (int t = 0; t < n_tok; ++t)
            if (!have.count(t)) rest.push_back(t);
        rng.shuffle(rest);
        for (int i = 0; static_cast<int>(chosen.size()) < budget; ++i) chosen.push_back(rest[static_cast<size_t>(i)]);
        std::sort(chosen.begin(), chosen.end());
    }
    spec.masked = std::move(chosen);
    spec.check(n_tok);
    return spec;
}

const std::vector<std::string>& mask_strategies() {
    static const std::vector<std::string> names{"patch", "tube", "object", "ia", "ia_tube"};
    return names;
}

MaskSpec make_mask(const std::string& strategy, const Tensor<float>& clip01,
                   const std::vector<std::vector<double>>& per_object_occupancy, double ratio, uint64_t seed,
                   const TokenGridSpec& grid) {
    if (strategy == "patch") return uniform_mask(grid, ratio, seed);
    if (strategy == "tube") return tube_mask(grid, ratio, seed);
    if (strategy == "object") return object_mask(per_object_occupancy, ratio, seed, grid);
    if (strategy == "ia") {
        Tensor<double> g = motion_energy(clip01.cast<double>(), SaliencyMode::spatiotemporal, grid);
        return ia_mask(pool_saliency(g, grid), ratio, seed, grid);
    }
    if (strategy == "ia_tube") {
        Tensor<double> g = motion_energy(clip01.cast<double>(), SaliencyMode::spatial, grid);
        std::vector<double> s = pool_saliency(g, grid);
        s.resize(static_cast<size_t>(grid.cells()));  // broadcast map: every slice repeats these cells
        return ia_mask(s, ratio, seed, grid);
    }
    throw MaskError("unknown masking strategy: " + strategy);
}

std::optional<double> mask_recall(const MaskSpec& spec, const std::vector<int>& interaction_tokens) {
    if (interaction_tokens.empty()) return std::nullopt;
    std::set<int> masked(spec.masked.begin(), spec.masked.end());
    int hit = 0;
    for (int t : interaction_tokens) hit += masked.count(t) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(interaction_tokens.size());
}

double spatial_tv_to_uniform(const MaskSpec& spec, const TokenGridSpec& grid) {
    if (spec.masked.empty()) throw MaskError("spatial_tv_to_uniform needs a nonempty mask");
    std::vector<double> p(static_cast<size_t>(grid.cells()), 0.0);
    for (int t : spec.masked) p[static_cast<size_t>(t % grid.cells())] += 1.0;
    double tv = 0.0;
    const double u = 1.0 / grid.cells();
    for (double& v : p) {
        v /= static_cast<double>(spec.masked.size());
        tv += std::abs(v - u);
    }
    return 0.5 * tv;
}

std::string mask_to_json(const MaskSpec& spec) {
    json j{{"strategy", spec.strategy}, {"seed", spec.seed}, {"masked", spec.masked}};
    return j.dump();
}

MaskSpec mask_from_json(const std::string& text) {
    MaskSpec spec;
    try {
        json j = json::parse(text);
        spec.strategy = j.at("strategy").get<std::string>();
        spec.seed = j.at("seed").get<uint64_t>();
        spec.masked = j.at("masked").get<std::vector<int>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("mask JSON invalid: ") + e.what());
    }
    return spec;
}

namespace {

template <typename T>
void write_pgm_impl(const std::string& path, const Tensor<T>& g) {
    int h, w, slices;
    if (g.rank() == 2) {
        slices = 1;
        h = g.dim(0);
        w = g.dim(1);
    } else if (g.rank() == 3) {
        slices = g.dim(0);
        h = g.dim(1);
        w = g.dim(2);
    } else {
        throw MaskError("saliency dump expects a rank-2 or rank-3 map");
    }
    double mx = 0.0;
    for (T v : g.data) mx = std::max(mx, static_cast<double>(v));
    ByteWriter out;
    out.str("P5\n" + std::to_string(w * slices) + " " + std::to_string(h) + "\n65535\n");
    const size_t plane = static_cast<size_t>(h) * w;
    for (int y = 0; y < h; ++y) {
        for (int s = 0; s < slices; ++s) {  // horizontal film strip
            for (int x = 0; x < w; ++x) {
                double v = static_cast<double>(g.data[s * plane + static_cast<size_t>(y) * w + x]);
                double scaled = mx > 0.0 ? v / mx : 0.0;
                auto px = static_cast<uint16_t>(std::lround(scaled * 65535.0));
                uint8_t be[2] = {static_cast<uint8_t>(px >> 8), static_cast<uint8_t>(px & 0xFF)};
                out.bytes(be, 2);
            }
        }
    }
    out.to_file(path);
}

}  // namespace

void write_saliency_pgm(const std::string& path, const Tensor<double>& g) { write_pgm_impl(path, g); }
void write_saliency_pgm(const std::string& path, const Tensor<float>& g) { write_pgm_impl(path, g); }

}  // namespace iajepa::mask
