#include "iajepa/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "iajepa/clipfile.hpp"
#include "iajepa/masking.hpp"

namespace iajepa::analyze {

namespace {

std::string fmt(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

std::string fmt2(double v) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(2) << v;
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw AnalyzeError("cannot open for writing: " + path);
    out << text;
    if (!out) throw AnalyzeError("write failed: " + path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

// Shared linear map from data range to pixel range with a 5% pad.
struct AxisMap {
    double lo = 0.0, hi = 1.0, px_lo = 0.0, px_hi = 1.0;
    AxisMap(double data_lo, double data_hi, double pixel_lo, double pixel_hi) {
        const double span = data_hi - data_lo;
        const double pad = span > 0 ? 0.05 * span : (data_hi == 0.0 ? 1.0 : std::abs(data_hi) * 0.05 + 1e-12);
        lo = data_lo - pad;
        hi = data_hi + pad;
        px_lo = pixel_lo;
        px_hi = pixel_hi;
    }
    double operator()(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

void svg_axes(std::ostringstream& svg, const AxisMap& xm, const AxisMap& ym, const std::string& x_label,
              const std::string& y_label) {
    svg << "<line x1='" << xm.px_lo << "' y1='" << ym.px_lo << "' x2='" << xm.px_hi << "' y2='" << ym.px_lo
        << "' stroke='black'/>\n";
    svg << "<line x1='" << xm.px_lo << "' y1='" << ym.px_lo << "' x2='" << xm.px_lo << "' y2='" << ym.px_hi
        << "' stroke='black'/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xm.lo + (xm.hi - xm.lo) * t / 4.0;
        const double fy = ym.lo + (ym.hi - ym.lo) * t / 4.0;
        svg << "<text x='" << xm(fx) << "' y='" << ym.px_lo + 18 << "' font-size='10' text-anchor='middle'>"
            << fmt2(fx) << "</text>\n";
        svg << "<text x='" << xm.px_lo - 6 << "' y='" << ym(fy) + 3 << "' font-size='10' text-anchor='end'>"
            << fmt2(fy) << "</text>\n";
    }
    svg << "<text x='" << (xm.px_lo + xm.px_hi) / 2 << "' y='" << ym.px_lo + 36
        << "' font-size='12' text-anchor='middle'>" << x_label << "</text>\n";
    svg << "<text x='14' y='" << (ym.px_lo + ym.px_hi) / 2
        << "' font-size='12' text-anchor='middle' transform='rotate(-90 14 " << (ym.px_lo + ym.px_hi) / 2 << ")'>"
        << y_label << "</text>\n";
}

}  // namespace

double latent_dispersion(std::span<const float> entries) {
    if (entries.empty()) throw AnalyzeError("latent_dispersion: empty feature slab");
    double mean = 0.0;
    for (float v : entries) mean += static_cast<double>(v);
    mean /= static_cast<double>(entries.size());
    double ss = 0.0;
    for (float v : entries) {
        const double d = static_cast<double>(v) - mean;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(entries.size()));
}

double clip_dispersion(const train::FeatureBank& bank, size_t index) {
    if (index >= bank.n()) throw AnalyzeError("clip_dispersion: clip index out of range");
    return latent_dispersion(std::span<const float>(bank.clip(index), static_cast<size_t>(bank.clip_stride())));
}

double clip_motion_energy(const Tensor<float>& clip01, const TokenGridSpec& grid) {
    const Tensor<double> g = mask::motion_energy(clip01.cast<double>(), mask::SaliencyMode::spatial, grid);
    double acc = 0.0;
    for (double v : g.data) acc += v;
    return acc / static_cast<double>(g.numel());
}

OlsFit ols_r2(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw AnalyzeError("ols_r2: x and y lengths differ");
    const size_t n = x.size();
    if (n < 3) throw AnalyzeError("ols_r2: need at least 3 points, got " + std::to_string(n));
    // Accumulate in extended precision and round once at the end; plain
    // double accumulation puts the 3-point reference case one ulp off 0.75.
    long double mx = 0.0L, my = 0.0L;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<long double>(n);
    my /= static_cast<long double>(n);
    long double sxx = 0.0L, syy = 0.0L, sxy = 0.0L;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0L) throw AnalyzeError("ols_r2: degenerate input, x has zero variance");
    if (syy <= 0.0L) throw AnalyzeError("ols_r2: degenerate input, y has zero variance");
    OlsFit fit;
    const long double slope = sxy / sxx;
    fit.slope = static_cast<double>(slope);
    fit.intercept = static_cast<double>(my - slope * mx);
    fit.r2 = static_cast<double>((sxy * sxy) / (sxx * syy));
    return fit;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw AnalyzeError("cosine_similarity: lengths differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> token_magnitude_map(std::span<const float> slab, int slices, int cells, int d) {
    if (slices <= 0 || cells <= 0 || d <= 0 ||
        slab.size() != static_cast<size_t>(slices) * static_cast<size_t>(cells) * static_cast<size_t>(d))
        throw AnalyzeError("token_magnitude_map: slab size does not match slices*cells*d");
    std::vector<double> out(static_cast<size_t>(cells), 0.0);
    for (int s = 0; s < slices; ++s) {
        for (int c = 0; c < cells; ++c) {
            const float* row = slab.data() + (static_cast<size_t>(s) * cells + c) * static_cast<size_t>(d);
            double ss = 0.0;
            for (int k = 0; k < d; ++k) ss += static_cast<double>(row[k]) * static_cast<double>(row[k]);
            out[static_cast<size_t>(c)] = std::max(out[static_cast<size_t>(c)], std::sqrt(ss));
        }
    }
    return out;
}

Tensor<double> sparsify_map(const std::vector<double>& cells36, std::optional<double> global_max) {
    if (cells36.size() != static_cast<size_t>(kCells)) throw AnalyzeError("sparsify_map: expected 36 cells");
    const int side = 6;
    Tensor<double> map({side, side});
    const double own_max = *std::max_element(cells36.begin(), cells36.end());
    const double gmax = global_max.value_or(own_max);
    if (gmax <= 0.0) return map;  // all-zero features stay an all-zero map
    std::vector<double> norm(cells36.size());
    for (size_t i = 0; i < cells36.size(); ++i) norm[i] = cells36[i] / gmax;
    std::vector<double> sorted = norm;
    std::sort(sorted.begin(), sorted.end());
    // nearest-rank 80th percentile of 36 values: the ceil(0.8*36) = 29th
    const double threshold = sorted[static_cast<size_t>(std::ceil(0.8 * kCells)) - 1];
    for (size_t i = 0; i < norm.size(); ++i) map.data[i] = norm[i] >= threshold ? norm[i] : 0.0;
    return map;
}

Tensor<double> saliency_viz(const train::FeatureBank& bank, size_t index, std::optional<double> global_max) {
    if (index >= bank.n()) throw AnalyzeError("saliency_viz: clip index out of range");
    const std::span<const float> slab(bank.clip(index), static_cast<size_t>(bank.clip_stride()));
    return sparsify_map(token_magnitude_map(slab, bank.slices, bank.cells, bank.d), global_max);
}

std::vector<AnalysisRecord> analyze_dataset(const train::FeatureBank& bank, const train::TrainData& data,
                                            const std::vector<std::string>& recall_strategies, double ratio,
                                            uint64_t seed) {
    if (bank.config_digest != data.manifest.config_digest)
        throw AnalyzeError("analyze_dataset: feature bank digest '" + bank.config_digest +
                           "' does not match dataset digest '" + data.manifest.config_digest + "'");
    if (bank.n() != data.size()) throw AnalyzeError("analyze_dataset: bank and dataset clip counts differ");
    const auto& strategies = mask::mask_strategies();
    for (const auto& s : recall_strategies)
        if (std::find(strategies.begin(), strategies.end(), s) == strategies.end())
            throw AnalyzeError("analyze_dataset: unknown masking strategy '" + s + "'");

    std::vector<AnalysisRecord> records(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        const uint32_t id = static_cast<uint32_t>(i);
        const auto it = std::lower_bound(bank.clip_ids.begin(), bank.clip_ids.end(), id);
        if (it == bank.clip_ids.end() || *it != id)
            throw AnalyzeError("analyze_dataset: bank does not cover clip " + std::to_string(id));
        const size_t bi = static_cast<size_t>(it - bank.clip_ids.begin());

        const auto [clip01, labels] = read_clip(data.dir + "/" + data.manifest.clips[i].file);
        AnalysisRecord& rec = records[i];
        rec.clip_id = id;
        rec.motion_energy = clip_motion_energy(clip01);
        rec.dispersion = clip_dispersion(bank, bi);
        for (const auto& strategy : recall_strategies) {
            const mask::MaskSpec spec =
                mask::make_mask(strategy, clip01, data.object_occ[i], ratio, derive_seed(seed, i));
            if (const auto r = mask::mask_recall(spec, labels.interaction_tokens)) rec.recall[strategy] = *r;
        }
    }
    return records;
}

void emit_csv(const std::string& path, const std::vector<AnalysisRecord>& records, const std::string& config_digest) {
    std::set<std::string> strategies;
    for (const auto& r : records)
        for (const auto& [name, value] : r.recall) strategies.insert(name);
    std::ostringstream out;
    out << "# config_digest=" << config_digest << "\n";
    out << "clip_id,motion_energy,dispersion";
    for (const auto& s : strategies) out << ",recall_" << s;
    out << "\n";
    for (const auto& r : records) {
        out << r.clip_id << "," << fmt(r.motion_energy) << "," << fmt(r.dispersion);
        for (const auto& s : strategies) {
            out << ",";
            const auto it = r.recall.find(s);
            if (it != r.recall.end()) out << fmt(it->second);
        }
        out << "\n";
    }
    write_text(path, out.str());
}

std::vector<AnalysisRecord> parse_csv(const std::string& path, std::string* config_digest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AnalyzeError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("# config_digest="))
        throw AnalyzeError("analysis CSV must start with a config digest comment: " + path);
    if (config_digest) *config_digest = line.substr(std::string("# config_digest=").size());
    if (!std::getline(in, line)) throw AnalyzeError("analysis CSV missing header row: " + path);
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "clip_id" || header[1] != "motion_energy" || header[2] != "dispersion")
        throw AnalyzeError("unexpected analysis CSV header: " + line);
    std::vector<std::string> strategies;
    for (size_t c = 3; c < header.size(); ++c) {
        if (!header[c].starts_with("recall_")) throw AnalyzeError("unexpected analysis CSV column: " + header[c]);
        strategies.push_back(header[c].substr(std::string("recall_").size()));
    }
    std::vector<AnalysisRecord> records;
    size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw AnalyzeError("analysis CSV row with wrong field count at " + path + ":" + std::to_string(lineno));
        try {
            AnalysisRecord rec;
            rec.clip_id = static_cast<uint32_t>(std::stoul(fields[0]));
            rec.motion_energy = std::stod(fields[1]);
            rec.dispersion = std::stod(fields[2]);
            for (size_t c = 3; c < fields.size(); ++c)
                if (!fields[c].empty()) rec.recall[strategies[c - 3]] = std::stod(fields[c]);
            records.push_back(std::move(rec));
        } catch (const std::logic_error&) {
            throw AnalyzeError("unparseable analysis CSV value at " + path + ":" + std::to_string(lineno));
        }
    }
    return records;
}

void emit_scatter_svg(const std::string& path, const std::vector<double>& x, const std::vector<double>& y,
                      const OlsFit& fit, const std::string& x_label, const std::string& y_label,
                      const std::string& config_digest) {
    if (x.size() != y.size()) throw AnalyzeError("emit_scatter_svg: x and y lengths differ");
    if (x.empty()) throw AnalyzeError("emit_scatter_svg: no points");
    const double W = 640, H = 480, M = 60;
    const AxisMap xm(*std::min_element(x.begin(), x.end()), *std::max_element(x.begin(), x.end()), M, W - M);
    const AxisMap ym(*std::min_element(y.begin(), y.end()), *std::max_element(y.begin(), y.end()), H - M, M);
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    svg << "<!-- config_digest=" << config_digest << " -->\n";
    svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    svg_axes(svg, xm, ym, x_label, y_label);
    svg << "<line x1='" << xm(xm.lo) << "' y1='" << ym(fit.slope * xm.lo + fit.intercept) << "' x2='" << xm(xm.hi)
        << "' y2='" << ym(fit.slope * xm.hi + fit.intercept) << "' stroke='crimson' stroke-width='1.5'/>\n";
    for (size_t i = 0; i < x.size(); ++i)
        svg << "<circle cx='" << xm(x[i]) << "' cy='" << ym(y[i]) << "' r='3' fill='steelblue' fill-opacity='0.7'/>\n";
    svg << "<text x='" << M + 8 << "' y='" << M - 8 << "' font-size='12'>R^2 = " << fmt(fit.r2)
        << ", slope = " << fmt(fit.slope) << ", intercept = " << fmt(fit.intercept) << "</text>\n";
    svg << "</svg>\n";
    write_text(path, svg.str());
}

void emit_heatmap_svg(const std::string& path, const Tensor<double>& map, const std::string& config_digest) {
    if (map.rank() != 2) throw AnalyzeError("emit_heatmap_svg: expected a rank-2 map");
    const int rows = map.dim(0), cols = map.dim(1);
    const double cell = 48, M = 24;
    const double W = cols * cell + 2 * M, H = rows * cell + 2 * M;
    const double vmax = std::max(1e-300, *std::max_element(map.data.begin(), map.data.end()));
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    svg << "<!-- config_digest=" << config_digest << " -->\n";
    svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double v = std::clamp(map.at(r, c) / vmax, 0.0, 1.0);
            const int red = static_cast<int>(std::lround(255 * v));
            const int blue = static_cast<int>(std::lround(96 + 80 * (1.0 - v)));
            svg << "<rect x='" << M + c * cell << "' y='" << M + r * cell << "' width='" << cell << "' height='"
                << cell << "' fill='rgb(" << red << "," << static_cast<int>(std::lround(32 * v)) << "," << blue
                << ")' stroke='white'/>\n";
        }
    }
    svg << "</svg>\n";
    write_text(path, svg.str());
}

void emit_curve_svg(const std::string& path, const std::vector<double>& values, int first_step,
                    const std::string& config_digest) {
    if (values.empty()) throw AnalyzeError("emit_curve_svg: no values");
    const double W = 640, H = 480, M = 60;
    const AxisMap xm(first_step, first_step + static_cast<double>(values.size()) - 1, M, W - M);
    const AxisMap ym(std::min(0.0, *std::min_element(values.begin(), values.end())),
                     std::max(1.0, *std::max_element(values.begin(), values.end())), H - M, M);
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    svg << "<!-- config_digest=" << config_digest << " -->\n";
    svg << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
    svg_axes(svg, xm, ym, "rollout step", "cosine similarity");
    svg << "<polyline fill='none' stroke='steelblue' stroke-width='1.5' points='";
    for (size_t i = 0; i < values.size(); ++i)
        svg << xm(first_step + static_cast<double>(i)) << "," << ym(values[i]) << " ";
    svg << "'/>\n";
    for (size_t i = 0; i < values.size(); ++i)
        svg << "<circle cx='" << xm(first_step + static_cast<double>(i)) << "' cy='" << ym(values[i])
            << "' r='3' fill='steelblue'/>\n";
    svg << "</svg>\n";
    write_text(path, svg.str());
}

}  // namespace iajepa::analyze
