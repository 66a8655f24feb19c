// Command-line surface for the whole pipeline: dataset generation, staged
// pre-training, frozen-feature extraction, probes, analysis, masking
// visualization, and a gradient/oracle selfcheck.
//
// Exit codes: 0 success, 1 contract/format error, 2 failed selfcheck.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "iajepa/analyze.hpp"
#include "iajepa/dataset.hpp"
#include "iajepa/jsonconv.hpp"
#include "iajepa/masking.hpp"
#include "iajepa/probe.hpp"
#include "iajepa/runconfig.hpp"
#include "iajepa/sha256.hpp"
#include "iajepa/train.hpp"

namespace fs = std::filesystem;
using namespace iajepa;

namespace {

struct SelfcheckFailure : std::runtime_error {
    explicit SelfcheckFailure(const std::string& m) : std::runtime_error(m) {}
};

void set_workers(int workers) {
#ifdef _OPENMP
    if (workers > 0) omp_set_num_threads(workers);
#else
    (void)workers;
#endif
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg = load_config(path);
    cfg.validate();
    return cfg;
}

void require_digest(const std::string& what, const std::string& got, const std::string& want) {
    if (got != want)
        throw std::runtime_error(what + " was produced under config digest " + got +
                                 " but the given config digests to " + want);
}

mask::Rect parse_rect(const std::string& text) {
    mask::Rect r;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%d,%d,%d,%d%c", &r.x0, &r.y0, &r.x1, &r.y1, &extra) != 4)
        throw std::runtime_error("--zero-region expects x0,y0,x1,y1 (got '" + text + "')");
    return r;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- commands

void cmd_config_init(const std::string& out_dir) {
    const RunConfig cfg;
    if (out_dir.empty()) {
        std::cout << config_to_json(cfg).dump(2) << "\n";
    } else {
        fs::create_directories(out_dir);
        const std::string path = out_dir + "/config.json";
        save_config(path, cfg);
        std::cout << "wrote " << path << " (digest " << config_digest(cfg) << ")\n";
    }
}

void cmd_gen_data(const std::string& config_path, uint64_t seed, const std::string& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    const auto manifest = gen_dataset(cfg.world, cfg.dataset_clips, seed, out_dir, config_digest(cfg));
    std::cout << "wrote " << manifest.clips.size() << " clips under " << out_dir << "\n";
    for (const auto& [cls, count] : manifest.class_counts) std::cout << "  " << cls << ": " << count << "\n";
}

template <typename T>
void run_pretrain(const RunConfig& cfg, const std::string& variant, uint64_t seed, const train::TrainData& data,
                  const std::string& out_dir) {
    auto st = train::TrainState<T>::init(cfg.model, derive_seed(seed, 0xA11));
    const auto plan = stage_plan(cfg, variant, seed);
    const auto results = train::run_staged_pipeline(st, plan, data, out_dir, config_digest(cfg));
    for (const auto& r : results) {
        const double last = r.log.losses.empty() ? 0.0 : r.log.losses.back();
        std::cout << r.tag << ": " << r.log.losses.size() << " steps, final loss " << last << " -> "
                  << r.checkpoint_path << "\n";
    }
}

void cmd_pretrain(const std::string& config_path, const std::string& variant, uint64_t seed,
                  const std::string& data_dir, const std::string& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    const train::TrainData data = train::load_train_data(data_dir);
    require_digest("dataset " + data_dir, data.manifest.config_digest, config_digest(cfg));
    if (cfg.stages[0].precision == "f64")
        run_pretrain<double>(cfg, variant, seed, data, out_dir);
    else
        run_pretrain<float>(cfg, variant, seed, data, out_dir);
}

void cmd_extract(const std::string& config_path, const std::string& data_dir, const std::string& checkpoint,
                 const std::string& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    const std::string digest = config_digest(cfg);
    const train::TrainData data = train::load_train_data(data_dir);
    require_digest("dataset " + data_dir, data.manifest.config_digest, digest);
    const train::CheckpointInfo info = train::read_checkpoint_info(checkpoint);
    train::FeatureBank bank;
    if (info.dtype == "f64") {
        const auto st = train::load_checkpoint<double>(checkpoint, cfg.model);
        bank = train::extract_features<double>(cfg.model, st.m.phi, data, info.config_digest, digest);
    } else {
        const auto st = train::load_checkpoint<float>(checkpoint, cfg.model);
        bank = train::extract_features<float>(cfg.model, st.m.phi, data, info.config_digest, digest);
    }
    fs::create_directories(out_dir);
    const std::string path = out_dir + "/features.iajf";
    train::write_featurebank(path, bank);
    std::cout << "wrote " << path << ": " << bank.n() << " clips x " << bank.slices << "x" << bank.cells << "x"
              << bank.d << " features (digest " << bank.config_digest << ")\n";
}

std::vector<int> collision_labels(const train::TrainData& data) {
    std::vector<int> labels(data.size());
    for (size_t i = 0; i < data.size(); ++i)
        labels[i] = world::simulate(data.manifest.config, data.manifest.clips[i].seed).collision_present() ? 1 : 0;
    return labels;
}

std::vector<int> readout_labels(const train::TrainData& data) {
    std::vector<int> labels(data.size());
    for (size_t i = 0; i < data.size(); ++i) labels[i] = probe::event_class_id(data.manifest.clips[i].event_class);
    return labels;
}

void print_metrics(const probe::ProbeMetrics& m) {
    for (const auto& [name, acc] : m.accuracy) std::cout << "  " << name << " accuracy: " << acc << "\n";
    std::cout << "  final loss " << m.final_loss << " (" << m.train_items << " train / " << m.eval_items
              << " eval items)\n";
}

void cmd_probe(const std::string& config_path, const std::string& task, uint64_t seed, const std::string& data_dir,
               const std::string& bank_path, const std::string& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    const std::string digest = config_digest(cfg);
    const train::TrainData data = train::load_train_data(data_dir);
    require_digest("dataset " + data_dir, data.manifest.config_digest, digest);
    const train::FeatureBank bank = train::read_featurebank(bank_path);
    require_digest("feature bank " + bank_path, bank.config_digest, digest);
    fs::create_directories(out_dir);

    if (task == "reasoner") {
        const probe::Vocab vocab = probe::build_vocab();
        const auto items = probe::build_qa_for_manifest(data.manifest, derive_seed(seed, 0x9A), vocab);
        probe::write_qa_jsonl(out_dir + "/qa.jsonl", items);
        probe::ReasonerConfig rc = cfg.reasoner;
        rc.seed = derive_seed(seed, 0x9B);
        const auto [params, metrics] = probe::train_reasoner<double>(bank, items, vocab, rc);
        probe::write_metrics(out_dir + "/reasoner_metrics.json", metrics);
        std::cout << "reasoner probe on " << items.size() << " items:\n";
        print_metrics(metrics);
    } else if (task == "collision") {
        probe::LinearProbeConfig pc = cfg.linear_probe;
        pc.seed = derive_seed(seed, 0x9C);
        const auto [params, metrics] = probe::train_collision<double>(bank, collision_labels(data), pc);
        probe::write_metrics(out_dir + "/collision_metrics.json", metrics);
        std::cout << "collision probe:\n";
        print_metrics(metrics);
    } else if (task == "readout") {
        probe::LinearProbeConfig pc = cfg.linear_probe;
        pc.seed = derive_seed(seed, 0x9D);
        const auto [params, metrics] = probe::train_readout<double>(bank, readout_labels(data), pc);
        probe::write_metrics(out_dir + "/readout_metrics.json", metrics);
        std::cout << "readout probe:\n";
        print_metrics(metrics);
    } else {
        throw std::runtime_error("unknown probe task '" + task + "' (expected reasoner, collision, or readout)");
    }
}

template <typename T>
std::vector<std::pair<uint32_t, std::vector<double>>> rollout_curves(const RunConfig& cfg,
                                                                     const train::TrainState<T>& st,
                                                                     const train::TrainData& data, size_t max_clips) {
    std::vector<std::pair<uint32_t, std::vector<double>>> curves;
    for (size_t i = 0; i < std::min(max_clips, data.size()); ++i) {
        const auto ct = train::load_clip_tokens<T>(data.dir + "/" + data.manifest.clips[i].file);
        curves.emplace_back(uint32_t(i), analyze::rollout_curve(cfg.model, st.m.phi, st.m.theta, ct.tokens,
                                                                cfg.rollout_context));
    }
    return curves;
}

void cmd_analyze(const std::string& config_path, uint64_t seed, const std::string& data_dir,
                 const std::string& bank_path, const std::string& checkpoint, const std::string& out_dir,
                 bool linearity, bool rollout, bool dispersion) {
    if (!linearity && !rollout && !dispersion)
        throw std::runtime_error("analyze: pass at least one of --linearity, --rollout, --dispersion");
    const RunConfig cfg = load_run_config(config_path);
    const std::string digest = config_digest(cfg);
    const train::TrainData data = train::load_train_data(data_dir);
    require_digest("dataset " + data_dir, data.manifest.config_digest, digest);
    const train::FeatureBank bank = train::read_featurebank(bank_path);
    require_digest("feature bank " + bank_path, bank.config_digest, digest);
    fs::create_directories(out_dir);

    if (dispersion || linearity) {
        const auto records =
            analyze::analyze_dataset(bank, data, cfg.recall_strategies, cfg.analysis_mask_ratio, derive_seed(seed, 0xA7));
        analyze::emit_csv(out_dir + "/records.csv", records, digest);
        std::cout << "wrote " << out_dir << "/records.csv (" << records.size() << " clips)\n";

        if (dispersion) {
            double mean_disp = 0.0, mean_energy = 0.0;
            std::map<std::string, std::pair<double, int>> recall_sums;
            for (const auto& r : records) {
                mean_disp += r.dispersion;
                mean_energy += r.motion_energy;
                for (const auto& [s, v] : r.recall) {
                    recall_sums[s].first += v;
                    recall_sums[s].second += 1;
                }
            }
            mean_disp /= double(records.size());
            mean_energy /= double(records.size());
            nlohmann::json j{{"config_digest", digest},
                             {"clips", records.size()},
                             {"mean_dispersion", mean_disp},
                             {"mean_motion_energy", mean_energy}};
            for (const auto& [s, sum] : recall_sums) j["mean_recall"][s] = sum.first / double(sum.second);
            write_json_file(out_dir + "/dispersion.json", j);
            std::cout << "mean dispersion " << mean_disp << ", mean motion energy " << mean_energy << "\n";

            const auto map = analyze::saliency_viz(bank, 0);
            analyze::emit_heatmap_svg(out_dir + "/saliency_clip0.svg", map, digest);
            mask::write_saliency_pgm(out_dir + "/saliency_clip0.pgm", map);
        }
        if (linearity) {
            std::vector<double> xs, ys;
            for (const auto& r : records) {
                xs.push_back(r.motion_energy);
                ys.push_back(r.dispersion);
            }
            const auto fit = analyze::ols_r2(xs, ys);
            analyze::emit_scatter_svg(out_dir + "/linearity.svg", xs, ys, fit, "clip motion energy",
                                      "latent dispersion", digest);
            write_json_file(out_dir + "/linearity.json", nlohmann::json{{"config_digest", digest},
                                                                        {"slope", fit.slope},
                                                                        {"intercept", fit.intercept},
                                                                        {"r2", fit.r2}});
            std::cout << "linearity: slope " << fit.slope << ", intercept " << fit.intercept << ", R^2 " << fit.r2
                      << "\n";
        }
    }

    if (rollout) {
        if (checkpoint.empty()) throw std::runtime_error("analyze --rollout requires --checkpoint");
        const train::CheckpointInfo info = train::read_checkpoint_info(checkpoint);
        require_digest("checkpoint " + checkpoint, info.config_digest, digest);
        std::vector<std::pair<uint32_t, std::vector<double>>> curves;
        if (info.dtype == "f64") {
            const auto st = train::load_checkpoint<double>(checkpoint, cfg.model);
            curves = rollout_curves<double>(cfg, st, data, 8);
        } else {
            const auto st = train::load_checkpoint<float>(checkpoint, cfg.model);
            curves = rollout_curves<float>(cfg, st, data, 8);
        }
        std::ofstream csv(out_dir + "/rollout.csv", std::ios::binary);
        if (!csv) throw std::runtime_error("cannot write " + out_dir + "/rollout.csv");
        csv << "# config_digest=" << digest << "\n";
        csv << "clip_id,step,similarity\n";
        std::vector<double> mean;
        for (const auto& [id, curve] : curves) {
            if (mean.empty()) mean.assign(curve.size(), 0.0);
            for (size_t k = 0; k < curve.size(); ++k) {
                csv << id << "," << (cfg.rollout_context + 1 + int(k)) << "," << std::setprecision(17) << curve[k]
                    << "\n";
                mean[k] += curve[k];
            }
        }
        if (!mean.empty()) {
            for (double& v : mean) v /= double(curves.size());
            analyze::emit_curve_svg(out_dir + "/rollout.svg", mean, cfg.rollout_context + 1, digest);
        }
        std::cout << "wrote " << out_dir << "/rollout.csv (" << curves.size() << " clips, context "
                  << cfg.rollout_context << " slices)\n";
    }
}

void cmd_viz_mask(const std::string& config_path, uint64_t seed, const std::string& strategy,
                  const std::string& zero_region, const std::string& out_dir) {
    const RunConfig cfg = load_run_config(config_path);
    const std::string digest = config_digest(cfg);
    const auto& known = mask::mask_strategies();
    if (std::find(known.begin(), known.end(), strategy) == known.end())
        throw std::runtime_error("unknown masking strategy '" + strategy + "'");
    fs::create_directories(out_dir);

    const world::WorldTrace trace = world::simulate(cfg.world, seed);
    const Tensor<float> clip01 = world::render(trace, cfg.world);
    const TokenGridSpec grid;
    const auto occupancy = world::per_object_occupancy(trace, cfg.world, grid);
    const world::LabelSet labels = world::make_labels(trace, cfg.world, grid);

    Tensor<double> g3 = mask::motion_energy(clip01.cast<double>(), mask::SaliencyMode::spatiotemporal, grid);
    mask::MaskSpec spec;
    if (zero_region.empty()) {
        spec = mask::make_mask(strategy, clip01, occupancy, cfg.analysis_mask_ratio, seed, grid);
    } else {
        // Region-zeroing hook: the motion-energy map is zeroed before the
        // saliency modes rank tokens, showing how the mask follows motion.
        const mask::Rect rect = parse_rect(zero_region);
        g3 = mask::zero_motion_region(g3, rect);
        if (strategy == "ia") {
            spec = mask::ia_mask(mask::pool_saliency(g3, grid), cfg.analysis_mask_ratio, seed, grid);
        } else if (strategy == "ia_tube") {
            Tensor<double> g2 = mask::motion_energy(clip01.cast<double>(), mask::SaliencyMode::spatial, grid);
            g2 = mask::zero_motion_region(g2, rect);
            std::vector<double> s = mask::pool_saliency(g2, grid);
            s.resize(size_t(grid.cells()));
            spec = mask::ia_mask(s, cfg.analysis_mask_ratio, seed, grid);
        } else {
            spec = mask::make_mask(strategy, clip01, occupancy, cfg.analysis_mask_ratio, seed, grid);
        }
    }

    mask::write_saliency_pgm(out_dir + "/saliency.pgm", g3);
    std::ofstream mj(out_dir + "/mask.json", std::ios::binary);
    if (!mj) throw std::runtime_error("cannot write " + out_dir + "/mask.json");
    mj << mask::mask_to_json(spec) << "\n";
    std::cout << "strategy " << spec.strategy << ": " << spec.masked.size() << " of " << grid.tokens()
              << " tokens masked (seed " << seed << ")\n";
    std::cout << "spatial TV distance to uniform: " << mask::spatial_tv_to_uniform(spec, grid) << "\n";
    if (const auto r = mask::mask_recall(spec, labels.interaction_tokens))
        std::cout << "interaction-token recall: " << *r << "\n";
    else
        std::cout << "interaction-token recall: n/a (no interaction tokens in this clip)\n";
    std::cout << "wrote " << out_dir << "/saliency.pgm and " << out_dir << "/mask.json (config digest " << digest
              << ")\n";
}

// ------------------------------------------------------------- selfcheck

void redraw_order_one(model::ParamSet<double>& p, Rng& rng) {
    for (size_t i = 0; i < p.size(); ++i) {
        const std::string leaf = p.names[i].substr(p.names[i].rfind('.') + 1);
        for (auto& v : p.tensors[i].data) {
            if (leaf == "g")
                v = 1.0 + rng.uniform(-0.3, 0.3);
            else if (leaf[0] == 'b')
                v = rng.uniform(-0.3, 0.3);
            else
                v = rng.uniform(-0.5, 0.5);
        }
    }
}

double selfcheck_jepa_fd() {
    model::ModelConfig c;
    c.d = 8;
    c.heads = 2;
    c.enc_layers = 2;
    c.pred_layers = 1;
    c.tokens = 12;
    c.values = 6;
    auto m = model::JepaModel<double>::init(c, 41);
    Rng redraw(77);
    redraw_order_one(m.phi, redraw);
    redraw_order_one(m.theta, redraw);
    Rng tokens_rng(110);
    Tensor<double> tokens({c.tokens, c.values});
    for (auto& v : tokens.data) v = tokens_rng.uniform(-1.0, 1.0);
    const std::vector<int> vis{0, 2, 3, 5, 7, 8, 9, 11};
    const std::vector<int> masked{1, 4, 6, 10};
    const Tensor<double> target_rows = model::target_rows_for(c, m.xi, tokens, masked);

    const size_t n_phi = m.phi.size();
    std::vector<Tensor<double>> init;
    for (const auto& t : m.phi.tensors) init.push_back(t);
    for (const auto& t : m.theta.tensors) init.push_back(t);
    auto f = [&](const std::vector<Tensor<double>>& params, std::vector<Tensor<double>>* grads) {
        model::ParamSet<double> phi = m.phi, theta = m.theta;
        for (size_t i = 0; i < n_phi; ++i) phi.tensors[i] = params[i];
        for (size_t i = 0; i < theta.size(); ++i) theta.tensors[i] = params[n_phi + i];
        Graph<double> g;
        const auto st = model::build_jepa_step(g, c, phi, theta, tokens, vis, masked, target_rows);
        const double value = g.val(st.loss).data[0];
        if (grads) {
            g.backward(st.loss);
            grads->clear();
            for (const auto& name : phi.names) grads->push_back(g.grad(st.phi.at(name)));
            for (const auto& name : theta.names) grads->push_back(g.grad(st.theta.at(name)));
        }
        return value;
    };
    return finite_diff_check(f, init, 1e-5).max_rel_err;
}

// The reasoner head has ~2.3M parameters (fixed 256-wide recurrence and
// 512-channel tower), so the composite check perturbs a seeded uniform
// sample of coordinates instead of sweeping all of them.
double selfcheck_probe_fd(int samples) {
    const int vocab_size = 9, d = 4;
    auto params = probe::make_reasoner_params<double>(vocab_size, d);
    Rng redraw(78);
    redraw_order_one(params, redraw);
    Rng feat_rng(79);
    Tensor<double> feats({kTokens, d});
    for (auto& v : feats.data) v = feat_rng.uniform(-1.0, 1.0);

    probe::QAItem desc;
    desc.clip_id = 0;
    desc.task = probe::Task::descriptive;
    desc.question = {1, 2, 3};
    desc.answer = 2;
    probe::QAItem mc;
    mc.clip_id = 0;
    mc.task = probe::Task::counterfactual;
    mc.question = {4, 5};
    mc.choices = {{6}, {7}, {8}, {3}};
    mc.truths = {true, false, true, false};

    auto f = [&](const std::vector<Tensor<double>>& values, std::vector<Tensor<double>>* grads) {
        model::ParamSet<double> p = params;
        p.tensors = values;
        Graph<double> g(7, true);  // fixed dropout draws: deterministic loss
        const auto ids = model::bind_params(g, p);
        const int fnode = g.constant(feats);
        const auto nd = probe::reasoner_item_nodes<double>(g, ids, desc, fnode, vocab_size, 0.3);
        const auto nm = probe::reasoner_item_nodes<double>(g, ids, mc, fnode, vocab_size, 0.3);
        const int loss =
            probe::probe_loss_node<double>(g, {nd.desc_probs}, {desc.answer}, {nm.causal_probs}, {mc.truths});
        const double value = g.val(loss).data[0];
        if (grads) {
            g.backward(loss);
            grads->clear();
            for (const auto& name : p.names) grads->push_back(g.grad(ids.at(name)));
        }
        return value;
    };

    std::vector<Tensor<double>> grads;
    const double base = f(params.tensors, &grads);
    if (!std::isfinite(base)) return std::numeric_limits<double>::infinity();
    int64_t total = 0;
    for (const auto& t : params.tensors) total += t.numel();
    Rng pick(80);
    const double step = 1e-5;
    double max_err = 0.0;
    std::vector<Tensor<double>> work = params.tensors;
    for (int s = 0; s < samples; ++s) {
        int64_t flat = int64_t(pick.below(uint64_t(total)));
        size_t pi = 0;
        while (flat >= work[pi].numel()) {
            flat -= work[pi].numel();
            ++pi;
        }
        const double keep = work[pi].data[flat];
        work[pi].data[flat] = keep + step;
        const double up = f(work, nullptr);
        work[pi].data[flat] = keep - step;
        const double dn = f(work, nullptr);
        work[pi].data[flat] = keep;
        const double numeric = (up - dn) / (2.0 * step);
        const double analytic = grads[pi].data[flat];
        const double err = (!std::isfinite(up) || !std::isfinite(dn))
                               ? std::numeric_limits<double>::infinity()
                               : std::abs(analytic - numeric) / (std::abs(analytic) + 1e-8);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

void cmd_selfcheck(int samples) {
    constexpr double kTol = 1e-4;
    const double jepa_err = selfcheck_jepa_fd();
    std::cout << "gradient check (prediction loss, full sweep): max relative error " << jepa_err << " (tolerance "
              << kTol << ")\n";
    const double probe_err = selfcheck_probe_fd(samples);
    std::cout << "gradient check (probe loss, " << samples << " sampled coordinates): max relative error "
              << probe_err << " (tolerance " << kTol << ")\n";
    if (!(jepa_err <= kTol) || !(probe_err <= kTol)) throw SelfcheckFailure("gradient check exceeded tolerance");

    // Scalar oracles.
    {
        const auto fit = analyze::ols_r2({0, 1, 2}, {0, 1, 1});
        if (fit.slope != 0.5 || fit.r2 != 0.75) throw SelfcheckFailure("least-squares oracle mismatch");
    }
    {
        std::vector<double> ramp(size_t(kTokens), 0.0);
        std::iota(ramp.begin(), ramp.end(), 0.0);
        if (int(mask::ia_mask(ramp, 0.40, 1).masked.size()) != 116)
            throw SelfcheckFailure("saliency mask cardinality oracle mismatch");
        std::vector<double> cells(size_t(kCells), 0.0);
        std::iota(cells.begin(), cells.end(), 0.0);
        if (int(mask::ia_mask(cells, 0.40, 1).masked.size()) != 120)
            throw SelfcheckFailure("per-cell saliency mask cardinality oracle mismatch");
    }
    {
        std::vector<float> pm(64);
        for (size_t i = 0; i < pm.size(); ++i) pm[i] = i % 2 ? 1.0f : -1.0f;
        if (std::abs(analyze::latent_dispersion(pm) - 1.0) > 1e-12)
            throw SelfcheckFailure("dispersion oracle mismatch");
    }
    std::cout << "oracle checks passed (least squares, mask cardinalities, dispersion)\n";
    std::cout << "selfcheck passed\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interaction-aware video representation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", data_dir, bank_path, checkpoint, variant = "ia", task = "reasoner";
    std::string strategy = "ia", zero_region;
    uint64_t seed = 0;
    int workers = 0, samples = 400;
    bool flag_linearity = false, flag_rollout = false, flag_dispersion = false;

    const auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "run configuration JSON");
        if (needs_config) opt->required()->check(CLI::ExistingFile);
        cmd->add_option("--seed", seed, "run seed (default 0)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--workers", workers, "cap OpenMP worker threads (0 = library default)");
    };

    auto* conf = app.add_subcommand("config", "configuration helpers");
    conf->require_subcommand(1);
    auto* conf_init = conf->add_subcommand("init", "print the default configuration (or write it under --out)");
    std::string conf_out;
    conf_init->add_option("--out", conf_out, "directory to write config.json into (stdout when omitted)");
    conf_init->callback([&] { cmd_config_init(conf_out); });

    auto* gen = app.add_subcommand("gen-data", "generate a clip dataset with labels and a manifest");
    add_common(gen, true);
    gen->callback([&] {
        set_workers(workers);
        cmd_gen_data(config_path, seed, out_dir);
    });

    auto* pre = app.add_subcommand("pretrain", "run the staged pre-training pipeline");
    add_common(pre, true);
    pre->add_option("--data", data_dir, "dataset directory from gen-data")->required()->check(CLI::ExistingDirectory);
    pre->add_option("--variant", variant, "masking curriculum: baseline | object-ablation | ia")
        ->check(CLI::IsMember(pretrain_variants()));
    pre->callback([&] {
        set_workers(workers);
        cmd_pretrain(config_path, variant, seed, data_dir, out_dir);
    });

    auto* ext = app.add_subcommand("extract", "extract frozen features from a checkpoint into a feature bank");
    add_common(ext, true);
    ext->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ext->add_option("--checkpoint", checkpoint, "pre-training checkpoint")->required()->check(CLI::ExistingFile);
    ext->callback([&] {
        set_workers(workers);
        cmd_extract(config_path, data_dir, checkpoint, out_dir);
    });

    auto* prb = app.add_subcommand("probe", "train a frozen-feature probe and report metrics");
    add_common(prb, true);
    prb->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    prb->add_option("--bank", bank_path, "feature bank from extract")->required()->check(CLI::ExistingFile);
    prb->add_option("--task", task, "reasoner | collision | readout")
        ->check(CLI::IsMember({"reasoner", "collision", "readout"}));
    prb->callback([&] {
        set_workers(workers);
        cmd_probe(config_path, task, seed, data_dir, bank_path, out_dir);
    });

    auto* ana = app.add_subcommand("analyze", "measurement suite over a feature bank");
    add_common(ana, true);
    ana->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ana->add_option("--bank", bank_path, "feature bank from extract")->required()->check(CLI::ExistingFile);
    ana->add_option("--checkpoint", checkpoint, "checkpoint (needed by --rollout)")->check(CLI::ExistingFile);
    ana->add_flag("--linearity", flag_linearity, "least-squares fit of dispersion against motion energy");
    ana->add_flag("--rollout", flag_rollout, "autoregressive latent rollout curves");
    ana->add_flag("--dispersion", flag_dispersion, "per-clip dispersion records and saliency map");
    ana->callback([&] {
        set_workers(workers);
        cmd_analyze(config_path, seed, data_dir, bank_path, checkpoint, out_dir, flag_linearity, flag_rollout,
                    flag_dispersion);
    });

    auto* viz = app.add_subcommand("viz-mask", "render a masking decision and its saliency map for one seed");
    add_common(viz, true);
    viz->add_option("--strategy", strategy, "masking strategy to visualize");
    viz->add_option("--zero-region", zero_region, "x0,y0,x1,y1 pixel rectangle zeroed in the motion-energy map");
    viz->callback([&] {
        set_workers(workers);
        cmd_viz_mask(config_path, seed, strategy, zero_region, out_dir);
    });

    auto* self = app.add_subcommand("selfcheck", "run the gradient and oracle suites");
    self->add_option("--samples", samples, "sampled coordinates for the probe-loss gradient check");
    self->add_option("--workers", workers, "cap OpenMP worker threads (0 = library default)");
    self->callback([&] {
        set_workers(workers);
        cmd_selfcheck(samples);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const SelfcheckFailure& e) {
        std::cerr << "selfcheck FAILED: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
