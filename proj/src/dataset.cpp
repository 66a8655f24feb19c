#include "iajepa/dataset.hpp"

#include <cstdio>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "iajepa/binio.hpp"
#include "iajepa/clipfile.hpp"
#include "iajepa/jsonconv.hpp"

namespace iajepa {

using nlohmann::json;

DatasetManifest gen_dataset(const world::WorldConfig& cfg, int n_clips, uint64_t master_seed,
                            const std::string& out_dir, const std::string& config_digest) {
    cfg.validate();
    if (n_clips <= 0) throw world::ConfigError("dataset size must be positive");
    std::filesystem::create_directories(out_dir);

    DatasetManifest mf;
    mf.config = cfg;
    mf.config_digest = config_digest;
    mf.master_seed = master_seed;

    TokenGridSpec grid;
    grid.frames = cfg.frames;
    grid.image = cfg.arena;

    for (int i = 0; i < n_clips; ++i) {
        uint64_t seed = master_seed + static_cast<uint64_t>(i);
        world::WorldTrace trace = world::simulate(cfg, seed);
        Tensor<float> clip = world::render(trace, cfg);
        world::LabelSet labels = world::make_labels(trace, cfg, grid);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%05d.iajv", i);
        write_clip(out_dir + "/" + name, clip, labels);
        mf.clips.push_back({name, seed, labels.event_class});
        mf.class_counts[labels.event_class] += 1;
    }

    json j{{"format", "iajepa-dataset"},
           {"config", mf.config},
           {"config_digest", mf.config_digest},
           {"master_seed", mf.master_seed},
           {"class_counts", mf.class_counts}};
    json clips = json::array();
    for (const auto& e : mf.clips) clips.push_back({{"file", e.file}, {"seed", e.seed}, {"event_class", e.event_class}});
    j["clips"] = clips;
    write_text_file(out_dir + "/manifest.json", j.dump(2) + "\n");
    return mf;
}

DatasetManifest read_manifest(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw FormatError(path + ": manifest JSON invalid: " + e.what());
    }
    if (j.value("format", "") != "iajepa-dataset") throw FormatError(path + ": not a dataset manifest");
    DatasetManifest mf;
    try {
        mf.config = j.at("config").get<world::WorldConfig>();
        mf.config_digest = j.at("config_digest").get<std::string>();
        mf.master_seed = j.at("master_seed").get<uint64_t>();
        for (const auto& c : j.at("clips")) {
            mf.clips.push_back({c.at("file").get<std::string>(), c.at("seed").get<uint64_t>(),
                                c.at("event_class").get<std::string>()});
        }
        if (j.contains("class_counts"))
            mf.class_counts = j.at("class_counts").get<std::map<std::string, int>>();
    } catch (const json::exception& e) {
        throw FormatError(path + ": manifest field invalid: " + e.what());
    }
    return mf;
}

}  // namespace iajepa
