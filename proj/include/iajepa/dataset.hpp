// Dataset generation: one clip file per seed plus a manifest.json describing
// the generating config, per-clip seeds, and event-class counts.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "iajepa/worldsim.hpp"

namespace iajepa {

struct DatasetManifest {
    world::WorldConfig config;
    std::string config_digest;
    uint64_t master_seed = 0;
    struct Entry {
        std::string file;  // relative to the manifest directory
        uint64_t seed = 0;
        std::string event_class;
    };
    std::vector<Entry> clips;
    std::map<std::string, int> class_counts;
};

// Clip i uses seed master_seed + i. Writes clip_%05d.iajv files and
// manifest.json under out_dir (created if absent) and returns the manifest.
DatasetManifest gen_dataset(const world::WorldConfig& cfg, int n_clips, uint64_t master_seed,
                            const std::string& out_dir, const std::string& config_digest);

DatasetManifest read_manifest(const std::string& path);

}  // namespace iajepa
