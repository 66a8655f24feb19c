#include "iajepa/train.hpp"

namespace iajepa::train {

TrainData load_train_data(const std::string& dataset_dir) {
    TrainData data;
    data.dir = dataset_dir;
    data.manifest = read_manifest(dataset_dir + "/manifest.json");
    // Per-object occupancies are not stored in clip files; the simulator is
    // deterministic per (config, seed), so re-running it reproduces them
    // exactly.
    data.object_occ.reserve(data.manifest.clips.size());
    const TokenGridSpec grid{};
    for (const auto& entry : data.manifest.clips) {
        const world::WorldTrace trace = world::simulate(data.manifest.config, entry.seed);
        data.object_occ.push_back(world::per_object_occupancy(trace, data.manifest.config, grid));
    }
    return data;
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("IAJC");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const uint32_t mlen = r.u32();
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(r.str(mlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": corrupt checkpoint metadata: " + e.what());
    }
    CheckpointInfo info;
    info.stage = meta.value("stage", std::string("?"));
    info.step = meta.value("step", int64_t(0));
    info.config_digest = meta.value("config_digest", std::string());
    info.dtype = meta.value("dtype", std::string("f32"));
    info.rng_state = std::stoull(meta.value("rng_state", std::string("0")));
    info.opt_t_phi = meta.value("opt_t_phi", int64_t(0));
    info.opt_t_theta = meta.value("opt_t_theta", int64_t(0));
    return info;
}

void write_featurebank(const std::string& path, const FeatureBank& bank) {
    const size_t expect = bank.n() * size_t(bank.clip_stride());
    if (bank.features.size() != expect)
        throw TrainError("write_featurebank: payload holds " + std::to_string(bank.features.size()) +
                         " floats, expected " + std::to_string(expect));
    ByteWriter w;
    w.str("IAJF");
    w.u32(kFeatureBankVersion);
    w.u32(uint32_t(bank.n()));
    w.u32(uint32_t(bank.slices));
    w.u32(uint32_t(bank.cells));
    w.u32(uint32_t(bank.d));
    w.u32(uint32_t(bank.clip_ids.size()));
    for (uint32_t id : bank.clip_ids) w.u32(id);
    w.u32(uint32_t(bank.config_digest.size()));
    w.str(bank.config_digest);
    w.span(bank.features.data(), bank.features.size());
    w.to_file(path);
}

FeatureBank read_featurebank(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("IAJF");
    const uint32_t version = r.u32();
    if (version != kFeatureBankVersion)
        throw FormatError(path + ": unsupported feature bank version " + std::to_string(version));
    FeatureBank bank;
    const uint32_t n = r.u32();
    bank.slices = int(r.u32());
    bank.cells = int(r.u32());
    bank.d = int(r.u32());
    if (bank.slices <= 0 || bank.cells <= 0 || bank.d <= 0)
        throw FormatError(path + ": non-positive feature bank dimensions");
    const uint32_t id_count = r.u32();
    if (id_count != n)
        throw FormatError(path + ": clip id table holds " + std::to_string(id_count) + " entries for " +
                          std::to_string(n) + " clips");
    bank.clip_ids.resize(n);
    for (auto& id : bank.clip_ids) id = r.u32();
    const uint32_t dlen = r.u32();
    bank.config_digest = r.str(dlen);
    bank.features = r.span<float>(size_t(n) * size_t(bank.clip_stride()));
    r.expect_end();
    return bank;
}

}  // namespace iajepa::train
