#include "iajepa/clipfile.hpp"

#include <nlohmann/json.hpp>

#include "iajepa/binio.hpp"
#include "iajepa/jsonconv.hpp"

namespace iajepa {

void write_clip(const std::string& path, const Tensor<float>& clip, const world::LabelSet& labels) {
    if (clip.rank() != 4) throw FormatError("clip payload must be rank-4 [T,C,H,W], got " + shape_str(clip.shape));
    ByteWriter w;
    w.str("IAJV");
    w.u32(kClipFormatVersion);
    for (int d = 0; d < 4; ++d) w.u32(static_cast<uint32_t>(clip.dim(d)));
    w.span(clip.data.data(), clip.data.size());
    std::string lab = nlohmann::json(labels).dump();
    w.u32(static_cast<uint32_t>(lab.size()));
    w.str(lab);
    w.to_file(path);
}

std::pair<Tensor<float>, world::LabelSet> read_clip(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    r.expect_magic("IAJV");
    uint32_t version = r.u32();
    if (version != kClipFormatVersion)
        throw FormatError(path + ": unsupported clip version " + std::to_string(version));
    std::vector<int> dims(4);
    for (int d = 0; d < 4; ++d) {
        dims[d] = static_cast<int>(r.u32());
        if (dims[d] <= 0) throw FormatError(path + ": non-positive clip dimension");
    }
    size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2] * dims[3];
    Tensor<float> clip(dims, r.span<float>(n));
    uint32_t lab_len = r.u32();
    std::string lab = r.str(lab_len);
    r.expect_end();
    world::LabelSet labels;
    try {
        labels = nlohmann::json::parse(lab).get<world::LabelSet>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": label JSON invalid: " + e.what());
    }
    return {std::move(clip), std::move(labels)};
}

}  // namespace iajepa
