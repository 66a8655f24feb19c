#include "iajepa/probe.hpp"

#include <fstream>
#include <sstream>

#include "iajepa/binio.hpp"

namespace iajepa::probe {

namespace {

const std::vector<std::string>& question_templates() {
    static const std::vector<std::string> t{
        "how many objects are moving",
        "which objects exit the arena before frame sixteen",
        "which object collides with the object",
        "if the object is removed does a collision still occur",
        "the object",
    };
    return t;
}

const std::vector<std::string>& number_words() {
    static const std::vector<std::string> n{"zero", "one", "two", "three", "four", "five"};
    return n;
}

}  // namespace

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) out.push_back(id(w));
    if (out.empty()) throw ProbeError("vocab: cannot encode empty text");
    return out;
}

std::string Vocab::decode(const std::vector<int>& toks) const {
    std::string out;
    for (int t : toks) {
        if (t < 0 || size_t(t) >= words.size()) throw ProbeError("vocab: token id out of range");
        if (!out.empty()) out += ' ';
        out += words[size_t(t)];
    }
    return out;
}

Vocab build_vocab() {
    Vocab v;
    auto put = [&v](const std::string& w) {
        if (v.ids.count(w)) return;
        v.ids.emplace(w, int(v.words.size()));
        v.words.push_back(w);
    };
    put("<pad>");
    for (const auto& tmpl : question_templates()) {
        std::istringstream ss(tmpl);
        std::string w;
        while (ss >> w) put(w);
    }
    for (const auto& n : number_words()) put(n);
    for (int c = 0; c < world::kPaletteSize; ++c) put(world::kPaletteNames[c]);
    return v;
}

const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names{"descriptive", "predictive", "explanatory", "counterfactual"};
    return names;
}

std::string task_name(Task t) { return task_names().at(size_t(t)); }

Task task_from_name(const std::string& name) {
    const auto& names = task_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return Task(i);
    throw ProbeError("unknown task name '" + name + "'");
}

void QAItem::check(size_t vocab_size) const {
    auto check_ids = [&](const std::vector<int>& toks, const char* what) {
        if (toks.empty()) throw ProbeError(std::string("qa item: empty ") + what);
        for (int t : toks)
            if (t < 0 || size_t(t) >= vocab_size)
                throw ProbeError(std::string("qa item: token id outside vocabulary in ") + what);
    };
    check_ids(question, "question");
    if (is_mc()) {
        if (choices.size() != kMcChoices) throw ProbeError("qa item: multiple-choice items need exactly 4 choices");
        for (const auto& c : choices) check_ids(c, "choice");
    } else {
        if (answer < 0) throw ProbeError("qa item: descriptive item without an answer class");
        if (!choices.empty()) throw ProbeError("qa item: descriptive items carry no choices");
    }
}

namespace {

bool object_moves(const world::ObjTrack& o) {
    for (size_t f = 1; f < o.x.size(); ++f)
        if (std::abs(o.x[f] - o.x[f - 1]) + std::abs(o.y[f] - o.y[f - 1]) > 1e-9) return true;
    return false;
}

std::string color_phrase(int color) { return std::string("the ") + world::kPaletteNames[color] + " object"; }

bool has_exit_before(const world::WorldTrace& trace, int obj, int frame_limit) {
    for (const auto& e : trace.events)
        if (e.kind == "exit" && e.i == obj && e.frame < frame_limit) return true;
    return false;
}

bool has_exit_at_or_after(const world::WorldTrace& trace, int obj, int frame_lo) {
    for (const auto& e : trace.events)
        if (e.kind == "exit" && e.i == obj && e.frame >= frame_lo) return true;
    return false;
}

bool pair_collides(const world::WorldTrace& trace, int a, int b) {
    for (const auto& e : trace.events)
        if (e.kind == "collision" && ((e.i == a && e.j == b) || (e.i == b && e.j == a))) return true;
    return false;
}

// Counterfactual labels replay simulate(cfg, seed) with one object removed,
// which is only sound when the trace actually came from those draws (a
// hand-constructed scene carries an unrelated seed). Verified by re-running
// the simulator and comparing the initial state exactly.
bool trace_matches_seed(const world::WorldTrace& trace, const world::WorldConfig& cfg) {
    world::WorldTrace redo;
    try {
        redo = world::simulate(cfg, trace.seed);
    } catch (const std::exception&) {
        return false;
    }
    if (redo.objects.size() != trace.objects.size()) return false;
    for (size_t i = 0; i < trace.objects.size(); ++i) {
        const auto& a = trace.objects[i];
        const auto& b = redo.objects[i];
        if (a.removed || b.removed) return false;
        if (a.radius != b.radius || a.color != b.color || a.is_static != b.is_static) return false;
        if (a.x.empty() || b.x.empty()) return false;
        if (a.x[0] != b.x[0] || a.y[0] != b.y[0] || a.vx[0] != b.vx[0] || a.vy[0] != b.vy[0]) return false;
    }
    return true;
}

// Palette colors not worn by any live object, in palette order.
std::vector<int> absent_colors(const world::WorldTrace& trace) {
    std::array<bool, world::kPaletteSize> used{};
    for (const auto& o : trace.objects)
        if (!o.removed) used[size_t(o.color)] = true;
    std::vector<int> out;
    for (int c = 0; c < world::kPaletteSize; ++c)
        if (!used[size_t(c)]) out.push_back(c);
    return out;
}

}  // namespace

std::vector<QAItem> build_qa(const world::WorldTrace& trace, const world::WorldConfig& cfg, uint64_t seed,
                             const Vocab& vocab, uint32_t clip_id) {
    std::vector<QAItem> items;
    std::vector<int> live;
    for (size_t i = 0; i < trace.objects.size(); ++i)
        if (!trace.objects[i].removed) live.push_back(int(i));
    if (live.empty()) return items;
    const int mid = cfg.frames / 2;  // question context: frames before mid; truths: frames at/after

    // descriptive: count of objects that move at any point in the clip
    {
        int moving = 0;
        for (int i : live) moving += object_moves(trace.objects[size_t(i)]) ? 1 : 0;
        QAItem item;
        item.clip_id = clip_id;
        item.task = Task::descriptive;
        item.question = vocab.encode("how many objects are moving");
        item.answer = moving;
        items.push_back(std::move(item));
    }

    // predictive: which objects exit during the unobserved second half.
    // Objects that already exited in the first half are excluded from the
    // choice pool so the label never leaks into the observed context.
    {
        std::vector<int> eligible;
        for (int i : live)
            if (!has_exit_before(trace, i, mid)) eligible.push_back(i);
        if (int(eligible.size()) >= kMcChoices) {
            Rng rng(derive_seed(seed, 1));
            rng.shuffle(eligible);
            QAItem item;
            item.clip_id = clip_id;
            item.task = Task::predictive;
            item.question = vocab.encode("which objects exit the arena before frame sixteen");
            for (int c = 0; c < kMcChoices; ++c) {
                const int obj = eligible[size_t(c)];
                item.choices.push_back(vocab.encode(color_phrase(trace.objects[size_t(obj)].color)));
                item.truths[size_t(c)] = has_exit_at_or_after(trace, obj, mid);
            }
            items.push_back(std::move(item));
        }
    }

    // explanatory: partner identification for the first collision. Choice
    // colors not present in the scene are labeled false by the event list.
    {
        const world::WorldEvent* first = nullptr;
        for (const auto& e : trace.events)
            if (e.kind == "collision" && (!first || e.frame < first->frame)) first = &e;
        if (first) {
            const int subject = std::min(first->i, first->j);
            Rng rng(derive_seed(seed, 2));
            std::vector<int> pool;  // candidate choice objects
            for (int i : live)
                if (i != subject) pool.push_back(i);
            rng.shuffle(pool);
            std::vector<int> fillers = absent_colors(trace);
            rng.shuffle(fillers);
            QAItem item;
            item.clip_id = clip_id;
            item.task = Task::explanatory;
            item.question = vocab.encode("which object collides with " +
                                         color_phrase(trace.objects[size_t(subject)].color));
            for (int c = 0; c < kMcChoices; ++c) {
                if (size_t(c) < pool.size()) {
                    const int obj = pool[size_t(c)];
                    item.choices.push_back(vocab.encode(color_phrase(trace.objects[size_t(obj)].color)));
                    item.truths[size_t(c)] = pair_collides(trace, subject, obj);
                } else {
                    const int color = fillers.at(size_t(c) - pool.size());
                    item.choices.push_back(vocab.encode(color_phrase(color)));
                    item.truths[size_t(c)] = false;
                }
            }
            items.push_back(std::move(item));
        }
    }

    // counterfactual: does a collision still occur with one object removed?
    // In-scene choices are labeled by re-simulating the same seed without
    // that object; removing an absent color is a no-op, so those choices
    // inherit the original outcome. Skipped when the trace does not replay
    // from its seed (re-simulation could not label it).
    if (trace_matches_seed(trace, cfg)) {
        Rng rng(derive_seed(seed, 3));
        std::vector<int> pool = live;
        rng.shuffle(pool);
        std::vector<int> fillers = absent_colors(trace);
        rng.shuffle(fillers);
        if (pool.size() + fillers.size() >= size_t(kMcChoices)) {
            QAItem item;
            item.clip_id = clip_id;
            item.task = Task::counterfactual;
            item.question = vocab.encode("if the object is removed does a collision still occur");
            for (int c = 0; c < kMcChoices; ++c) {
                if (size_t(c) < pool.size()) {
                    const int obj = pool[size_t(c)];
                    item.choices.push_back(vocab.encode(color_phrase(trace.objects[size_t(obj)].color)));
                    item.truths[size_t(c)] = world::counterfactual_remove(cfg, trace.seed, obj).collision_present();
                } else {
                    const int color = fillers.at(size_t(c) - pool.size());
                    item.choices.push_back(vocab.encode(color_phrase(color)));
                    item.truths[size_t(c)] = trace.collision_present();
                }
            }
            items.push_back(std::move(item));
        }
    }

    for (const auto& item : items) item.check(vocab.size());
    return items;
}

std::vector<QAItem> build_qa_for_manifest(const DatasetManifest& manifest, uint64_t seed, const Vocab& vocab) {
    std::vector<QAItem> items;
    for (size_t i = 0; i < manifest.clips.size(); ++i) {
        const world::WorldTrace trace = world::simulate(manifest.config, manifest.clips[i].seed);
        auto clip_items = build_qa(trace, manifest.config, derive_seed(seed, i), vocab, uint32_t(i));
        for (auto& item : clip_items) items.push_back(std::move(item));
    }
    return items;
}

void write_qa_jsonl(const std::string& path, const std::vector<QAItem>& items) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw ProbeError("cannot open " + path + " for writing");
    for (const auto& item : items) {
        nlohmann::json j{{"clip_id", item.clip_id}, {"task", task_name(item.task)}, {"question", item.question}};
        if (item.is_mc()) {
            j["choices"] = item.choices;
            j["labels"] = std::vector<bool>(item.truths.begin(), item.truths.end());
        } else {
            j["answer"] = item.answer;
        }
        out << j.dump() << '\n';
    }
    if (!out.good()) throw ProbeError("failed writing " + path);
}

std::vector<QAItem> read_qa_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw FormatError("cannot open " + path);
    std::vector<QAItem> items;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        try {
            QAItem item;
            item.clip_id = j.at("clip_id").get<uint32_t>();
            item.task = task_from_name(j.at("task").get<std::string>());
            item.question = j.at("question").get<std::vector<int>>();
            if (item.is_mc()) {
                item.choices = j.at("choices").get<std::vector<std::vector<int>>>();
                const auto labels = j.at("labels").get<std::vector<bool>>();
                if (labels.size() != kMcChoices)
                    throw FormatError(path + ":" + std::to_string(lineno) + ": expected 4 labels");
                for (size_t c = 0; c < labels.size(); ++c) item.truths[c] = labels[c];
            } else {
                item.answer = j.at("answer").get<int>();
            }
            items.push_back(std::move(item));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad item: " + e.what());
        }
    }
    return items;
}

McOutcome mc_score(const std::vector<std::array<double, kMcChoices>>& probs,
                   const std::vector<std::array<bool, kMcChoices>>& truths, double threshold) {
    if (probs.size() != truths.size()) throw ProbeError("mc_score: probabilities and truths must pair up");
    McOutcome out;
    out.correct.reserve(probs.size());
    int hits = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
        bool all = true;
        for (int c = 0; c < kMcChoices; ++c)
            all = all && ((probs[i][size_t(c)] > threshold) == truths[i][size_t(c)]);
        out.correct.push_back(all ? 1 : 0);
        hits += all ? 1 : 0;
    }
    out.accuracy = probs.empty() ? 0.0 : double(hits) / double(probs.size());
    return out;
}

Split split_by_clip(std::vector<uint32_t> clip_ids, double holdout, uint64_t seed) {
    std::sort(clip_ids.begin(), clip_ids.end());
    clip_ids.erase(std::unique(clip_ids.begin(), clip_ids.end()), clip_ids.end());
    if (clip_ids.size() < 2) throw ProbeError("split: at least two distinct clip ids required");
    if (!(holdout > 0.0 && holdout < 1.0)) throw ProbeError("split: holdout fraction must lie in (0,1)");
    Rng rng(seed);
    rng.shuffle(clip_ids);
    size_t n_eval = size_t(std::llround(double(clip_ids.size()) * holdout));
    n_eval = std::max<size_t>(1, std::min(n_eval, clip_ids.size() - 1));
    Split split;
    split.eval_ids.assign(clip_ids.begin(), clip_ids.begin() + n_eval);
    split.train_ids.assign(clip_ids.begin() + n_eval, clip_ids.end());
    std::sort(split.eval_ids.begin(), split.eval_ids.end());
    std::sort(split.train_ids.begin(), split.train_ids.end());
    return split;
}

void validate_split(const Split& split) {
    if (split.train_ids.empty() || split.eval_ids.empty()) throw ProbeError("split: a side is empty");
    auto sorted_unique = [](const std::vector<uint32_t>& v) {
        for (size_t i = 1; i < v.size(); ++i)
            if (v[i] <= v[i - 1]) return false;
        return true;
    };
    if (!sorted_unique(split.train_ids) || !sorted_unique(split.eval_ids))
        throw ProbeError("split: sides must be strictly ascending");
    std::vector<uint32_t> shared;
    std::set_intersection(split.train_ids.begin(), split.train_ids.end(), split.eval_ids.begin(),
                          split.eval_ids.end(), std::back_inserter(shared));
    if (!shared.empty())
        throw ProbeError("split leakage: clip id " + std::to_string(shared.front()) + " appears on both sides");
}

const std::vector<std::string>& event_class_names() {
    static const std::vector<std::string> names{"static", "near-miss", "single-collision", "multi-collision",
                                                "exit"};
    return names;
}

int event_class_id(const std::string& name) {
    const auto& names = event_class_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return int(i);
    throw ProbeError("unknown event class '" + name + "'");
}

nlohmann::json metrics_json(const ProbeMetrics& m) {
    return nlohmann::json{{"accuracy", m.accuracy},
                          {"final_loss", m.final_loss},
                          {"train_items", m.train_items},
                          {"eval_items", m.eval_items},
                          {"bank_digest", m.bank_digest}};
}

void write_metrics(const std::string& path, const ProbeMetrics& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out.good()) throw ProbeError("cannot open " + path + " for writing");
    out << metrics_json(m).dump(2) << '\n';
    if (!out.good()) throw ProbeError("failed writing " + path);
}

}  // namespace iajepa::probe
