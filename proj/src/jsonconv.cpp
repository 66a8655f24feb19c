#include "iajepa/jsonconv.hpp"

namespace iajepa::world {

using nlohmann::json;

void to_json(json& j, const WorldConfig& c) {
    j = json{{"arena", c.arena},
             {"frames", c.frames},
             {"substeps", c.substeps},
             {"n_min", c.n_min},
             {"n_max", c.n_max},
             {"r_min", c.r_min},
             {"r_max", c.r_max},
             {"speed_max", c.speed_max},
             {"margin", c.margin},
             {"p_clip_static", c.p_clip_static},
             {"p_obj_static", c.p_obj_static},
             {"background", c.background},
             {"pan_dx", c.pan_dx},
             {"pan_dy", c.pan_dy}};
}

void from_json(const json& j, WorldConfig& c) {
    WorldConfig d;
    c.arena = j.value("arena", d.arena);
    c.frames = j.value("frames", d.frames);
    c.substeps = j.value("substeps", d.substeps);
    c.n_min = j.value("n_min", d.n_min);
    c.n_max = j.value("n_max", d.n_max);
    c.r_min = j.value("r_min", d.r_min);
    c.r_max = j.value("r_max", d.r_max);
    c.speed_max = j.value("speed_max", d.speed_max);
    c.margin = j.value("margin", d.margin);
    c.p_clip_static = j.value("p_clip_static", d.p_clip_static);
    c.p_obj_static = j.value("p_obj_static", d.p_obj_static);
    c.background = j.value("background", d.background);
    c.pan_dx = j.value("pan_dx", d.pan_dx);
    c.pan_dy = j.value("pan_dy", d.pan_dy);
}

void to_json(json& j, const WorldEvent& e) {
    j = json{{"kind", e.kind}, {"frame", e.frame}, {"i", e.i}, {"j", e.j}, {"x", e.x}, {"y", e.y}};
}

void from_json(const json& j, WorldEvent& e) {
    j.at("kind").get_to(e.kind);
    j.at("frame").get_to(e.frame);
    j.at("i").get_to(e.i);
    e.j = j.value("j", -1);
    e.x = j.value("x", 0.0);
    e.y = j.value("y", 0.0);
}

void to_json(json& j, const LabelSet& l) {
    j = json{{"collision_present", l.collision_present},
             {"event_class", l.event_class},
             {"events", l.events},
             {"occupancy", l.occupancy},
             {"interaction_tokens", l.interaction_tokens},
             {"seed", l.seed}};
}

void from_json(const json& j, LabelSet& l) {
    j.at("collision_present").get_to(l.collision_present);
    j.at("event_class").get_to(l.event_class);
    j.at("events").get_to(l.events);
    j.at("occupancy").get_to(l.occupancy);
    j.at("interaction_tokens").get_to(l.interaction_tokens);
    j.at("seed").get_to(l.seed);
}

}  // namespace iajepa::world
