#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pudet/config.hpp"
#include "pudet/errors.hpp"
#include "pudet/scene.hpp"

namespace pudet {

// A scene dataset together with the provenance that produced it.
struct Dataset {
    WorldConfig world;
    MissingnessSpec missing;
    std::vector<Scene> scenes;

    std::size_t total_objects() const {
        std::size_t n = 0;
        for (const Scene& s : scenes) n += s.objects.size();
        return n;
    }
    std::size_t labeled_objects() const {
        std::size_t n = 0;
        for (const Scene& s : scenes)
            for (const ObjectInstance& o : s.objects) n += o.labeled ? 1 : 0;
        return n;
    }
};

// --- dataset file format ---------------------------------------------------
//
// Line-delimited text. '#' lines form the provenance header (world config and
// missingness spec as key=value). Each scene is one line:
//
//   <id> <width> <height> <n_objects> { <x_min> <y_min> <x_max> <y_max> <labeled 0|1> }*
//
// Reals carry 17 significant digits so files round-trip bit-exactly.

inline void write_dataset(std::ostream& os, const Dataset& ds) {
    KeyValues kv;
    world_to_keyvalues(ds.world, kv);
    kv.set_real("missing.rho", ds.missing.rho);
    kv.set("missing.mode", missingness_mode_name(ds.missing.mode));
    os << "# pudet-dataset v1\n";
    os << "# fields: id width height n_objects {x_min y_min x_max y_max labeled}*\n";
    for (const auto& [key, value] : kv.items()) os << "# " << key << "=" << value << "\n";
    for (const Scene& scene : ds.scenes) {
        os << scene.id << " " << format_real(scene.width) << " " << format_real(scene.height)
           << " " << scene.objects.size();
        for (const ObjectInstance& obj : scene.objects) {
            os << " " << format_real(obj.box.x_min) << " " << format_real(obj.box.y_min) << " "
               << format_real(obj.box.x_max) << " " << format_real(obj.box.y_max) << " "
               << (obj.labeled ? 1 : 0);
        }
        os << "\n";
    }
}

inline void write_dataset_file(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write dataset file: " + path);
    write_dataset(os, ds);
    if (!os) throw ConfigError("failed while writing dataset file: " + path);
}

inline Dataset read_dataset(std::istream& is) {
    Dataset ds;
    std::string header_text;
    std::string line;
    std::vector<std::string> scene_lines;
    bool saw_magic = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line[0] == '#') {
            std::string body = detail::trim(line.substr(1));
            if (body == "pudet-dataset v1") {
                saw_magic = true;
                continue;
            }
            if (body.find('=') != std::string::npos) header_text += body + "\n";
            continue;
        }
        if (detail::trim(line).empty()) continue;
        scene_lines.push_back(line);
    }
    if (!saw_magic) throw ConfigError("not a pudet-dataset v1 file");
    std::stringstream header(header_text);
    const KeyValues kv = KeyValues::parse(header);
    ds.world = world_from_keyvalues(kv);
    ds.missing.rho = kv.get_real("missing.rho", 0.0);
    ds.missing.mode = missingness_mode_from(kv.get_string("missing.mode", "per-annotation"));
    for (const std::string& sl : scene_lines) {
        std::stringstream ss(sl);
        Scene scene;
        std::size_t count = 0;
        if (!(ss >> scene.id >> scene.width >> scene.height >> count))
            throw ConfigError("malformed scene line: " + sl);
        scene.objects.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            ObjectInstance obj;
            int labeled = 0;
            if (!(ss >> obj.box.x_min >> obj.box.y_min >> obj.box.x_max >> obj.box.y_max >>
                  labeled))
                throw ConfigError("truncated scene line: " + sl);
            check_box(obj.box);
            obj.labeled = labeled != 0;
            scene.objects.push_back(obj);
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

inline Dataset read_dataset_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open dataset file: " + path);
    return read_dataset(is);
}

}  // namespace pudet
