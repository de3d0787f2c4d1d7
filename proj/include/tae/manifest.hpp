#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "tae/common.hpp"
#include "tae/config.hpp"

namespace tae {

// Everything needed to reproduce a run, written to the output directory
// before any artifact. All artifact paths are relative to that directory.
struct RunManifest {
    std::string command;      // train | eval | report
    std::string mode;
    std::uint64_t seed = 0;
    std::string code_hash;    // content hash of the library headers at build time
    std::uint64_t config_hash = 0;
    std::string config_text;  // canonical snapshot, parseable by load_config

    std::string manifest_file = "manifest.json";
    std::string config_file = "config.cfg";
    std::string checkpoint_file = "checkpoint.tae";
    std::string metrics_file = "metrics.jsonl";
};

inline void write_manifest(const std::string& dir, const RunManifest& m) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["command"] = m.command;
    j["mode"] = m.mode;
    j["seed"] = m.seed;
    j["code_hash"] = m.code_hash;
    j["config_hash"] = hex64(m.config_hash);
    j["layout"]["config"] = m.config_file;
    j["layout"]["checkpoint"] = m.checkpoint_file;
    j["layout"]["metrics"] = m.metrics_file;

    {
        std::ofstream out(std::filesystem::path(dir) / m.manifest_file);
        if (!out) throw FormatError("cannot write manifest in '" + dir + "'");
        out << j.dump(2) << "\n";
    }
    {
        std::ofstream out(std::filesystem::path(dir) / m.config_file);
        if (!out) throw FormatError("cannot write config snapshot in '" + dir + "'");
        out << m.config_text;
    }
}

inline nlohmann::json read_manifest(const std::string& dir) {
    const std::filesystem::path path = std::filesystem::path(dir) / "manifest.json";
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
    return j;
}

}  // namespace tae
