#include <cstdlib>
#include <fstream>
#include <sstream>

#include "imm/cli.hpp"
#include "imm/error.hpp"
#include "imm/hash.hpp"

namespace imm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

EnvLookup process_env() {
    return [](std::string_view name) -> std::optional<std::string> {
        if (const char* v = std::getenv(std::string(name).c_str())) return std::string(v);
        return std::nullopt;
    };
}

namespace {

std::string interpolate_string(const std::string& s, const EnvLookup& env) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
        auto open = s.find("${", i);
        if (open == std::string::npos) break;
        auto close = s.find('}', open + 2);
        if (close == std::string::npos) throw Error(Errc::ConfigError, "unterminated ${ in '" + s + "'");
        out.append(s, i, open - i);
        auto name = s.substr(open + 2, close - open - 2);
        auto value = env(name);
        if (!value) throw Error(Errc::ConfigError, "environment variable '" + name + "' is not set");
        out += *value;
        i = close + 1;
    }
    out.append(s, i);
    return out;
}

}  // namespace

json interpolate_env(const json& j, const EnvLookup& env) {
    if (j.is_string()) return interpolate_string(j.get<std::string>(), env);
    if (j.is_object()) {
        json out = json::object();
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = interpolate_env(it.value(), env);
        return out;
    }
    if (j.is_array()) {
        json out = json::array();
        for (const auto& v : j) out.push_back(interpolate_env(v, env));
        return out;
    }
    return j;
}

fs::path RunConfig::path_at(const json::json_pointer& ptr) const {
    if (!resolved.contains(ptr) || !resolved[ptr].is_string())
        throw Error(Errc::ConfigError, "config needs a path at '" + ptr.to_string() + "'");
    fs::path p = resolved[ptr].get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
}

std::uint64_t RunConfig::seed() const { return resolved.value("seed", std::uint64_t{0}); }

RunConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override, const EnvLookup& env) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::ConfigError, "cannot read config '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig cfg;
    cfg.recorded = json::parse(buf.str(), nullptr, false, true);
    if (cfg.recorded.is_discarded() || !cfg.recorded.is_object())
        throw Error(Errc::ConfigError, "config '" + path.string() + "' is not a JSON object");
    if (seed_override) {
        // one knob: the override wins over every per-section seed
        cfg.recorded["seed"] = *seed_override;
        for (const char* section : {"augment", "train", "baseline"})
            if (cfg.recorded.contains(section) && cfg.recorded[section].is_object()) cfg.recorded[section].erase("seed");
    }
    cfg.resolved = interpolate_env(cfg.recorded, env);
    cfg.base_dir = fs::absolute(path).parent_path();
    cfg.hash = content_hash(cfg.recorded.dump());
    return cfg;
}

fs::path next_run_dir(const fs::path& out) {
    fs::create_directories(out);
    int next = 1;
    for (const auto& entry : fs::directory_iterator(out)) {
        auto name = entry.path().filename().string();
        if (name.size() > 4 && name.rfind("run-", 0) == 0 && name.find_first_not_of("0123456789", 4) == std::string::npos)
            next = std::max(next, std::stoi(name.substr(4)) + 1);
    }
    for (;; ++next) {
        char name[32];
        std::snprintf(name, sizeof name, "run-%03d", next);
        if (fs::create_directory(out / name)) return out / name;
    }
}

}  // namespace imm::cli
