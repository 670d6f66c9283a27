#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace imm::cli {

using EnvLookup = std::function<std::optional<std::string>(std::string_view)>;

EnvLookup process_env();

// Replaces ${NAME} in every string value. An unset variable is a ConfigError.
nlohmann::json interpolate_env(const nlohmann::json& j, const EnvLookup& env);

struct RunConfig {
    nlohmann::json recorded;      // file contents plus CLI overrides, placeholders kept
    nlohmann::json resolved;      // `recorded` with environment variables substituted
    std::filesystem::path base_dir;  // relative paths in the config resolve against this
    std::string hash;             // FNV-1a of recorded.dump()

    std::filesystem::path path_at(const nlohmann::json::json_pointer& ptr) const;
    std::uint64_t seed() const;
};

RunConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override,
                      const EnvLookup& env = process_env());

// Creates and returns the first free <out>/run-NNN directory.
std::filesystem::path next_run_dir(const std::filesystem::path& out);

// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace imm::cli
