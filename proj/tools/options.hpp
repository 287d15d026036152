#pragma once

// Option plumbing shared by the subcommands: every setting has a JSON key, a
// built-in default, an optional config-file value and an optional flag.

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace sae_lab {

/// Bad flags or config contents; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what, bool show_usage = false)
        : std::runtime_error(what), show_usage_{show_usage} {}
    bool show_usage() const noexcept { return show_usage_; }

private:
    bool show_usage_;
};

enum class ParamType { Int, Float, String, Bool, IntList };

struct Param {
    std::string key;
    ParamType type;
    std::string text;
    bool flag = false;
    CLI::Option* option = nullptr;
};

class Command {
public:
    Command(CLI::App& parent, const std::string& name, const std::string& description);

    /// Adds --key-with-dashes bound to `key` with the given default (null for
    /// "unset").
    void add(const std::string& key, ParamType type, nlohmann::json default_value,
             const std::string& description);
    void require(const std::string& key) { required_.push_back(key); }

    CLI::App* app() const noexcept { return app_; }
    const std::string& name() const noexcept { return name_; }

    /// defaults < config file < flags.
    nlohmann::json resolve() const;

    std::string config_path;
    std::string out_dir;
    std::string format = "csv";
    int threads = 0;
    bool dry_run = false;
    bool svg = false;

private:
    const Param* find(const std::string& key) const;

    CLI::App* app_;
    std::string name_;
    nlohmann::json defaults_ = nlohmann::json::object();
    std::vector<std::unique_ptr<Param>> params_;
    std::vector<std::string> required_;
};

/// Collects output files of one invocation and writes the manifest.
class RunDir {
public:
    RunDir(const Command& cmd, const nlohmann::json& config);

    const std::filesystem::path& path() const noexcept { return dir_; }
    /// Path for a new output file, recorded in the manifest.
    std::filesystem::path file(const std::string& name);
    void write(const std::string& name, const std::string& text);
    void write_json(const std::string& name, const nlohmann::json& j);
    void finish();

private:
    std::string subcommand_;
    nlohmann::json config_;
    nlohmann::json options_;
    std::filesystem::path dir_;
    std::string started_;
    std::vector<std::string> outputs_;
};

/// Seed default: $SAE_LAB_SEED if set, else 0.
std::uint64_t default_seed();

}  // namespace sae_lab
