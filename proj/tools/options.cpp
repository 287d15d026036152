#include "options.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "saelab/io.hpp"
#include "saelab/version.hpp"

namespace sae_lab {

namespace fs = std::filesystem;

namespace {

std::string flag_name(const std::string& key) {
    std::string f = key;
    std::replace(f.begin(), f.end(), '_', '-');
    return "--" + f;
}

const char* type_name(ParamType t) {
    switch (t) {
    case ParamType::Int:
        return "INT";
    case ParamType::Float:
        return "FLOAT";
    case ParamType::String:
        return "TEXT";
    case ParamType::Bool:
        return "BOOL";
    case ParamType::IntList:
        return "INT,...";
    }
    return "";
}

nlohmann::json parse_int(const std::string& s) {
    std::size_t pos = 0;
    try {
        if (!s.empty() && s[0] == '-') {
            const long long v = std::stoll(s, &pos);
            if (pos == s.size()) {
                return v;
            }
        } else {
            const unsigned long long v = std::stoull(s, &pos);
            if (pos == s.size()) {
                return v;
            }
        }
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("expected an integer, got '" + s + "'");
}

nlohmann::json parse_flag_value(const Param& p) {
    switch (p.type) {
    case ParamType::Int:
        return parse_int(p.text);
    case ParamType::Float: {
        std::size_t pos = 0;
        try {
            const double v = std::stod(p.text, &pos);
            if (pos == p.text.size()) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw std::invalid_argument("expected a number, got '" + p.text + "'");
    }
    case ParamType::String:
        return p.text;
    case ParamType::Bool:
        return p.flag;
    case ParamType::IntList: {
        nlohmann::json out = nlohmann::json::array();
        std::stringstream ss(p.text);
        for (std::string item; std::getline(ss, item, ',');) {
            out.push_back(parse_int(item));
        }
        return out;
    }
    }
    return nullptr;
}

bool type_matches(ParamType t, const nlohmann::json& v) {
    if (v.is_null()) {
        return true;
    }
    switch (t) {
    case ParamType::Int:
        return v.is_number_integer();
    case ParamType::Float:
        return v.is_number();
    case ParamType::String:
        return v.is_string();
    case ParamType::Bool:
        return v.is_boolean();
    case ParamType::IntList:
        return v.is_number_integer() ||
               (v.is_array() && std::all_of(v.begin(), v.end(), [](const nlohmann::json& e) {
                    return e.is_number_integer();
                }));
    }
    return false;
}

std::size_t line_of_key(const std::string& text, const std::string& key) {
    const auto pos = text.find('"' + key + '"');
    return pos == std::string::npos ? 0 : saelab::io::line_of_offset(text, pos);
}

std::string where(const std::string& path, std::size_t line) {
    return line > 0 ? path + ":" + std::to_string(line) : path;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string local_stamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

}  // namespace

std::uint64_t default_seed() {
    const char* env = std::getenv("SAE_LAB_SEED");
    if (env == nullptr || *env == '\0') {
        return 0;
    }
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(env, &pos);
        if (pos == std::string(env).size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("SAE_LAB_SEED must be a non-negative integer, got '") + env +
                      "'");
}

Command::Command(CLI::App& parent, const std::string& name, const std::string& description)
    : app_{parent.add_subcommand(name, description)}, name_{name} {
    app_->add_option("--config", config_path, "JSON config file (flags override its values)");
    app_->add_option("--out-dir", out_dir, "Output directory (default runs/<command>-<time>)");
    app_->add_option("--threads", threads, "Worker threads (default: all available)")
        ->check(CLI::NonNegativeNumber);
    app_->add_option("--format", format, "Table format")
        ->check(CLI::IsMember({"csv", "json"}));
    app_->add_flag("--dry-run", dry_run, "Print the resolved config and exit");
    app_->add_flag("--svg", svg, "Also write SVG figures");
    add("seed", ParamType::Int, nullptr, "Random seed (default $SAE_LAB_SEED or 0)");
}

void Command::add(const std::string& key, ParamType type, nlohmann::json default_value,
                  const std::string& description) {
    auto p = std::make_unique<Param>();
    p->key = key;
    p->type = type;
    if (type == ParamType::Bool) {
        p->option = app_->add_flag(flag_name(key), p->flag, description);
    } else {
        p->option = app_->add_option(flag_name(key), p->text, description)->type_name(type_name(type));
        if (!default_value.is_null()) {
            p->option->description(description + " [default: " + default_value.dump() + "]");
        }
    }
    defaults_[key] = std::move(default_value);
    params_.push_back(std::move(p));
}

const Param* Command::find(const std::string& key) const {
    for (const auto& p : params_) {
        if (p->key == key) {
            return p.get();
        }
    }
    return nullptr;
}

nlohmann::json Command::resolve() const {
    nlohmann::json r = defaults_;
    r["seed"] = default_seed();

    if (!config_path.empty()) {
        std::string text;
        try {
            text = saelab::io::read_text(config_path);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        nlohmann::json file;
        try {
            file = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            const std::size_t line = saelab::io::line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0);
            throw ConfigError(where(config_path, line) + ": invalid JSON: " + e.what());
        }
        if (!file.is_object()) {
            throw ConfigError(config_path + ":1: config must be a JSON object");
        }
        // A run manifest can be used directly as a config.
        if (file.contains("subcommand") && file.contains("config")) {
            if (file["subcommand"] != name_) {
                throw ConfigError(config_path + ": manifest is for '" +
                                  file["subcommand"].get<std::string>() + "', not '" + name_ + "'");
            }
            file = file["config"];
        }
        for (const auto& [key, value] : file.items()) {
            const Param* p = find(key);
            if (p == nullptr) {
                throw ConfigError(where(config_path, line_of_key(text, key)) + ": unknown key '" +
                                  key + "' for " + name_);
            }
            if (!type_matches(p->type, value)) {
                throw ConfigError(where(config_path, line_of_key(text, key)) + ": '" + key +
                                  "' should be of type " + type_name(p->type) + ", got " +
                                  value.dump());
            }
            r[key] = value;
        }
    }

    for (const auto& p : params_) {
        if (p->option->count() == 0) {
            continue;
        }
        try {
            r[p->key] = parse_flag_value(*p);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(flag_name(p->key) + ": " + e.what(), true);
        }
    }
    for (const auto& key : required_) {
        if (r[key].is_null()) {
            throw ConfigError("missing required option " + flag_name(key), true);
        }
    }
    return r;
}

RunDir::RunDir(const Command& cmd, const nlohmann::json& config)
    : subcommand_{cmd.name()},
      config_(config),
      options_{{"format", cmd.format}, {"svg", cmd.svg}, {"threads", cmd.threads}},
      started_{utc_now()} {
    if (!cmd.out_dir.empty()) {
        dir_ = cmd.out_dir;
    } else {
        const fs::path base = fs::path("runs") / (cmd.name() + "-" + local_stamp());
        dir_ = base;
        for (int k = 2; fs::exists(dir_); ++k) {
            dir_ = base.string() + "-" + std::to_string(k);
        }
    }
}

fs::path RunDir::file(const std::string& name) {
    if (std::find(outputs_.begin(), outputs_.end(), name) == outputs_.end()) {
        outputs_.push_back(name);
    }
    const fs::path p = dir_ / name;
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    return p;
}

void RunDir::write(const std::string& name, const std::string& text) {
    saelab::io::write_text(file(name), text);
}

void RunDir::write_json(const std::string& name, const nlohmann::json& j) {
    write(name, j.dump(2) + "\n");
}

void RunDir::finish() {
    const nlohmann::json manifest{{"subcommand", subcommand_},
                                  {"config", config_},
                                  {"config_hash", saelab::io::config_hash(config_)},
                                  {"seed", config_.value("seed", nlohmann::json(nullptr))},
                                  {"version", saelab::kVersion},
                                  {"options", options_},
                                  {"started", started_},
                                  {"finished", utc_now()},
                                  {"outputs", outputs_}};
    fs::create_directories(dir_);
    saelab::io::write_text(dir_ / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace sae_lab
