#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spcl {

/// Flat key=value run configuration. Every key is declared in a single
/// registry with a type and default; unknown keys are rejected by name.
/// Command-line overrides go through set() after load_file().
class RunConfig {
public:
    enum class Type { Int, Float, Bool, String };

    struct KeyInfo {
        Type type;
        std::string default_value;
        std::string help;
    };

    RunConfig();

    static const std::map<std::string, KeyInfo>& registry();

    /// key = value lines; '#' starts a comment; unknown keys throw.
    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    bool is_known(const std::string& key) const;

    int64_t get_int(const std::string& key) const;
    double get_float(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;
    std::vector<int64_t> get_int_list(const std::string& key) const;

    /// Fully materialized effective configuration, sorted by key; this is the
    /// config.echo file content.
    std::string echo() const;

    /// Parse echo() output back into a config.
    static RunConfig from_echo(const std::string& text);

private:
    const std::string& value_of(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

}  // namespace spcl
