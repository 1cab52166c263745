#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace matchnet {

struct ConfigKey {
    std::string_view name;
    std::string_view default_value;  // empty = unset
    std::string_view help;
};

/// Every key the CLI consumes. Keys outside this table are rejected.
const std::vector<ConfigKey>& config_keys();

/// Resolved key=value configuration: defaults, then the config file, then
/// command-line overrides.
class RunConfig {
public:
    /// Parses `key=value` lines; `#` starts a comment line. Throws ConfigError
    /// naming the line for malformed, duplicate or unknown keys.
    void load_file(const std::filesystem::path& path);
    void load_text(std::string_view text, const std::string& source);
    /// Applies one `key=value` override.
    void set(std::string_view assignment);

    bool has(std::string_view key) const;
    bool is_explicit(std::string_view key) const;
    std::string str(std::string_view key) const;
    double real(std::string_view key) const;
    std::size_t count(std::string_view key) const;
    std::uint64_t u64(std::string_view key) const;
    bool flag(std::string_view key) const;
    std::vector<std::string> list(std::string_view key) const;

    /// Resolved values in table order, one `key=value` per line.
    std::string dump() const;

private:
    void assign(std::string key, std::string value, const std::string& where);

    std::map<std::string, std::string, std::less<>> explicit_;
};

/// Entry point of the `matchnet` executable. Returns the process exit code:
/// 0 success, 2 configuration error, 3 data error, 4 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace matchnet
