#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cnmws/dynamics.hpp"
#include "cnmws/noise.hpp"

namespace cnmws {

enum class ExperimentKind { HarmonicSensitivity, IpsMobility, NoiseValidation, OracleCompare };

[[nodiscard]] std::string_view to_string(ExperimentKind kind);
[[nodiscard]] ExperimentKind parse_kind(std::string_view name);

enum class KeyType { Real, Integer, Boolean, Text, RealList };

// One documented configuration key. kinds is a bit mask over
// ExperimentKind (bit i = kind i); keys outside the running kind are
// accepted but ignored and do not enter the hash.
struct KeySpec {
    std::string_view section;
    std::string_view key;
    KeyType type;
    std::string_view fallback;  // empty: no default
    unsigned kinds;
    std::string_view help;
};

[[nodiscard]] const std::vector<KeySpec>& config_keys();

// "section.key" -> raw text, exactly as written in the file.
using RawConfig = std::map<std::string, std::string>;

// Reads an INI file. Throws IoError when unreadable and ConfigError on a
// syntax error.
[[nodiscard]] RawConfig read_config_file(const std::filesystem::path& path);
[[nodiscard]] RawConfig parse_config_text(const std::string& text);

struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;

    [[nodiscard]] bool ok() const { return errors.empty(); }
    // "error: ..." and "warning: ..." lines, errors first.
    [[nodiscard]] std::vector<std::string> lines() const;
};

[[nodiscard]] ValidationReport validate(const RawConfig& raw);

// Validated configuration with every applicable key present (defaults
// filled in) and values normalised by type.
class Config {
public:
    // Throws ConfigError listing every error of validate(raw).
    explicit Config(const RawConfig& raw);

    [[nodiscard]] ExperimentKind kind() const { return kind_; }
    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) > 0; }
    [[nodiscard]] double real(const std::string& key) const;
    [[nodiscard]] std::int64_t integer(const std::string& key) const;
    [[nodiscard]] bool flag(const std::string& key) const;
    [[nodiscard]] const std::string& text(const std::string& key) const;
    [[nodiscard]] std::vector<double> reals(const std::string& key) const;

    [[nodiscard]] std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("experiment.seed")); }
    [[nodiscard]] std::filesystem::path output() const { return text("experiment.output"); }
    [[nodiscard]] const std::vector<std::string>& warnings() const { return warnings_; }

    // SHA-256 over the sorted "section.key=value" lines of the applicable
    // keys with normalised values, excluding the output directory.
    [[nodiscard]] std::string hash() const;
    // The normalised key/value pairs that enter the hash.
    [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

private:
    ExperimentKind kind_;
    std::map<std::string, std::string> values_;
    std::vector<std::string> warnings_;
};

// Typed views shared by the runners.
[[nodiscard]] SpectrumModel spectrum_from(const Config& config);
[[nodiscard]] SimConfig sim_config_from(const Config& config);

} // namespace cnmws
