#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cnmws/config.hpp"
#include "cnmws/stats.hpp"

namespace cnmws {

// Everything an experiment produces before it is written: named series (one
// CSV each), flat numeric summary entries and warnings.
struct ExperimentOutput {
    std::vector<std::pair<std::string, EstimateSeries>> series;
    std::map<std::string, double> summary;
    std::map<std::string, std::string> notes;
    std::vector<std::string> warnings;

    [[nodiscard]] const EstimateSeries& get(const std::string& name) const;
    [[nodiscard]] bool has(const std::string& name) const;
    void add(std::string name, EstimateSeries s) { series.emplace_back(std::move(name), std::move(s)); }
};

// Runs the experiment described by config without touching the disk.
// threads <= 0 selects the hardware concurrency; results do not depend on it.
[[nodiscard]] ExperimentOutput compute_experiment(const Config& config, int threads);

// Moment-ODE curves only (harmonic kinds).
[[nodiscard]] ExperimentOutput compute_oracle_curves(const Config& config);

// Writes <name>.csv for every series, summary.json and manifest.json into
// dir. Throws IoError when the directory cannot be created or written.
void write_experiment(const Config& config, const ExperimentOutput& output, const std::filesystem::path& dir,
                      double wall_seconds, int threads);

// Human-readable calibrated spectrum and realization.
[[nodiscard]] std::vector<std::string> calibration_report(const Config& config);

[[nodiscard]] const char* library_version();

} // namespace cnmws
