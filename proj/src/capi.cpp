#include "cnmws/cnmws.h"

#include <chrono>
#include <cstring>
#include <exception>
#include <string>
#include <vector>

#include "cnmws/config.hpp"
#include "cnmws/errors.hpp"
#include "cnmws/experiment.hpp"
#include "cnmws/noise.hpp"

struct cnmws_spectrum {
    cnmws::SpectrumModel model;
};

struct cnmws_config {
    cnmws::Config config;
};

struct cnmws_report {
    std::vector<std::string> lines;
    std::size_t errors = 0;
};

namespace {

thread_local std::string g_last_error;

template <class F>
cnmws_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return CNMWS_OK;
    } catch (const cnmws::ConfigError& e) {
        g_last_error = e.what();
        return CNMWS_ERR_CONFIG;
    } catch (const cnmws::NumericError& e) {
        g_last_error = e.what();
        return CNMWS_ERR_NUMERIC;
    } catch (const cnmws::IoError& e) {
        g_last_error = e.what();
        return CNMWS_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return CNMWS_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return CNMWS_ERR_INTERNAL;
    }
}

cnmws_status bad_argument(const char* what) {
    g_last_error = what;
    return CNMWS_ERR_ARGUMENT;
}

cnmws_report* written_report(const cnmws::ExperimentOutput& out, const std::filesystem::path& dir) {
    auto* r = new cnmws_report;
    for (const auto& [name, s] : out.series) {
        r->lines.push_back("wrote " + (dir / (name + ".csv")).string());
    }
    r->lines.push_back("wrote " + (dir / "summary.json").string());
    r->lines.push_back("wrote " + (dir / "manifest.json").string());
    for (const auto& w : out.warnings) {
        r->lines.push_back("warning: " + w);
    }
    return r;
}

} // namespace

extern "C" {

const char* cnmws_version(void) { return cnmws::library_version(); }

const char* cnmws_last_error(void) { return g_last_error.c_str(); }

cnmws_status cnmws_spectrum_calibrate(const char* family, double xi0, double t_eff, double tau_c, double nu,
                                      cnmws_spectrum** out) {
    if (family == nullptr || out == nullptr) {
        return bad_argument("family and out must not be NULL");
    }
    return guarded([&] {
        cnmws::FamilyOptions opt;
        opt.nu = nu;
        *out = new cnmws_spectrum{cnmws::calibrate(cnmws::parse_family(family), xi0, t_eff, tau_c, opt)};
    });
}

cnmws_status cnmws_spectrum_psd(const cnmws_spectrum* s, double omega, double* out) {
    if (s == nullptr || out == nullptr) {
        return bad_argument("spectrum and out must not be NULL");
    }
    return guarded([&] { *out = cnmws::psd_value(s->model, omega); });
}

cnmws_status cnmws_spectrum_correlation(const cnmws_spectrum* s, double t, double* out) {
    if (s == nullptr || out == nullptr) {
        return bad_argument("spectrum and out must not be NULL");
    }
    return guarded([&] { *out = cnmws::correlation(s->model, t); });
}

cnmws_status cnmws_spectrum_tau_c(const cnmws_spectrum* s, double* out) {
    if (s == nullptr || out == nullptr) {
        return bad_argument("spectrum and out must not be NULL");
    }
    return guarded([&] { *out = cnmws::rms_correlation_time(s->model); });
}

void cnmws_spectrum_free(cnmws_spectrum* s) { delete s; }

cnmws_status cnmws_config_validate(const char* path, cnmws_report** out) {
    if (path == nullptr || out == nullptr) {
        return bad_argument("path and out must not be NULL");
    }
    return guarded([&] {
        const cnmws::RawConfig raw = cnmws::read_config_file(path);
        const cnmws::ValidationReport rep = cnmws::validate(raw);
        auto* r = new cnmws_report;
        r->lines = rep.lines();
        r->errors = rep.errors.size();
        *out = r;
    });
}

cnmws_status cnmws_config_load(const char* path, int has_seed, uint64_t seed, const char* output_dir,
                               cnmws_config** out) {
    if (path == nullptr || out == nullptr) {
        return bad_argument("path and out must not be NULL");
    }
    return guarded([&] {
        cnmws::RawConfig raw = cnmws::read_config_file(path);
        if (has_seed != 0) {
            raw["experiment.seed"] = std::to_string(seed);
        }
        if (output_dir != nullptr) {
            raw["experiment.output"] = output_dir;
        }
        *out = new cnmws_config{cnmws::Config(raw)};
    });
}

cnmws_status cnmws_config_hash(const cnmws_config* c, char* buf, size_t len) {
    if (c == nullptr || buf == nullptr) {
        return bad_argument("config and buf must not be NULL");
    }
    return guarded([&] {
        const std::string h = c->config.hash();
        if (len < h.size() + 1) {
            throw cnmws::ConfigError("hash buffer needs " + std::to_string(h.size() + 1) + " bytes");
        }
        std::memcpy(buf, h.c_str(), h.size() + 1);
    });
}

void cnmws_config_free(cnmws_config* c) { delete c; }

cnmws_status cnmws_run(const cnmws_config* c, int threads, cnmws_report** out) {
    if (c == nullptr || out == nullptr) {
        return bad_argument("config and out must not be NULL");
    }
    return guarded([&] {
        const auto start = std::chrono::steady_clock::now();
        const cnmws::ExperimentOutput result = cnmws::compute_experiment(c->config, threads);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        cnmws::write_experiment(c->config, result, c->config.output(), wall, threads);
        *out = written_report(result, c->config.output());
    });
}

cnmws_status cnmws_oracle(const cnmws_config* c, cnmws_report** out) {
    if (c == nullptr || out == nullptr) {
        return bad_argument("config and out must not be NULL");
    }
    return guarded([&] {
        const auto start = std::chrono::steady_clock::now();
        const cnmws::ExperimentOutput result = cnmws::compute_oracle_curves(c->config);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        cnmws::write_experiment(c->config, result, c->config.output(), wall, 1);
        *out = written_report(result, c->config.output());
    });
}

cnmws_status cnmws_calibrate(const cnmws_config* c, cnmws_report** out) {
    if (c == nullptr || out == nullptr) {
        return bad_argument("config and out must not be NULL");
    }
    return guarded([&] { *out = new cnmws_report{cnmws::calibration_report(c->config), 0}; });
}

size_t cnmws_report_size(const cnmws_report* r) { return r == nullptr ? 0 : r->lines.size(); }

const char* cnmws_report_line(const cnmws_report* r, size_t i) {
    if (r == nullptr || i >= r->lines.size()) {
        return nullptr;
    }
    return r->lines[i].c_str();
}

size_t cnmws_report_error_count(const cnmws_report* r) { return r == nullptr ? 0 : r->errors; }

void cnmws_report_free(cnmws_report* r) { delete r; }

} // extern "C"
