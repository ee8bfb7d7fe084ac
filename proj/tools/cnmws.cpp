// Command-line front end. Talks to the library only through the C API.
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cnmws/cnmws.h"

namespace {

struct Flags {
    std::string config;
    int threads = 0;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_flags(CLI::App* cmd, Flags& f, bool run_flags) {
    cmd->add_option("--config", f.config, "experiment config (INI)")->required();
    if (run_flags) {
        cmd->add_option("--threads", f.threads, "worker threads (default: hardware concurrency)");
        cmd->add_option("--seed", f.seed, "override experiment.seed");
        cmd->add_option("--out", f.out, "override experiment.output");
    }
}

int fail(cnmws_status s) {
    std::fprintf(stderr, "error: %s\n", cnmws_last_error());
    return s == CNMWS_ERR_CONFIG || s == CNMWS_ERR_NUMERIC || s == CNMWS_ERR_IO ? static_cast<int>(s) : 4;
}

int print_report(cnmws_report* r) {
    for (size_t i = 0; i < cnmws_report_size(r); ++i) {
        std::printf("%s\n", cnmws_report_line(r, i));
    }
    const size_t errors = cnmws_report_error_count(r);
    cnmws_report_free(r);
    return errors > 0 ? 1 : 0;
}

int load(const Flags& f, cnmws_config** cfg) {
    const cnmws_status s = cnmws_config_load(f.config.c_str(), f.seed.has_value() ? 1 : 0, f.seed.value_or(0),
                                             f.out ? f.out->c_str() : nullptr, cfg);
    return s == CNMWS_OK ? 0 : fail(s);
}

using Action = cnmws_status (*)(const cnmws_config*, int, cnmws_report**);

int with_config(const Flags& f, Action action) {
    cnmws_config* cfg = nullptr;
    if (const int rc = load(f, &cfg); rc != 0) {
        return rc;
    }
    cnmws_report* rep = nullptr;
    const cnmws_status s = action(cfg, f.threads, &rep);
    cnmws_config_free(cfg);
    if (s != CNMWS_OK) {
        return fail(s);
    }
    print_report(rep);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Malliavin-weight sensitivity experiments with colored noise"};
    app.set_version_flag("--version", std::string(cnmws_version()));
    app.require_subcommand(1);

    Flags run_f;
    Flags val_f;
    Flags cal_f;
    Flags ora_f;
    auto* run = app.add_subcommand("run", "run the experiment and write its artifacts");
    add_flags(run, run_f, true);
    auto* validate = app.add_subcommand("validate", "check a config without running it");
    add_flags(validate, val_f, false);
    auto* calibrate = app.add_subcommand("calibrate", "print the calibrated spectrum parameters");
    add_flags(calibrate, cal_f, false);
    auto* oracle = app.add_subcommand("oracle", "write the analytic curves of a harmonic config");
    add_flags(oracle, ora_f, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (run->parsed()) {
        return with_config(run_f, [](const cnmws_config* c, int threads, cnmws_report** r) {
            return cnmws_run(c, threads, r);
        });
    }
    if (oracle->parsed()) {
        return with_config(ora_f, [](const cnmws_config* c, int, cnmws_report** r) { return cnmws_oracle(c, r); });
    }
    if (calibrate->parsed()) {
        return with_config(cal_f, [](const cnmws_config* c, int, cnmws_report** r) { return cnmws_calibrate(c, r); });
    }
    cnmws_report* rep = nullptr;
    const cnmws_status s = cnmws_config_validate(val_f.config.c_str(), &rep);
    if (s != CNMWS_OK) {
        return fail(s);
    }
    return print_report(rep);
}
