#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cnmws/config.hpp"
#include "cnmws/errors.hpp"

using namespace cnmws;

namespace {

const char* kHarmonic = R"(
[experiment]
kind = harmonic-sensitivity
seed = 42
output = out/h

[spectrum]
family = rational
tau_c = 1.4142135623730951

[dynamics]
dt = 0.001
t_max = 5

[estimator]
trajectories = 1000
)";

bool contains(const std::vector<std::string>& lines, const std::string& needle) {
    return std::any_of(lines.begin(), lines.end(),
                       [&](const std::string& l) { return l.find(needle) != std::string::npos; });
}

RawConfig with(RawConfig raw, const std::string& key, const std::string& value) {
    raw[key] = value;
    return raw;
}

RawConfig without(RawConfig raw, const std::string& key) {
    raw.erase(key);
    return raw;
}

} // namespace

TEST(ConfigParse, SectionsBecomeDottedKeys) {
    const RawConfig raw = parse_config_text(kHarmonic);
    EXPECT_EQ(raw.at("experiment.kind"), "harmonic-sensitivity");
    EXPECT_EQ(raw.at("dynamics.dt"), "0.001");
    EXPECT_THROW((void)parse_config_text("[broken\nkey = 1\n"), ConfigError);
    EXPECT_THROW((void)parse_config_text("orphan = 1\n"), ConfigError);
    EXPECT_THROW((void)read_config_file("/nonexistent/cnmws.ini"), IoError);
}

TEST(ConfigValidate, CleanConfigHasAnEmptyReport) {
    const ValidationReport r = validate(parse_config_text(kHarmonic));
    EXPECT_TRUE(r.ok());
    EXPECT_TRUE(r.lines().empty());
}

TEST(ConfigValidate, UnknownAndMissingKeys) {
    const RawConfig base = parse_config_text(kHarmonic);
    const ValidationReport unknown = validate(with(base, "dynamics.dtt", "0.1"));
    EXPECT_TRUE(contains(unknown.errors, "unknown key dynamics.dtt"));

    RawConfig no_spectrum = without(without(base, "spectrum.family"), "spectrum.tau_c");
    const ValidationReport missing = validate(no_spectrum);
    EXPECT_TRUE(contains(missing.errors, "missing key spectrum.family"));
    EXPECT_TRUE(contains(missing.errors, "missing key spectrum.tau_c"));
    EXPECT_TRUE(contains(missing.lines(), "error: missing key spectrum.family"));

    EXPECT_TRUE(contains(validate(without(base, "experiment.kind")).errors, "missing key experiment.kind"));
    EXPECT_TRUE(contains(validate(without(base, "dynamics.t_max")).errors, "missing key dynamics.t_max"));
}

TEST(ConfigValidate, CoarseTimeStepWarns) {
    const RawConfig raw = with(parse_config_text(kHarmonic), "dynamics.dt", "1.4142135623730951");
    const ValidationReport r = validate(raw);
    EXPECT_TRUE(r.ok());
    ASSERT_FALSE(r.warnings.empty());
    EXPECT_TRUE(contains(r.lines(), "warning: dt too coarse"));
}

TEST(ConfigValidate, BadValues) {
    const RawConfig base = parse_config_text(kHarmonic);
    EXPECT_TRUE(contains(validate(with(base, "dynamics.dt", "-1")).errors, "dynamics.dt must be positive"));
    EXPECT_TRUE(contains(validate(with(base, "estimator.trajectories", "many")).errors, "estimator.trajectories"));
    EXPECT_TRUE(contains(validate(with(base, "experiment.kind", "sweep")).errors, "experiment.kind"));
    EXPECT_TRUE(contains(validate(with(base, "malliavin.observable", "x3")).errors, "malliavin.observable"));
    RawConfig matern = with(base, "spectrum.family", "matern");
    EXPECT_TRUE(contains(validate(with(matern, "spectrum.nu", "1")).errors, "spectrum.nu"));
    EXPECT_TRUE(contains(validate(with(base, "spectrum.tau_p", "1")).errors, "only one of"));
    RawConfig shaped = with(base, "spectrum.terms", "2");
    EXPECT_TRUE(contains(validate(with(shaped, "spectrum.shape", "1:0.5:1")).errors, "spectrum.shape"));
    EXPECT_TRUE(validate(with(shaped, "spectrum.shape", "1:0.5:1; 0.3:2:0.8")).ok());
}

TEST(ConfigValidate, IpsCutoffMustFitTheBox) {
    RawConfig raw = parse_config_text(R"(
[experiment]
kind = ips-mobility
[spectrum]
family = ou
tau_p = 1
[dynamics]
dt = 0.00008
t_max = 10
n_particles = 8
cutoff = 3
)");
    const ValidationReport r = validate(raw);
    EXPECT_TRUE(contains(r.errors, "cutoff"));
}

TEST(ConfigTyped, DefaultsAndAccessors) {
    const Config c(parse_config_text(kHarmonic));
    EXPECT_EQ(c.kind(), ExperimentKind::HarmonicSensitivity);
    EXPECT_EQ(c.seed(), 42u);
    EXPECT_EQ(c.output(), "out/h");
    EXPECT_EQ(c.integer("estimator.trajectories"), 1000);
    EXPECT_DOUBLE_EQ(c.real("spectrum.xi0"), 1.0);
    EXPECT_EQ(c.text("malliavin.perturbation"), "both");
    EXPECT_TRUE(c.flag("estimator.oracle"));
    EXPECT_TRUE(c.reals("estimator.record_times").empty());
    EXPECT_THROW((void)c.real("dynamics.n_particles"), ConfigError);  // not an option of this kind

    const SimConfig sim = sim_config_from(c);
    EXPECT_EQ(sim.n_steps, 5000);
    EXPECT_EQ(sim.spectrum.family, Family::Rational);
    EXPECT_NEAR(sim.spectrum.tau_c, std::numbers::sqrt2, 1e-15);
    EXPECT_THROW(Config(without(parse_config_text(kHarmonic), "dynamics.dt")), ConfigError);
}

TEST(ConfigHash, StableUnderFormatting) {
    const Config a(parse_config_text(kHarmonic));
    // Same content with different case, spacing, explicit defaults and
    // another output directory.
    const Config b(parse_config_text(R"(
[dynamics]
t_max = 5.0
dt = 1e-3
[spectrum]
family = RATIONAL
tau_c = 1.4142135623730951
xi0 = 1
[estimator]
trajectories = 1000
[experiment]
kind = harmonic-sensitivity
seed = 42
output = elsewhere
)"));
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(a.hash().size(), 64u);
}

TEST(ConfigHash, ChangesWithMeaningfulKeys) {
    const RawConfig base = parse_config_text(kHarmonic);
    const std::string h = Config(base).hash();
    EXPECT_NE(Config(with(base, "experiment.seed", "43")).hash(), h);
    EXPECT_NE(Config(with(base, "dynamics.dt", "0.0005")).hash(), h);
    EXPECT_NE(Config(with(base, "spectrum.family", "ou")).hash(), h);
    EXPECT_NE(Config(with(base, "malliavin.observable", "x")).hash(), h);
    EXPECT_EQ(Config(with(base, "experiment.output", "/tmp/x")).hash(), h);
    // An IPS-only key is irrelevant to a harmonic run.
    EXPECT_EQ(Config(with(base, "dynamics.kappa", "30")).hash(), h);
    // tau_p is an alias for tau_c / sqrt(2).
    RawConfig by_p = without(base, "spectrum.tau_c");
    by_p["spectrum.tau_p"] = "1";
    EXPECT_EQ(Config(by_p).hash(), h);
}

TEST(ConfigKeys, RegistryIsDocumented) {
    const auto& keys = config_keys();
    EXPECT_GT(keys.size(), 40u);
    for (const auto& k : keys) {
        EXPECT_FALSE(k.help.empty()) << k.section << "." << k.key;
        EXPECT_NE(k.kinds, 0u);
    }
    EXPECT_EQ(parse_kind("noise-validation"), ExperimentKind::NoiseValidation);
    EXPECT_EQ(to_string(ExperimentKind::OracleCompare), "oracle-compare");
}
