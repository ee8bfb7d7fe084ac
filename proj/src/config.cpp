#include "cnmws/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include "cnmws/errors.hpp"
#include "cnmws/stats.hpp"

namespace cnmws {

namespace {

constexpr unsigned kH = 1U << 0;  // harmonic-sensitivity
constexpr unsigned kI = 1U << 1;  // ips-mobility
constexpr unsigned kN = 1U << 2;  // noise-validation
constexpr unsigned kO = 1U << 3;  // oracle-compare
constexpr unsigned kAll = kH | kI | kN | kO;

unsigned kind_bit(ExperimentKind k) { return 1U << static_cast<unsigned>(k); }

std::string trim(std::string s) {
    const auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool parse_real(const std::string& s, double& out) {
    std::istringstream is(s);
    is.imbue(std::locale::classic());
    is >> out;
    return !is.fail() && is.eof() && std::isfinite(out);
}

bool parse_integer(const std::string& s, std::int64_t& out) {
    std::istringstream is(s);
    is >> out;
    return !is.fail() && is.eof();
}

bool parse_bool(const std::string& s, bool& out) {
    const std::string v = lower(s);
    if (v == "true" || v == "yes" || v == "on" || v == "1") {
        out = true;
        return true;
    }
    if (v == "false" || v == "no" || v == "off" || v == "0") {
        out = false;
        return true;
    }
    return false;
}

bool parse_list(const std::string& s, std::vector<double>& out) {
    out.clear();
    if (trim(s).empty()) {
        return true;
    }
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = 0.0;
        if (!parse_real(trim(item), v)) {
            return false;
        }
        out.push_back(v);
    }
    return true;
}

// Normalised text of a value, or empty optional-like flag on failure.
bool normalise(const KeySpec& spec, const std::string& raw, std::string& out) {
    const std::string v = trim(raw);
    switch (spec.type) {
    case KeyType::Real: {
        double d = 0.0;
        if (!parse_real(v, d)) {
            return false;
        }
        out = format_double(d);
        return true;
    }
    case KeyType::Integer: {
        std::int64_t i = 0;
        if (!parse_integer(v, i)) {
            return false;
        }
        out = std::to_string(i);
        return true;
    }
    case KeyType::Boolean: {
        bool b = false;
        if (!parse_bool(v, b)) {
            return false;
        }
        out = b ? "true" : "false";
        return true;
    }
    case KeyType::Text:
        out = lower(v);
        return true;
    case KeyType::RealList: {
        std::vector<double> xs;
        if (!parse_list(v, xs)) {
            return false;
        }
        out.clear();
        for (std::size_t i = 0; i < xs.size(); ++i) {
            out += (i ? "," : "") + format_double(xs[i]);
        }
        return true;
    }
    }
    return false;
}

std::string type_name(KeyType t) {
    switch (t) {
    case KeyType::Real:
        return "a real number";
    case KeyType::Integer:
        return "an integer";
    case KeyType::Boolean:
        return "true or false";
    case KeyType::Text:
        return "text";
    case KeyType::RealList:
        return "a comma-separated list of numbers";
    }
    return "a value";
}

const KeySpec* find_key(const std::string& full) {
    for (const auto& k : config_keys()) {
        if (full.size() == k.section.size() + 1 + k.key.size() && full.compare(0, k.section.size(), k.section) == 0 &&
            full[k.section.size()] == '.' && full.compare(k.section.size() + 1, std::string::npos, k.key) == 0) {
            return &k;
        }
    }
    return nullptr;
}

std::string full_name(const KeySpec& k) { return std::string(k.section) + "." + std::string(k.key); }

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
    return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

// Structural checks on the normalised values. Appends to errors.
void check_values(ExperimentKind kind, const std::map<std::string, std::string>& v, std::vector<std::string>& errors) {
    const auto real = [&](const char* key) { return std::stod(v.at(key)); };
    const auto positive = [&](const char* key) {
        if (v.count(key) && !(real(key) > 0.0)) {
            errors.push_back(std::string(key) + " must be positive");
        }
    };
    for (const char* key : {"spectrum.xi0", "spectrum.t_eff", "spectrum.tau_c", "dynamics.dt", "dynamics.t_max",
                            "dynamics.k", "dynamics.density", "dynamics.sigma_v", "dynamics.kappa",
                            "estimator.record_dt", "estimator.origin_spacing", "estimator.lag_dt",
                            "estimator.fd_window"}) {
        positive(key);
    }
    if (v.count("spectrum.family")) {
        try {
            const Family f = parse_family(v.at("spectrum.family"));
            if (f == Family::Matern) {
                const double nu = real("spectrum.nu");
                const double r = nu + 0.5;
                if (!(nu > 0.0) || std::abs(r - std::round(r)) > 1e-12) {
                    errors.push_back("spectrum.nu must be a positive half-integer (1/2, 3/2, ...) to be simulated");
                }
            }
            if (f == Family::Rational && std::stoll(v.at("spectrum.terms")) < 1) {
                errors.push_back("spectrum.terms must be at least 1");
            }
        } catch (const ConfigError& e) {
            errors.push_back(std::string("spectrum.family: ") + e.what());
        }
    }
    if (v.count("spectrum.shape") && !v.at("spectrum.shape").empty()) {
        std::stringstream ss(v.at("spectrum.shape"));
        std::string item;
        int count = 0;
        while (std::getline(ss, item, ';')) {
            std::vector<double> xs;
            std::string t = item;
            std::replace(t.begin(), t.end(), ':', ',');
            if (!parse_list(t, xs) || xs.size() != 3 || !(xs[0] > 0.0) || !(xs[2] > 0.0)) {
                errors.push_back("spectrum.shape entries must be sigma:omega:ell with sigma, ell > 0");
                break;
            }
            ++count;
        }
        if (v.count("spectrum.terms") && count != std::stoll(v.at("spectrum.terms"))) {
            errors.push_back("spectrum.shape must list exactly spectrum.terms entries");
        }
    }
    if (v.count("dynamics.init") && !one_of(v.at("dynamics.init"), {"auto", "exact", "burn-in"})) {
        errors.push_back("dynamics.init must be auto, exact or burn-in");
    }
    if (v.count("malliavin.perturbation") && !one_of(v.at("malliavin.perturbation"), {"constant", "linear", "both"})) {
        errors.push_back("malliavin.perturbation must be constant, linear or both");
    }
    if (v.count("malliavin.observable") && !one_of(v.at("malliavin.observable"), {"x", "x2", "both"})) {
        errors.push_back("malliavin.observable must be x, x2 or both");
    }
    const auto at_least = [&](const char* key, std::int64_t lo) {
        if (v.count(key) && std::stoll(v.at(key)) < lo) {
            errors.push_back(std::string(key) + " must be at least " + std::to_string(lo));
        }
    };
    at_least("estimator.trajectories", 2);
    at_least("estimator.chunk", 1);
    at_least("estimator.fd_trajectories", 2);
    at_least("estimator.runs", 1);
    at_least("estimator.batch_origins", 0);
    at_least("estimator.fd_samples", 0);
    at_least("estimator.components", 2);
    at_least("estimator.lag_points", 2);
    at_least("dynamics.n_particles", 2);
    if (kind == ExperimentKind::IpsMobility && v.count("estimator.fit_lo") && v.count("estimator.fit_hi")) {
        const double lo = real("estimator.fit_lo");
        const double hi = real("estimator.fit_hi");
        if ((lo != 0.0 || hi != 0.0) && !(hi > lo && lo >= 0.0)) {
            errors.push_back("estimator.fit_lo and estimator.fit_hi must satisfy 0 <= fit_lo < fit_hi");
        }
    }
}

} // namespace

std::string_view to_string(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::HarmonicSensitivity:
        return "harmonic-sensitivity";
    case ExperimentKind::IpsMobility:
        return "ips-mobility";
    case ExperimentKind::NoiseValidation:
        return "noise-validation";
    case ExperimentKind::OracleCompare:
        return "oracle-compare";
    }
    return "unknown";
}

ExperimentKind parse_kind(std::string_view name) {
    for (const auto k : {ExperimentKind::HarmonicSensitivity, ExperimentKind::IpsMobility,
                         ExperimentKind::NoiseValidation, ExperimentKind::OracleCompare}) {
        if (name == to_string(k)) {
            return k;
        }
    }
    throw ConfigError("unknown experiment kind '" + std::string(name) +
                      "' (expected harmonic-sensitivity, ips-mobility, noise-validation or oracle-compare)");
}

const std::vector<KeySpec>& config_keys() {
    static const std::vector<KeySpec> keys = {
        {"experiment", "kind", KeyType::Text, "", kAll,
         "harmonic-sensitivity, ips-mobility, noise-validation or oracle-compare"},
        {"experiment", "seed", KeyType::Integer, "1", kAll, "master seed; every trajectory gets its own stream"},
        {"experiment", "output", KeyType::Text, "out", kAll, "output directory (not part of the hash)"},

        {"spectrum", "family", KeyType::Text, "", kAll, "ou, rational (alias psd1) or matern (alias psd2)"},
        {"spectrum", "xi0", KeyType::Real, "1", kAll, "friction coefficient"},
        {"spectrum", "t_eff", KeyType::Real, "1", kAll, "single-particle effective temperature"},
        {"spectrum", "tau_c", KeyType::Real, "", kAll, "rms correlation time; give this or tau_p"},
        {"spectrum", "tau_p", KeyType::Real, "", kAll, "persistence time, tau_c = sqrt(2) tau_p"},
        {"spectrum", "nu", KeyType::Real, "1.5", kAll, "Matern smoothness, a half-integer"},
        {"spectrum", "terms", KeyType::Integer, "1", kAll, "number of Lorentzian pairs for the rational family"},
        {"spectrum", "shape", KeyType::Text, "", kAll,
         "rational shape 'sigma:omega:ell; ...', rescaled to the requested t_eff and tau_c"},

        {"dynamics", "dt", KeyType::Real, "", kAll, "Euler time step"},
        {"dynamics", "t_max", KeyType::Real, "", kH | kI | kO, "simulated time after the steady state is reached"},
        {"dynamics", "burn_in", KeyType::Real, "-1", kH | kI | kO,
         "burn-in time; negative selects 20 relaxation times"},
        {"dynamics", "init", KeyType::Text, "auto", kH | kO,
         "auto, exact (stationary law of the discrete chain) or burn-in"},
        {"dynamics", "k", KeyType::Real, "1", kH | kO, "harmonic stiffness"},
        {"dynamics", "n_particles", KeyType::Integer, "32", kI, "number of particles"},
        {"dynamics", "density", KeyType::Real, "0.51", kI, "number density N sigma_v^3 / V"},
        {"dynamics", "a_v", KeyType::Real, "475", kI, "screened Coulomb amplitude"},
        {"dynamics", "kappa", KeyType::Real, "24", kI, "inverse screening length"},
        {"dynamics", "sigma_v", KeyType::Real, "1", kI, "particle diameter"},
        {"dynamics", "cutoff", KeyType::Real, "0", kI, "pair cutoff; 0 selects sigma_v + 10 / kappa"},
        {"dynamics", "cell_list", KeyType::Boolean, "true", kI, "use a cell list when the box allows it"},

        {"malliavin", "perturbation", KeyType::Text, "both", kH | kO, "constant, linear or both"},
        {"malliavin", "observable", KeyType::Text, "both", kH | kO, "x, x2 or both"},

        {"estimator", "trajectories", KeyType::Integer, "100000", kH | kO, "independent trajectories"},
        {"estimator", "record_dt", KeyType::Real, "0.1", kH | kO, "spacing of the recorded time grid"},
        {"estimator", "record_times", KeyType::RealList, "", kH | kO, "extra recorded times"},
        {"estimator", "chunk", KeyType::Integer, "256", kH | kN | kO, "work items per parallel chunk"},
        {"estimator", "oracle", KeyType::Boolean, "true", kH, "also write the moment-ODE oracle curves"},
        {"estimator", "fd", KeyType::Boolean, "false", kH | kI, "run the finite-difference cross-check"},
        {"estimator", "fd_trajectories", KeyType::Integer, "2000", kH, "trajectories of the finite-difference run"},
        {"estimator", "fd_lambda", KeyType::Real, "0", kH | kI, "finite-difference step; 0 selects the default"},
        {"estimator", "runs", KeyType::Integer, "1", kI, "independent long trajectories"},
        {"estimator", "origin_spacing", KeyType::Real, "1", kI, "time between origins"},
        {"estimator", "batch_origins", KeyType::Integer, "20", kI,
         "origins per batch sample; 0 uses one batch per run"},
        {"estimator", "lag_dt", KeyType::Real, "0.5", kI, "spacing of the lag grid"},
        {"estimator", "max_lag", KeyType::Real, "0", kI, "largest lag; 0 selects fit_hi"},
        {"estimator", "fit_lo", KeyType::Real, "0", kI, "Einstein window start; 0 with fit_hi 0 selects the default"},
        {"estimator", "fit_hi", KeyType::Real, "0", kI, "Einstein window end"},
        {"estimator", "fd_samples", KeyType::Integer, "0", kI, "finite-difference samples per run"},
        {"estimator", "fd_window", KeyType::Real, "2", kI, "length of each finite-difference sample"},
        {"estimator", "fd_lags", KeyType::RealList, "0.25,0.5,1,2", kI, "lags of the finite-difference samples"},
        {"estimator", "components", KeyType::Integer, "2000", kN, "independent noise components"},
        {"estimator", "sim_time", KeyType::Real, "0", kN, "simulated time per component; 0 selects 100 tau_c"},
        {"estimator", "max_lag", KeyType::Real, "0", kN, "largest lag; 0 selects 5 tau_c"},
        {"estimator", "lag_points", KeyType::Integer, "51", kN, "number of lags on [0, max_lag]"},
    };
    return keys;
}

std::vector<std::string> ValidationReport::lines() const {
    std::vector<std::string> out;
    for (const auto& e : errors) {
        out.push_back("error: " + e);
    }
    for (const auto& w : warnings) {
        out.push_back("warning: " + w);
    }
    return out;
}

RawConfig parse_config_text(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(text);
    try {
        pt::ini_parser::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    RawConfig raw;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            throw ConfigError("key '" + section + "' must belong to a [section]");
        }
        for (const auto& [key, value] : body) {
            raw[lower(trim(section)) + "." + lower(trim(key))] = value.get_value<std::string>();
        }
    }
    return raw;
}

RawConfig read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

namespace {

struct Resolved {
    ExperimentKind kind = ExperimentKind::HarmonicSensitivity;
    std::map<std::string, std::string> values;
    ValidationReport report;
};

Resolved resolve(const RawConfig& raw) {
    Resolved out;
    auto& errors = out.report.errors;

    bool have_kind = false;
    const auto kind_it = raw.find("experiment.kind");
    if (kind_it == raw.end()) {
        errors.push_back("missing key experiment.kind");
    } else {
        try {
            out.kind = parse_kind(lower(trim(kind_it->second)));
            have_kind = true;
        } catch (const ConfigError& e) {
            errors.push_back(std::string("experiment.kind: ") + e.what());
        }
    }
    for (const auto& [key, value] : raw) {
        if (find_key(key) == nullptr) {
            errors.push_back("unknown key " + key);
        }
    }
    if (!have_kind) {
        return out;
    }
    const unsigned bit = kind_bit(out.kind);

    for (const auto& spec : config_keys()) {
        if ((spec.kinds & bit) == 0) {
            continue;
        }
        const std::string name = full_name(spec);
        const auto it = raw.find(name);
        std::string norm;
        if (it != raw.end()) {
            if (!normalise(spec, it->second, norm)) {
                errors.push_back(name + " must be " + type_name(spec.type) + ", got '" + trim(it->second) + "'");
                continue;
            }
            if (name == "experiment.output") {
                norm = trim(it->second);  // paths keep their case
            }
            out.values[name] = norm;
        } else if (!spec.fallback.empty() || spec.type == KeyType::RealList ||
                   (spec.type == KeyType::Text && name == "spectrum.shape")) {
            normalise(spec, std::string(spec.fallback), norm);
            out.values[name] = norm;
        }
    }

    // Required keys without defaults.
    for (const char* key : {"spectrum.family", "dynamics.dt"}) {
        if (!raw.count(key)) {
            errors.push_back(std::string("missing key ") + key);
        }
    }
    if ((bit & (kH | kI | kO)) && !raw.count("dynamics.t_max")) {
        errors.push_back("missing key dynamics.t_max");
    }
    const bool has_c = out.values.count("spectrum.tau_c") > 0;
    const bool has_p = out.values.count("spectrum.tau_p") > 0;
    if (!has_c && !has_p) {
        errors.push_back("missing key spectrum.tau_c (or spectrum.tau_p)");
    } else if (has_c && has_p) {
        errors.push_back("give only one of spectrum.tau_c and spectrum.tau_p");
    } else if (has_p) {
        // Equivalent parameterisations hash identically.
        out.values["spectrum.tau_c"] = format_double(std::sqrt(2.0) * std::stod(out.values["spectrum.tau_p"]));
        out.values.erase("spectrum.tau_p");
    }
    if (errors.empty()) {
        check_values(out.kind, out.values, errors);
    }
    return out;
}

} // namespace

ValidationReport validate(const RawConfig& raw) {
    Resolved r = resolve(raw);
    if (r.report.ok()) {
        try {
            Config cfg(raw);
            r.report.warnings = cfg.warnings();
        } catch (const ConfigError& e) {
            r.report.errors.emplace_back(e.what());
        }
    }
    return r.report;
}

Config::Config(const RawConfig& raw) {
    Resolved r = resolve(raw);
    if (!r.report.ok()) {
        std::string msg = "invalid config:";
        for (const auto& e : r.report.errors) {
            msg += "\n  " + e;
        }
        throw ConfigError(msg);
    }
    kind_ = r.kind;
    values_ = std::move(r.values);

    // Model-level checks need the typed objects.
    const SpectrumModel spectrum = spectrum_from(*this);
    if (kind_ != ExperimentKind::NoiseValidation) {
        warnings_ = check_time_step(sim_config_from(*this));
    } else {
        SimConfig s;
        s.dt = real("dynamics.dt");
        s.spectrum = spectrum;
        s.force = FreeForce{};
        warnings_ = check_time_step(s);
    }
    if (kind_ == ExperimentKind::IpsMobility) {
        const SimConfig s = sim_config_from(*this);
        const auto& c = std::get<ScreenedCoulomb>(s.force);
        if (c.effective_cutoff() > 0.5 * c.box) {
            throw ConfigError("pair cutoff exceeds half the box edge; increase dynamics.n_particles");
        }
    }
}

double Config::real(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("config has no value for " + key);
    }
    return std::stod(it->second);
}

std::int64_t Config::integer(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("config has no value for " + key);
    }
    return std::stoll(it->second);
}

bool Config::flag(const std::string& key) const { return text(key) == "true"; }

const std::string& Config::text(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("config has no value for " + key);
    }
    return it->second;
}

std::vector<double> Config::reals(const std::string& key) const {
    std::vector<double> out;
    parse_list(text(key), out);
    return out;
}

std::string Config::hash() const {
    std::string canon;
    for (const auto& [key, value] : values_) {
        if (key == "experiment.output") {
            continue;
        }
        canon += key + "=" + value + "\n";
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(canon.data(), canon.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("SHA-256 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return os.str();
}

SpectrumModel spectrum_from(const Config& config) {
    const Family family = parse_family(config.text("spectrum.family"));
    FamilyOptions opt;
    opt.nu = config.real("spectrum.nu");
    opt.rational_terms = static_cast<int>(config.integer("spectrum.terms"));
    const std::string& shape = config.text("spectrum.shape");
    if (!shape.empty()) {
        std::stringstream ss(shape);
        std::string item;
        while (std::getline(ss, item, ';')) {
            std::replace(item.begin(), item.end(), ':', ',');
            std::vector<double> xs;
            parse_list(item, xs);
            opt.terms.push_back({xs[0], xs[1], xs[2]});
        }
    }
    return calibrate(family, config.real("spectrum.xi0"), config.real("spectrum.t_eff"),
                     config.real("spectrum.tau_c"), opt);
}

SimConfig sim_config_from(const Config& config) {
    SimConfig s;
    s.dt = config.real("dynamics.dt");
    s.xi0 = config.real("spectrum.xi0");
    s.seed = config.seed();
    s.spectrum = spectrum_from(config);
    if (config.has("dynamics.t_max")) {
        s.n_steps = std::llround(config.real("dynamics.t_max") / s.dt);
    }
    switch (config.kind()) {
    case ExperimentKind::HarmonicSensitivity:
    case ExperimentKind::OracleCompare: {
        s.force = HarmonicForce{config.real("dynamics.k")};
        const std::string& init = config.text("dynamics.init");
        s.init = init == "burn-in" ? InitMode::BurnIn : InitMode::ExactStationary;
        break;
    }
    case ExperimentKind::IpsMobility: {
        ScreenedCoulomb c;
        c.a_v = config.real("dynamics.a_v");
        c.kappa = config.real("dynamics.kappa");
        c.sigma_v = config.real("dynamics.sigma_v");
        c.cutoff = config.real("dynamics.cutoff");
        c.use_cell_list = config.flag("dynamics.cell_list");
        s.n_particles = static_cast<int>(config.integer("dynamics.n_particles"));
        s.dim = 3;
        c.box = box_from_density(s.n_particles, c.sigma_v, config.real("dynamics.density"));
        s.force = c;
        s.init = InitMode::BurnIn;
        break;
    }
    case ExperimentKind::NoiseValidation:
        s.force = FreeForce{};
        s.init = InitMode::BurnIn;
        break;
    }
    if (config.has("dynamics.burn_in")) {
        const double b = config.real("dynamics.burn_in");
        s.burn_in = b < 0.0 ? -1 : std::llround(b / s.dt);
    }
    return s;
}

} // namespace cnmws
