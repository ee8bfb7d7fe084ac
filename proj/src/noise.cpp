#include "cnmws/noise.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "cnmws/errors.hpp"

namespace cnmws {

namespace {

constexpr double kPi = std::numbers::pi;

void require_positive(double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string(what) + " must be a positive finite number");
    }
}

double lorentz(double u, double ell) {
    const double z = u / ell;
    return 1.0 / (1.0 + z * z);
}

double rational_psd(const std::vector<RationalTerm>& terms, double omega) {
    double sum = 0.0;
    for (const auto& t : terms) {
        sum += 0.5 * t.sigma * t.sigma * (lorentz(omega - t.omega, t.ell) + lorentz(omega + t.omega, t.ell));
    }
    return sum;
}

// -psd''(0) for a sum of symmetric Lorentzian pairs.
double rational_curvature(const std::vector<RationalTerm>& terms) {
    double sum = 0.0;
    for (const auto& t : terms) {
        const double g2 = (t.omega / t.ell) * (t.omega / t.ell);
        const double p = 2.0 * (1.0 - 3.0 * g2) / std::pow(1.0 + g2, 3);
        sum += t.sigma * t.sigma * p / (t.ell * t.ell);
    }
    return sum;
}

double binomial(int n, int k) {
    double out = 1.0;
    for (int i = 1; i <= k; ++i) {
        out = out * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return out;
}

// r with nu = r - 1/2, or 0 when nu is not a positive half-integer.
int matern_order(double nu) {
    const double r = nu + 0.5;
    const double rounded = std::round(r);
    if (rounded >= 1.0 && std::abs(r - rounded) < 1e-12) {
        return static_cast<int>(rounded);
    }
    return 0;
}

} // namespace

std::string_view to_string(Family family) {
    switch (family) {
    case Family::OU: return "ou";
    case Family::Rational: return "rational";
    case Family::Matern: return "matern";
    }
    return "unknown";
}

Family parse_family(std::string_view name) {
    if (name == "ou") return Family::OU;
    if (name == "rational" || name == "psd1") return Family::Rational;
    if (name == "matern" || name == "psd2") return Family::Matern;
    throw ConfigError("unknown noise family '" + std::string(name) + "'");
}

SpectrumModel calibrate(Family family, double xi0, double t_eff, double tau_c, const FamilyOptions& options) {
    require_positive(xi0, "xi0");
    require_positive(t_eff, "T_eff");
    require_positive(tau_c, "tau_c");

    SpectrumModel m;
    m.family = family;
    m.xi0 = xi0;
    m.t_eff = t_eff;
    m.tau_c = tau_c;
    const double c0 = 2.0 * xi0 * t_eff;

    switch (family) {
    case Family::OU:
        m.tau_p = tau_c / std::numbers::sqrt2;
        break;
    case Family::Rational: {
        if (options.terms.empty()) {
            if (options.rational_terms != 1) {
                throw ConfigError("rational spectrum with " + std::to_string(options.rational_terms) +
                                  " terms needs explicit (sigma, omega, ell) triples");
            }
            const double ell = 2.0 * std::numbers::sqrt2 / (5.0 * tau_c);
            m.terms.push_back({std::sqrt(5.0) / 2.0 * std::sqrt(c0), 0.5 * ell, ell});
            break;
        }
        for (const auto& t : options.terms) {
            require_positive(t.sigma, "rational sigma");
            require_positive(t.ell, "rational ell");
            if (!(t.omega >= 0.0)) {
                throw ConfigError("rational omega must be non-negative");
            }
        }
        // Keep the supplied shape, rescale amplitude and frequency axis.
        const double shape0 = rational_psd(options.terms, 0.0);
        const double curv = rational_curvature(options.terms);
        if (!(curv > 0.0)) {
            throw ConfigError("rational spectrum shape has no positive curvature at zero frequency");
        }
        const double amp = std::sqrt(c0 / shape0);
        const double freq = std::sqrt(curv / shape0) / tau_c;
        for (const auto& t : options.terms) {
            m.terms.push_back({t.sigma * amp, t.omega * freq, t.ell * freq});
        }
        break;
    }
    case Family::Matern: {
        const double nu = options.nu;
        require_positive(nu, "nu");
        m.nu = nu;
        m.tau_nu = tau_c * std::sqrt(2.0 * nu / (2.0 * nu + 1.0));
        const double log_ratio = std::lgamma(nu) - std::lgamma(nu + 0.5);
        const double var = xi0 * t_eff * std::sqrt(2.0 * nu + 1.0) * std::exp(log_ratio) / (std::sqrt(kPi) * tau_c);
        m.sigma_nu = std::sqrt(var);
        break;
    }
    }
    return m;
}

double psd_value(const SpectrumModel& model, double omega) {
    switch (model.family) {
    case Family::OU: {
        const double z = omega * model.tau_p;
        return 2.0 * model.xi0 * model.t_eff / (1.0 + z * z);
    }
    case Family::Rational:
        return rational_psd(model.terms, omega);
    case Family::Matern: {
        const double nu = model.nu;
        const double a = 2.0 * nu / (model.tau_nu * model.tau_nu);
        const double log_pref = 2.0 * std::log(model.sigma_nu) + std::log(2.0 * std::sqrt(kPi)) +
                                std::lgamma(nu + 0.5) - std::lgamma(nu) + nu * std::log(2.0 * nu) -
                                2.0 * nu * std::log(model.tau_nu);
        return std::exp(log_pref - (nu + 0.5) * std::log(a + omega * omega));
    }
    }
    return 0.0;
}

double correlation(const SpectrumModel& model, double t) {
    const double at = std::abs(t);
    switch (model.family) {
    case Family::OU:
        return model.xi0 * model.t_eff / model.tau_p * std::exp(-at / model.tau_p);
    case Family::Rational: {
        double sum = 0.0;
        for (const auto& term : model.terms) {
            sum += 0.5 * term.sigma * term.sigma * term.ell * std::exp(-term.ell * at) * std::cos(term.omega * at);
        }
        return sum;
    }
    case Family::Matern: {
        const double var = model.sigma_nu * model.sigma_nu;
        if (at == 0.0) {
            return var;
        }
        const double nu = model.nu;
        const double z = std::sqrt(2.0 * nu) * at / model.tau_nu;
        if (z > 700.0) {
            return 0.0;
        }
        const double log_pref = (1.0 - nu) * std::log(2.0) - std::lgamma(nu) + nu * std::log(z);
        return var * std::exp(log_pref) * std::cyl_bessel_k(nu, z);
    }
    }
    return 0.0;
}

double rms_correlation_time(const SpectrumModel& model) {
    switch (model.family) {
    case Family::OU:
        return std::numbers::sqrt2 * model.tau_p;
    case Family::Rational:
        return std::sqrt(rational_curvature(model.terms) / rational_psd(model.terms, 0.0));
    case Family::Matern:
        return model.tau_nu * std::sqrt((2.0 * model.nu + 1.0) / (2.0 * model.nu));
    }
    return 0.0;
}

StateSpaceRealization::StateSpaceRealization(NoiseBlock block, int components, RealizationForm form)
    : block_(std::move(block)), n_(components), form_(form) {
    if (components < 1) {
        throw ConfigError("noise needs at least one component");
    }
    if (block_.a.rows() != block_.a.cols() || block_.b.rows() != block_.a.rows() ||
        block_.c.cols() != block_.a.rows() || block_.c.rows() != 1) {
        throw ConfigError("inconsistent noise block dimensions");
    }
    block_sigma_ = stationary_covariance(block_.a, block_.b);
    block_factor_ = symmetric_factor(block_sigma_);
}

Matrix StateSpaceRealization::a() const { return kron(block_.a, Matrix::Identity(n_, n_)); }
Matrix StateSpaceRealization::b() const { return kron(block_.b, Matrix::Identity(n_, n_)); }
Matrix StateSpaceRealization::c() const { return kron(block_.c, Matrix::Identity(n_, n_)); }
Matrix StateSpaceRealization::sigma_inf() const { return kron(block_sigma_, Matrix::Identity(n_, n_)); }

void StateSpaceRealization::set_brunowski(std::vector<Matrix> companion, Matrix b_bar, Matrix c_bar, double scale) {
    n_prime_ = static_cast<int>(companion.size());
    companion_ = std::move(companion);
    b_bar_ = std::move(b_bar);
    c_bar_ = std::move(c_bar);
    scale_ = scale;
}

Matrix stationary_covariance(const Matrix& a, const Matrix& b) {
    return solve_lyapunov(a, b * b.transpose());
}

StateSpaceRealization realize(const SpectrumModel& model, int n) {
    if (n < 1) {
        throw ConfigError("noise dimension must be at least 1");
    }
    switch (model.family) {
    case Family::OU: {
        const double sigma = std::sqrt(2.0 * model.xi0 * model.t_eff);
        NoiseBlock blk{Matrix::Constant(1, 1, 1.0 / model.tau_p), Matrix::Constant(1, 1, sigma / model.tau_p),
                       Matrix::Constant(1, 1, 1.0)};
        return {std::move(blk), n, RealizationForm::NonsingularBBt};
    }
    case Family::Rational: {
        const auto r = static_cast<Eigen::Index>(model.terms.size());
        NoiseBlock blk{Matrix::Zero(2 * r, 2 * r), Matrix::Zero(2 * r, 2 * r), Matrix::Zero(1, 2 * r)};
        for (Eigen::Index k = 0; k < r; ++k) {
            const auto& t = model.terms[static_cast<std::size_t>(k)];
            const Eigen::Index o = 2 * k;
            blk.a(o, o) = t.ell;
            blk.a(o, o + 1) = -t.omega;
            blk.a(o + 1, o) = t.omega;
            blk.a(o + 1, o + 1) = t.ell;
            blk.b(o, o) = t.ell;
            blk.b(o + 1, o + 1) = t.ell;
            blk.c(0, o) = t.sigma;
        }
        return {std::move(blk), n, RealizationForm::NonsingularBBt};
    }
    case Family::Matern: {
        const int r = matern_order(model.nu);
        if (r == 0) {
            throw ConfigError("state-space realization needs nu = r - 1/2 for a positive integer r");
        }
        const double ell = std::sqrt(2.0 * model.nu + 1.0) / model.tau_c;
        const double sigma = std::sqrt(2.0 * model.xi0 * model.t_eff);
        NoiseBlock blk{Matrix::Zero(r, r), Matrix::Zero(r, 1), Matrix::Zero(1, r)};
        std::vector<Matrix> companion;
        for (int k = 0; k + 1 < r; ++k) {
            blk.a(k, k + 1) = -ell;
        }
        for (int k = 0; k < r; ++k) {
            const double alpha = binomial(r, k);
            blk.a(r - 1, k) = ell * alpha;
            companion.push_back(Matrix::Constant(1, 1, alpha));
        }
        blk.b(r - 1, 0) = ell;
        blk.c(0, 0) = sigma;
        StateSpaceRealization out(std::move(blk), n, RealizationForm::Brunowski);
        out.set_brunowski(std::move(companion), Matrix::Identity(1, 1), Matrix::Constant(1, 1, sigma), ell);
        return out;
    }
    }
    throw ConfigError("unsupported noise family");
}

Vector sample_stationary(const StateSpaceRealization& realization, NormalSource& rng) {
    const int n = realization.n();
    const int q0 = realization.block_q();
    const Matrix& factor = realization.block_sigma_factor();
    Vector y(static_cast<Eigen::Index>(n) * q0);
    Vector z(q0);
    for (int c = 0; c < n; ++c) {
        for (int r = 0; r < q0; ++r) {
            z(r) = rng();
        }
        const Vector blk = factor * z;
        for (int r = 0; r < q0; ++r) {
            y(static_cast<Eigen::Index>(r) * n + c) = blk(r);
        }
    }
    return y;
}

double transfer_psd(const NoiseBlock& block, double omega) {
    using Complex = std::complex<double>;
    Eigen::MatrixXcd m = block.a.cast<Complex>();
    m.diagonal().array() += Complex(0.0, omega);
    const Eigen::MatrixXcd h = block.c.cast<Complex>() * m.partialPivLu().solve(block.b.cast<Complex>());
    return (h * h.adjoint())(0, 0).real();
}

std::string describe(const SpectrumModel& model) {
    std::ostringstream os;
    os.precision(17);
    os << "family = " << to_string(model.family) << "\n"
       << "xi0 = " << model.xi0 << "\n"
       << "t_eff = " << model.t_eff << "\n"
       << "tau_c = " << model.tau_c << "\n";
    switch (model.family) {
    case Family::OU:
        os << "tau_p = " << model.tau_p << "\n";
        break;
    case Family::Rational:
        for (std::size_t k = 0; k < model.terms.size(); ++k) {
            os << "term" << k + 1 << ".sigma = " << model.terms[k].sigma << "\n"
               << "term" << k + 1 << ".omega = " << model.terms[k].omega << "\n"
               << "term" << k + 1 << ".ell = " << model.terms[k].ell << "\n";
        }
        break;
    case Family::Matern:
        os << "nu = " << model.nu << "\n"
           << "sigma_nu = " << model.sigma_nu << "\n"
           << "tau_nu = " << model.tau_nu << "\n";
        break;
    }
    os << "psd(0) = " << psd_value(model, 0.0) << "\n"
       << "c(0) = " << correlation(model, 0.0) << "\n";
    return os.str();
}

} // namespace cnmws
