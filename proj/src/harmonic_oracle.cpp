#include "cnmws/harmonic_oracle.hpp"

#include <cmath>

#include <boost/numeric/odeint.hpp>

#include "cnmws/errors.hpp"
#include "cnmws/linalg.hpp"
#include "cnmws/malliavin.hpp"

namespace cnmws {

namespace {

namespace ode = boost::numeric::odeint;

bool is_matern_three_halves(const SpectrumModel& s) {
    return s.family == Family::Matern && std::abs(s.nu - 1.5) < 1e-12;
}

// Joint per-component system s = (x, y): ds = M s dt + G dW.
struct JointSystem {
    Matrix m;
    Matrix g;
    Matrix sigma;  // stationary E[s s^T]
};

JointSystem joint_system(const HarmonicCase& c, const StateSpaceRealization& r) {
    const NoiseBlock& blk = r.block();
    const auto q0 = blk.a.rows();
    JointSystem out;
    out.m = Matrix::Zero(q0 + 1, q0 + 1);
    out.m(0, 0) = -c.k / c.xi0;
    out.m.block(0, 1, 1, q0) = blk.c / c.xi0;
    out.m.block(1, 1, q0, q0) = -blk.a;
    out.g = Matrix::Zero(q0 + 1, blk.b.cols());
    out.g.block(1, 0, q0, blk.b.cols()) = blk.b;
    out.sigma = solve_lyapunov(-out.m, out.g * out.g.transpose());
    return out;
}

double lyapunov_variance(const HarmonicCase& c) {
    const StateSpaceRealization r = realize(c.spectrum, 1);
    return joint_system(c, r).sigma(0, 0);
}

double binomial(int n, int k) {
    double out = 1.0;
    for (int i = 1; i <= k; ++i) {
        out = out * static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return out;
}

void require_smooth(const Matrix& v, const Matrix& g, const char* what) {
    const double scale = std::max(1.0, v.cwiseAbs().maxCoeff()) * std::max(1.0, g.cwiseAbs().maxCoeff());
    if ((v * g).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw NumericError(std::string("observable derivative ") + what + " is not defined for this noise");
    }
}

using State = std::vector<double>;

std::vector<double> integrate_linear(const std::function<void(const State&, State&)>& rhs, std::size_t dim,
                                     const std::vector<double>& t_grid, const OracleOptions& opt,
                                     const std::function<double(const State&)>& readout) {
    std::vector<double> times;
    const bool prepend = t_grid.empty() || t_grid.front() > 0.0;
    if (prepend) {
        times.push_back(0.0);
    }
    times.insert(times.end(), t_grid.begin(), t_grid.end());
    std::vector<double> values;
    values.reserve(times.size());
    State z(dim, 0.0);
    auto sys = [&](const State& s, State& ds, double) { rhs(s, ds); };
    auto obs = [&](const State& s, double) { values.push_back(readout(s)); };
    const double dt0 = times.size() > 1 ? std::max(1e-6, (times[1] - times[0]) * 1e-3) : 1e-3;
    if (opt.max_step > 0.0) {
        ode::integrate_times(ode::make_controlled(opt.abs_tol, opt.rel_tol, opt.max_step,
                                                  ode::runge_kutta_dopri5<State>()),
                             sys, z, times.begin(), times.end(), std::min(dt0, opt.max_step), obs);
    } else {
        ode::integrate_times(ode::make_controlled(opt.abs_tol, opt.rel_tol, ode::runge_kutta_dopri5<State>()), sys, z,
                             times.begin(), times.end(), dt0, obs);
    }
    if (prepend) {
        values.erase(values.begin());
    }
    return values;
}

} // namespace

double chi_analytic(double k, double xi0, double t) {
    if (!(k > 0.0) || !(xi0 > 0.0)) {
        throw ConfigError("k and xi0 must be positive");
    }
    return -std::expm1(-k * t / xi0) / k;
}

double variance_longtime(const HarmonicCase& c) {
    const SpectrumModel& s = c.spectrum;
    const double a = c.k / c.xi0;
    switch (s.family) {
    case Family::OU:
        return s.t_eff / (c.k * (1.0 + a * s.tau_p));
    case Family::Rational: {
        double sum = 0.0;
        for (const auto& t : s.terms) {
            const double al = a + t.ell;
            sum += t.ell * al * t.sigma * t.sigma / (2.0 * c.k * c.xi0 * (al * al + t.omega * t.omega));
        }
        return sum;
    }
    case Family::Matern:
        if (is_matern_three_halves(s)) {
            const double sigma2 = 2.0 * s.xi0 * s.t_eff;
            const double ell = 2.0 / s.tau_c;
            const double kap = c.k / (c.xi0 * ell);
            return sigma2 / (4.0 * c.k * c.xi0) * (2.0 + kap) / ((1.0 + kap) * (1.0 + kap));
        }
        return lyapunov_variance(c);
    }
    throw ConfigError("unsupported spectrum");
}

double second_sensitivity_longtime(const HarmonicCase& c) {
    const SpectrumModel& s = c.spectrum;
    const double k = c.k;
    const double xi0 = c.xi0;
    switch (s.family) {
    case Family::OU: {
        const double b = k * s.tau_p / xi0;
        return s.t_eff * (1.0 + 2.0 * b) / (k * k * (1.0 + b) * (1.0 + b));
    }
    case Family::Rational: {
        double sum = 0.0;
        for (const auto& t : s.terms) {
            const double kap = k / (xi0 * t.ell);
            const double gam = t.omega / t.ell;
            const double den = (kap + 1.0) * (kap + 1.0) + gam * gam;
            sum += t.sigma * t.sigma / (2.0 * k * k * xi0) *
                   ((2.0 * kap + 1.0) * (kap + 1.0) * (kap + 1.0) + gam * gam) / (den * den);
        }
        return sum;
    }
    case Family::Matern: {
        if (is_matern_three_halves(s)) {
            const double sigma2 = 2.0 * s.xi0 * s.t_eff;
            const double ell = 2.0 / s.tau_c;
            const double kap = k / (xi0 * ell);
            const double kp1 = kap + 1.0;
            return sigma2 / (4.0 * k * k * xi0) * (kap + 2.0) / (kp1 * kp1) +
                   sigma2 / (4.0 * k * xi0 * xi0 * ell) * ((kap + 2.0) * (kap + 2.0) - 1.0) / (kp1 * kp1 * kp1 * kp1);
        }
        const double h = 1e-5 * k;
        HarmonicCase lo = c;
        HarmonicCase hi = c;
        lo.k = k - h;
        hi.k = k + h;
        return -(lyapunov_variance(hi) - lyapunov_variance(lo)) / (2.0 * h);
    }
    }
    throw ConfigError("unsupported spectrum");
}

std::vector<EstimateSeries> moment_oracle_terms(const HarmonicCase& c, OracleObservable observable,
                                                const std::vector<double>& t_grid, const OracleOptions& options) {
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > t_grid[i - 1])) {
            throw ConfigError("oracle time grid must be strictly increasing");
        }
    }
    if (!t_grid.empty() && t_grid.front() < 0.0) {
        throw ConfigError("oracle time grid must start at t >= 0");
    }
    const StateSpaceRealization r = realize(c.spectrum, 1);
    const JointSystem js = joint_system(c, r);
    const WeightGains gains = weight_gains(r);
    const double inv_c1 = 1.0 / (r.form() == RealizationForm::Brunowski ? r.c_bar()(0, 0) : r.leading_gain());
    const int np = gains.n_prime;
    const auto dim = js.m.rows();

    // Row vectors h_d with d^d x/dt^d = h_d s, and matrices Q_k with
    // d^k (x^2)/dt^k = s^T Q_k s.
    std::vector<Matrix> h{Matrix::Zero(1, dim)};
    h[0](0, 0) = 1.0;
    std::vector<Matrix> qm{Matrix::Zero(dim, dim)};
    qm[0](0, 0) = 1.0;
    for (int d = 1; d <= np; ++d) {
        require_smooth(h.back(), js.g, "of x");
        require_smooth(qm.back(), js.g, "of x^2");
        h.push_back(h.back() * js.m);
        qm.push_back(qm.back() * js.m + js.m.transpose() * qm.back());
    }

    std::vector<EstimateSeries> out;
    for (int j = 0; j <= np; ++j) {
        for (int k = 0; k <= j; ++k) {
            const int d = j - k;
            Vector gamma(js.g.cols());
            for (Eigen::Index m = 0; m < gamma.size(); ++m) {
                gamma(m) = gains.g[static_cast<std::size_t>(j)][static_cast<std::size_t>(m)];
            }
            const double coef = binomial(j, k);
            std::vector<double> values;
            const bool constant = c.perturbation == PerturbationKind::Constant;
            const bool vanishes = constant ? (d > 0 || observable == OracleObservable::X2)
                                           : observable == OracleObservable::X;
            if (vanishes) {
                values.assign(t_grid.size(), 0.0);
            } else if (constant) {
                // v = E[s p], v' = M v + G gamma eps.
                const Vector src = js.g * gamma * inv_c1;
                const Matrix m = js.m;
                const Matrix hk = h[static_cast<std::size_t>(k)];
                values = integrate_linear(
                    [&](const State& z, State& dz) {
                        Eigen::Map<const Vector> v(z.data(), dim);
                        Eigen::Map<Vector> dv(dz.data(), dim);
                        dv = m * v + src;
                    },
                    static_cast<std::size_t>(dim), t_grid, options,
                    [&](const State& z) { return coef * (hk * Eigen::Map<const Vector>(z.data(), dim))(0, 0); });
            } else {
                // R = E[s s^T p] for p = int (u^T s) gamma^T dW, u = h_d^T / c1.
                const Vector u = h[static_cast<std::size_t>(d)].transpose() * inv_c1;
                const Matrix forcing = js.g * gamma * u.transpose() * js.sigma;
                const Matrix src = forcing + forcing.transpose();
                const Matrix m = js.m;
                const Matrix qk = qm[static_cast<std::size_t>(k)];
                values = integrate_linear(
                    [&](const State& z, State& dz) {
                        Eigen::Map<const Matrix> rr(z.data(), dim, dim);
                        Eigen::Map<Matrix> dr(dz.data(), dim, dim);
                        dr = m * rr + rr * m.transpose() + src;
                    },
                    static_cast<std::size_t>(dim * dim), t_grid, options,
                    [&](const State& z) {
                        Eigen::Map<const Matrix> rr(z.data(), dim, dim);
                        return coef * (qk * rr).trace();
                    });
            }
            EstimateSeries es;
            for (std::size_t i = 0; i < t_grid.size(); ++i) {
                es.push(t_grid[i], values[i], 0.0, 0);
            }
            out.push_back(std::move(es));
        }
    }
    return out;
}

EstimateSeries moment_oracle(const HarmonicCase& c, const OracleTarget& target, const std::vector<double>& t_grid,
                             const OracleOptions& options) {
    const auto terms = moment_oracle_terms(c, target.observable, t_grid, options);
    if (!target.total) {
        const int np = static_cast<int>(std::lround((std::sqrt(8.0 * static_cast<double>(terms.size()) + 1.0) - 3.0) / 2.0));
        if (target.j < 0 || target.k < 0 || target.k > target.j || target.j > np) {
            throw ConfigError("oracle target (j,k) outside the weight table");
        }
        return terms[static_cast<std::size_t>(WeightSet::index(target.j, target.k))];
    }
    EstimateSeries sum = terms.front();
    for (std::size_t t = 1; t < terms.size(); ++t) {
        for (std::size_t i = 0; i < sum.size(); ++i) {
            sum.estimate[i] += terms[t].estimate[i];
        }
    }
    return sum;
}

} // namespace cnmws
