#include "cnmws/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "cnmws/errors.hpp"
#include "cnmws/linalg.hpp"

namespace cnmws {

double relaxation_time(const SimConfig& config) {
    const double tau_c = config.spectrum.tau_c;
    if (const auto* h = std::get_if<HarmonicForce>(&config.force)) {
        return std::max(tau_c, config.xi0 / h->k);
    }
    if (const auto* c = std::get_if<ScreenedCoulomb>(&config.force)) {
        return std::max(tau_c, config.xi0 * c->sigma_v * c->sigma_v / config.spectrum.t_eff);
    }
    return tau_c;
}

std::int64_t default_burn_in(const SimConfig& config) {
    return static_cast<std::int64_t>(std::ceil(20.0 * relaxation_time(config) / config.dt));
}

std::vector<std::string> check_time_step(const SimConfig& config) {
    std::vector<std::string> out;
    double limit = config.spectrum.tau_c;
    const double k = stiffness_scale(config.force);
    if (k > 0.0) {
        limit = std::min(limit, config.xi0 / k);
    }
    if (config.dt > limit / 20.0) {
        std::ostringstream os;
        os << "dt too coarse: dt = " << config.dt << " exceeds min(tau_c, xi0/k)/20 = " << limit / 20.0;
        out.push_back(os.str());
    }
    return out;
}

Integrator::Integrator(const StateSpaceRealization& realization, ForceField force, double xi0, double dt)
    : n_(realization.n()),
      q0_(realization.block_q()),
      p0_(realization.block_p()),
      q_(realization.q()),
      p_(realization.p()),
      xi0_(xi0),
      dt_(dt),
      realization_(realization),
      force_(std::move(force)) {
    if (!(dt > 0.0) || !(xi0 > 0.0)) {
        throw ConfigError("dt and xi0 must be positive");
    }
    if (const auto* c = std::get_if<ScreenedCoulomb>(&force_)) {
        if (n_ % 3 != 0) {
            throw ConfigError("screened Coulomb force needs 3 components per particle");
        }
        coulomb_.emplace(*c);
    }
    const NoiseBlock& blk = realization.block();
    for (int r = 0; r < q0_; ++r) {
        for (int s = 0; s < q0_; ++s) {
            if (blk.a(r, s) != 0.0) {
                a_entries_.push_back({r, s, blk.a(r, s)});
            }
        }
        for (int m = 0; m < p0_; ++m) {
            if (blk.b(r, m) != 0.0) {
                b_entries_.push_back({r, m, blk.b(r, m)});
            }
        }
        if (blk.c(0, r) != 0.0) {
            c_entries_.push_back({0, r, blk.c(0, r)});
        }
    }
    x_.assign(static_cast<std::size_t>(n_), 0.0);
    x_prev_ = x_;
    y_.assign(static_cast<std::size_t>(q_), 0.0);
    y_next_ = y_;
    f_.assign(static_cast<std::size_t>(n_), 0.0);
    v_.assign(static_cast<std::size_t>(n_), 0.0);
    fhat_.assign(static_cast<std::size_t>(n_), 0.0);
}

void Integrator::set_perturbation(std::optional<PerturbationDescriptor> d, double lambda) {
    perturbation_ = std::move(d);
    lambda_ = lambda;
    refresh_force();
}

void Integrator::refresh_force() {
    evaluate_force(force_, x_, f_, coulomb_ ? &*coulomb_ : nullptr);
    if (perturbation_ && lambda_ != 0.0) {
        perturbation_value(*perturbation_, x_, fhat_);
        for (int c = 0; c < n_; ++c) {
            f_[static_cast<std::size_t>(c)] += lambda_ * fhat_[static_cast<std::size_t>(c)];
        }
    }
}

void Integrator::draw(NormalSource& rng, std::span<double> dw) const {
    rng.fill(dw, std::sqrt(dt_));
}

void Integrator::step(std::span<const double> dw) {
    const std::size_t n = static_cast<std::size_t>(n_);
    const double h = dt_ / xi0_;
    std::copy(x_.begin(), x_.end(), x_prev_.begin());
    for (std::size_t c = 0; c < n; ++c) {
        double drive = f_[c];
        for (const Entry& e : c_entries_) {
            drive += e.value * y_[static_cast<std::size_t>(e.col) * n + c];
        }
        v_[c] = drive / xi0_;
        x_[c] += h * drive;
    }

    std::copy(y_.begin(), y_.end(), y_next_.begin());
    for (const Entry& e : a_entries_) {
        const double* src = y_.data() + static_cast<std::size_t>(e.col) * n;
        double* dst = y_next_.data() + static_cast<std::size_t>(e.row) * n;
        const double w = -dt_ * e.value;
        for (std::size_t c = 0; c < n; ++c) {
            dst[c] += w * src[c];
        }
    }
    for (const Entry& e : b_entries_) {
        const double* src = dw.data() + static_cast<std::size_t>(e.col) * n;
        double* dst = y_next_.data() + static_cast<std::size_t>(e.row) * n;
        for (std::size_t c = 0; c < n; ++c) {
            dst[c] += e.value * src[c];
        }
    }
    y_.swap(y_next_);

    for (std::size_t c = 0; c < n; ++c) {
        if (!std::isfinite(x_[c])) {
            std::ostringstream os;
            os << "non-finite particle state in component " << c << " (dt = " << dt_ << " may be too large)";
            throw NumericError(os.str());
        }
    }
    refresh_force();
}

void Integrator::init_noise_stationary(NormalSource& rng) {
    const Vector y0 = sample_stationary(realization_, rng);
    std::copy(y0.data(), y0.data() + y0.size(), y_.begin());
    refresh_force();
}

void Integrator::init_exact_stationary(NormalSource& rng) {
    const auto* h = std::get_if<HarmonicForce>(&force_);
    if (h == nullptr || (perturbation_ && lambda_ != 0.0)) {
        throw ConfigError("exact stationary start needs an unperturbed harmonic force");
    }
    const NoiseBlock& blk = realization_.block();
    const int s = q0_ + 1;
    // Joint per-component chain s' = P s + G dW with s = (x, y-block).
    Matrix p = Matrix::Zero(s, s);
    p(0, 0) = 1.0 - dt_ * h->k / xi0_;
    p.block(0, 1, 1, q0_) = dt_ / xi0_ * blk.c;
    p.block(1, 1, q0_, q0_) = Matrix::Identity(q0_, q0_) - dt_ * blk.a;
    Matrix g = Matrix::Zero(s, p0_);
    g.block(1, 0, q0_, p0_) = blk.b;
    const Matrix sigma = solve_discrete_lyapunov(p, dt_ * g * g.transpose());
    const Matrix factor = symmetric_factor(sigma);
    const std::size_t n = static_cast<std::size_t>(n_);
    Vector z(s);
    for (std::size_t c = 0; c < n; ++c) {
        for (int i = 0; i < s; ++i) {
            z(i) = rng();
        }
        const Vector v = factor * z;
        x_[c] = v(0);
        for (int r = 0; r < q0_; ++r) {
            y_[static_cast<std::size_t>(r) * n + c] = v(r + 1);
        }
    }
    refresh_force();
}

std::vector<double> cubic_lattice(int n_particles, double box) {
    // Either the full simple cubic lattice with the fewest sites, or one
    // parity sublattice (ix + iy + iz even) of a finer one, whichever keeps
    // neighbours further apart. The sublattice avoids overlaps when N is far
    // from a cube, e.g. N = 32 or 108.
    int full = 1;
    while (full * full * full < n_particles) {
        ++full;
    }
    int half = 2;
    while (half * half * half / 2 < n_particles) {
        half += 2;
    }
    const bool use_half = std::sqrt(2.0) / half > 1.0 / full;
    const int side = use_half ? half : full;
    std::vector<std::array<int, 3>> sites;
    for (int ix = 0; ix < side; ++ix) {
        for (int iy = 0; iy < side; ++iy) {
            for (int iz = 0; iz < side; ++iz) {
                if (!use_half || (ix + iy + iz) % 2 == 0) {
                    sites.push_back({ix, iy, iz});
                }
            }
        }
    }
    const double a = box / side;
    std::vector<double> x;
    x.reserve(static_cast<std::size_t>(n_particles) * 3);
    for (int i = 0; i < n_particles; ++i) {
        // Spread a partial filling evenly over the available sites.
        const auto s = static_cast<std::size_t>(static_cast<long long>(i) * static_cast<long long>(sites.size()) /
                                                n_particles);
        for (int d = 0; d < 3; ++d) {
            x.push_back((sites[s][static_cast<std::size_t>(d)] + 0.5) * a);
        }
    }
    return x;
}

void prepare_steady_state(const SimConfig& config, Integrator& integrator, NormalSource& rng) {
    if (config.init == InitMode::ExactStationary) {
        integrator.init_exact_stationary(rng);
        return;
    }
    auto x = integrator.x();
    if (const auto* c = std::get_if<ScreenedCoulomb>(&config.force)) {
        const auto lattice = cubic_lattice(config.n_particles, c->box);
        std::copy(lattice.begin(), lattice.end(), x.begin());
    } else {
        std::fill(x.begin(), x.end(), 0.0);
    }
    integrator.init_noise_stationary(rng);
    const std::int64_t burn = config.burn_in >= 0 ? config.burn_in : default_burn_in(config);
    std::vector<double> dw(static_cast<std::size_t>(integrator.p()));
    for (std::int64_t i = 0; i < burn; ++i) {
        integrator.draw(rng, dw);
        integrator.step(dw);
    }
}

Trajectory simulate(const SimConfig& config, const StateSpaceRealization& realization, NormalSource& rng) {
    if (realization.n() != config.components()) {
        throw ConfigError("realization dimension does not match the particle system");
    }
    Integrator integ(realization, config.force, config.xi0, config.dt);
    prepare_steady_state(config, integ, rng);
    integ.set_perturbation(config.perturbation, config.lambda);

    Trajectory tr;
    tr.dt = config.dt;
    tr.n = integ.n();
    tr.q = integ.q();
    tr.p = integ.p();
    const auto steps = static_cast<std::size_t>(config.n_steps);
    tr.times.reserve(steps + 1);
    tr.x.reserve((steps + 1) * static_cast<std::size_t>(tr.n));
    tr.y.reserve((steps + 1) * static_cast<std::size_t>(tr.q));
    tr.dw.resize(steps * static_cast<std::size_t>(tr.p));

    auto record = [&](std::size_t i) {
        tr.times.push_back(static_cast<double>(i) * config.dt);
        tr.x.insert(tr.x.end(), integ.x().begin(), integ.x().end());
        tr.y.insert(tr.y.end(), integ.y().begin(), integ.y().end());
    };
    record(0);
    for (std::size_t i = 0; i < steps; ++i) {
        std::span<double> dw(tr.dw.data() + i * static_cast<std::size_t>(tr.p), static_cast<std::size_t>(tr.p));
        integ.draw(rng, dw);
        integ.step(dw);
        record(i + 1);
    }
    return tr;
}

Trajectory simulate(const SimConfig& config, NormalSource& rng) {
    const StateSpaceRealization realization = realize(config.spectrum, config.components());
    return simulate(config, realization, rng);
}

} // namespace cnmws
