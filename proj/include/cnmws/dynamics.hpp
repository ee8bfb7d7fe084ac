#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cnmws/forces.hpp"
#include "cnmws/noise.hpp"
#include "cnmws/perturbation.hpp"
#include "cnmws/rng.hpp"

namespace cnmws {

enum class InitMode {
    BurnIn,           // y ~ N(0, Sigma_inf), then relax for burn_in steps
    ExactStationary,  // harmonic only: draw (x, y) from the stationary law of the discrete chain
};

struct SimConfig {
    double dt = 1e-3;
    std::int64_t n_steps = 1000;
    std::int64_t burn_in = -1;  // steps; negative selects the default rule
    int n_particles = 1;
    int dim = 1;
    double xi0 = 1.0;
    std::uint64_t seed = 1;
    SpectrumModel spectrum;
    ForceField force = HarmonicForce{};
    InitMode init = InitMode::BurnIn;
    // Optional lambda * F-hat(x) added to the drift (finite-difference runs).
    std::optional<PerturbationDescriptor> perturbation;
    double lambda = 0.0;

    [[nodiscard]] int components() const { return n_particles * dim; }
    [[nodiscard]] double t_max() const { return dt * static_cast<double>(n_steps); }
};

// Slowest relaxation time of the unperturbed dynamics: max(tau_c, xi0 / k),
// with the interaction time xi0 sigma_v^2 / T standing in for xi0 / k when the
// force is a pair potential.
[[nodiscard]] double relaxation_time(const SimConfig& config);
[[nodiscard]] std::int64_t default_burn_in(const SimConfig& config);

// Warnings about the time step; empty when dt <= min(tau_c, xi0 / k_max) / 20.
[[nodiscard]] std::vector<std::string> check_time_step(const SimConfig& config);

// Recorded path. Row i of x holds x(t_i), row i of y holds y(t_i) and row i
// of dw holds the increment that produced step i + 1.
struct Trajectory {
    double dt = 0.0;
    int n = 0;
    int q = 0;
    int p = 0;
    std::vector<double> times;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> dw;

    [[nodiscard]] std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }
    [[nodiscard]] std::span<const double> x_at(std::size_t i) const {
        return {x.data() + i * static_cast<std::size_t>(n), static_cast<std::size_t>(n)};
    }
    [[nodiscard]] std::span<const double> y_at(std::size_t i) const {
        return {y.data() + i * static_cast<std::size_t>(q), static_cast<std::size_t>(q)};
    }
    [[nodiscard]] std::span<const double> dw_at(std::size_t i) const {
        return {dw.data() + i * static_cast<std::size_t>(p), static_cast<std::size_t>(p)};
    }
};

// Explicit Euler for x' = xi0^-1 (F(x) + C y), y' = -A y + B w'. The noise
// state is block-major (see StateSpaceRealization); the block matrices are
// applied through their nonzero entries only.
class Integrator {
public:
    Integrator(const StateSpaceRealization& realization, ForceField force, double xi0, double dt);

    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int q() const { return q_; }
    [[nodiscard]] int p() const { return p_; }
    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] double xi0() const { return xi0_; }

    [[nodiscard]] std::span<double> x() { return x_; }
    [[nodiscard]] std::span<double> y() { return y_; }
    [[nodiscard]] std::span<const double> x() const { return x_; }
    [[nodiscard]] std::span<const double> y() const { return y_; }
    [[nodiscard]] std::span<const double> x_prev() const { return x_prev_; }
    // F(x) at the current state; refreshed by refresh_force() and step().
    [[nodiscard]] std::span<const double> force() const { return f_; }
    // Drift xi0^-1 (F(x) + C y) used by the last step, so x = x_prev + dt v.
    [[nodiscard]] std::span<const double> velocity() const { return v_; }

    void set_perturbation(std::optional<PerturbationDescriptor> d, double lambda);
    void refresh_force();

    // dW entries are N(0, dt): out[m * n + c] drives row m of B for component c.
    void draw(NormalSource& rng, std::span<double> dw) const;
    void step(std::span<const double> dw);

    // Draws y ~ N(0, Sigma_inf); x is left unchanged.
    void init_noise_stationary(NormalSource& rng);
    // Draws (x, y) from the exact stationary law of this Euler chain. Needs a
    // harmonic force and no perturbation.
    void init_exact_stationary(NormalSource& rng);

private:
    struct Entry {
        int row;
        int col;
        double value;
    };

    int n_;
    int q0_;
    int p0_;
    int q_;
    int p_;
    double xi0_;
    double dt_;
    StateSpaceRealization realization_;
    ForceField force_;
    std::optional<CoulombEvaluator> coulomb_;
    std::optional<PerturbationDescriptor> perturbation_;
    double lambda_ = 0.0;
    std::vector<Entry> a_entries_;
    std::vector<Entry> b_entries_;
    std::vector<Entry> c_entries_;
    std::vector<double> x_;
    std::vector<double> x_prev_;
    std::vector<double> y_;
    std::vector<double> y_next_;
    std::vector<double> f_;
    std::vector<double> v_;
    std::vector<double> fhat_;
};

// Simple cubic start configuration (possibly one parity sublattice, see the
// definition), particle-major 3D positions.
[[nodiscard]] std::vector<double> cubic_lattice(int n_particles, double box);

// Builds the realization, prepares the steady state and records n_steps.
[[nodiscard]] Trajectory simulate(const SimConfig& config, const StateSpaceRealization& realization,
                                  NormalSource& rng);
[[nodiscard]] Trajectory simulate(const SimConfig& config, NormalSource& rng);

// Puts the integrator in the steady state requested by config (initial x from
// the force type, stationary noise, burn-in or exact draw).
void prepare_steady_state(const SimConfig& config, Integrator& integrator, NormalSource& rng);

} // namespace cnmws
