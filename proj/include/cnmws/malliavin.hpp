#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cnmws/dynamics.hpp"
#include "cnmws/noise.hpp"
#include "cnmws/perturbation.hpp"
#include "cnmws/stats.hpp"

namespace cnmws {

// Right inverse of C applied to F-hat. Both supported realizations have
// C = [c1 I_n, 0, ...] (or C-bar = c1 I_n), so the lift is F-hat / c1 placed in
// the first block; eps() returns that block.
class PerturbationLift {
public:
    PerturbationLift(PerturbationDescriptor descriptor, const StateSpaceRealization& realization);

    [[nodiscard]] const PerturbationDescriptor& descriptor() const { return descriptor_; }
    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] bool constant() const { return constant_; }
    [[nodiscard]] bool per_coordinate() const { return per_coordinate_; }
    [[nodiscard]] double inverse_gain() const { return inv_gain_; }

    // First block of E(x) (resp. E-bar(x)); per-coordinate lifts give the
    // diagonal entries 1/c1.
    void eps(std::span<const double> x, std::span<double> out) const;
    // (grad E)(x) v restricted to the first block.
    void eps_jvp(std::span<const double> x, std::span<const double> v, std::span<double> out) const;
    // Full lifted vector of length q (case 1) or n q0' (case 2).
    [[nodiscard]] Vector lift(std::span<const double> x) const;

private:
    PerturbationDescriptor descriptor_;
    int n_;
    int full_;
    double inv_gain_;
    bool constant_;
    bool per_coordinate_;
};

[[nodiscard]] PerturbationLift lift_perturbation(const PerturbationDescriptor& descriptor,
                                                 const StateSpaceRealization& realization);

// Weights p_{j,k}, 0 <= k <= j <= n'. width is 1 for a single perturbation
// and n for per-coordinate perturbations.
struct WeightSet {
    int n_prime = 1;
    int width = 1;
    std::vector<double> values;

    WeightSet() = default;
    WeightSet(int n_prime_, int width_);

    [[nodiscard]] static int index(int j, int k) { return j * (j + 1) / 2 + k; }
    [[nodiscard]] int pairs() const { return (n_prime + 1) * (n_prime + 2) / 2; }
    [[nodiscard]] double& at(int j, int k, int c = 0) {
        return values[static_cast<std::size_t>(index(j, k) * width + c)];
    }
    [[nodiscard]] double at(int j, int k, int c = 0) const {
        return values[static_cast<std::size_t>(index(j, k) * width + c)];
    }
    [[nodiscard]] std::span<const double> row(int j, int k) const {
        return {values.data() + static_cast<std::size_t>(index(j, k) * width), static_cast<std::size_t>(width)};
    }
    void clear() { std::fill(values.begin(), values.end(), 0.0); }
};

// Per-step gain rows (length p0) mapping the increment of one noise component
// block to the weight increment of order j.
struct WeightGains {
    bool brunowski = false;
    int n_prime = 1;
    std::vector<std::vector<double>> g;  // g[j], j = 0..n'
};

[[nodiscard]] WeightGains weight_gains(const StateSpaceRealization& realization);

// Streaming accumulation of the weights along one trajectory.
//
// Case 1 (invertible B B^T): at step i
//   dp00 = E(x_{i-1}) g0 dW_i,  dp11 = E(x_{i-1}) g1 dW_i,
//   dp10 = [(grad E)(x_{i-1}) (x_i - x_{i-1}) / dt] g1 dW_i.
// Case 2 (Brunowski): the increment for dW_i uses D_d E-bar / dt^d with
// d = j - k, taken at index i - 1 + d. That difference only involves states
// that do not yet depend on dW_i (the noise needs n' steps to reach x), so it
// is booked at step i - 1 + d; the last d - 1 increments are still pending
// when the weights are read.
class WeightPropagator {
public:
    WeightPropagator(const PerturbationLift& lift, const StateSpaceRealization& realization, double dt);

    void reset(std::span<const double> x0);
    // x_new = x_i, x_prev = x_{i-1}, dw = dW_i. velocity is the drift of the
    // step; when empty it is recovered as (x_new - x_prev) / dt.
    void advance(std::span<const double> x_prev, std::span<const double> x_new, std::span<const double> dw,
                 std::span<const double> velocity = {});

    [[nodiscard]] const WeightSet& weights() const { return weights_; }
    [[nodiscard]] int n_prime() const { return gains_.n_prime; }
    [[nodiscard]] bool brunowski() const { return gains_.brunowski; }
    [[nodiscard]] std::int64_t steps() const { return steps_; }

private:
    void project(std::span<const double> dw, std::vector<double>& out) const;

    const PerturbationLift* lift_;
    WeightGains gains_;
    int n_;
    int p0_;
    double dt_;
    int width_;
    WeightSet weights_;
    std::int64_t steps_ = 0;
    std::vector<double> eps_;
    std::vector<double> jvp_;
    std::vector<double> vel_;
    std::vector<std::vector<double>> eps_hist_;   // ring, eps(x_{N-l}) at (N - l) mod (n'+1)
    std::vector<std::vector<double>> proj_hist_;  // ring, [j * n + c] for dW_{N-l}
    std::vector<double> diff_;
};

// Weights after every step of a recorded trajectory (entry 0 is all zero).
using WeightSeries = std::vector<WeightSet>;

[[nodiscard]] WeightSeries propagate_weights_case1(const Trajectory& trajectory, const PerturbationLift& lift,
                                                   const StateSpaceRealization& realization);
[[nodiscard]] WeightSeries propagate_weights_case2(const Trajectory& trajectory, const PerturbationLift& lift,
                                                   const StateSpaceRealization& realization);

using Observable = std::function<double(std::span<const double> x)>;

// x_c^power.
[[nodiscard]] Observable moment_observable(int component, int power);

// out[k] = D_k phi / dt^k for k = 0..order, with hist holding phi_{N-order}..phi_N.
void backward_derivatives(std::span<const double> hist, double dt, std::span<double> out);

// terms[index(j,k)] = binom(j,k) dphi[k] p_{j,k}; returns the sum over all
// pairs. column selects the per-coordinate weight.
double combine_terms(const WeightSet& w, std::span<const double> dphi, std::span<double> terms, int column = 0);

struct SensitivityResult {
    EstimateSeries total;
    // One series per (j,k), indexed by WeightSet::index.
    std::vector<EstimateSeries> terms;
};

// Ensemble estimators over recorded trajectories, evaluated at every step
// from n' on. Trajectories and weight series are paired by position.
[[nodiscard]] SensitivityResult sensitivity_case1(const std::vector<Trajectory>& ensemble, const Observable& phi,
                                                  const std::vector<WeightSeries>& weights);
[[nodiscard]] SensitivityResult sensitivity_case2(const std::vector<Trajectory>& ensemble, const Observable& phi,
                                                  const std::vector<WeightSeries>& weights, int n_prime);

} // namespace cnmws
