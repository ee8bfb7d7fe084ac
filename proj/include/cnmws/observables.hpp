#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "cnmws/dynamics.hpp"
#include "cnmws/malliavin.hpp"
#include "cnmws/stats.hpp"

namespace cnmws {

// Time origins t_o = first + m * spacing (in steps) and the lags (in steps)
// at which responses are recorded after each origin. Consecutive origins of
// one trajectory are grouped into batches of batch_size origins (0 puts the
// whole trajectory in one batch); each batch contributes one sample, its mean
// over origins, so overlapping windows do not make the errors optimistic.
struct OriginPlan {
    std::int64_t first = 0;
    std::int64_t spacing = 1;
    std::vector<std::int64_t> lags;
    std::int64_t batch_size = 0;
};

// Per-batch means at each lag; NaN where the batch recorded nothing.
struct BatchSample {
    std::vector<double> chi;
    std::vector<double> msd;
};

// Streaming time-origin estimator of the mobility function and the MSD of
// indistinguishable particles. Weights are per coordinate (width n); each
// origin yields one value per lag, averaged over all particles and
// directions, and values are then averaged within batches:
//   chi  = (1/n) sum_c sum_{j,k} binom(j,k) D_k u_c / dt^k [p_{j,k,c}(t_o + t) - p_{j,k,c}(t_o)]
//   msd  = (1/N) sum_i |x_i(t_o + t) - x_i(t_o)|^2
// with u_c the displacement since the origin. Using the displacement instead
// of x itself leaves the mean unchanged (x(t_o) is independent of later
// weight increments) and removes the variance of the absolute position.
class OriginEstimator {
public:
    OriginEstimator(int n, int dim, int n_prime, double dt, OriginPlan plan, double box = 0.0);

    void begin_trajectory();
    // Call for every step N = 0, 1, ... with the unwrapped positions and the
    // weights after that step.
    void observe(std::int64_t step, std::span<const double> x, const WeightSet& w);
    // Flushes the open batches; origins cut short by the end of the
    // trajectory only contribute to the lags they reached.
    void end_trajectory();

    [[nodiscard]] const OriginPlan& plan() const { return plan_; }
    [[nodiscard]] std::vector<double> lag_times() const;
    [[nodiscard]] EstimateSeries chi() const;
    [[nodiscard]] EstimateSeries msd() const;
    [[nodiscard]] const std::vector<BatchSample>& batches() const { return batches_; }
    [[nodiscard]] std::int64_t origins_used() const { return origins_used_; }

    // Appends the batches of other after ours.
    void merge(const OriginEstimator& other);

private:
    struct Origin {
        std::int64_t step;
        std::int64_t batch;
        std::vector<double> x;
        std::vector<double> w;
    };
    struct OpenBatch {
        std::int64_t id;
        std::vector<double> chi;
        std::vector<double> msd;
        std::vector<std::int64_t> count;
        std::int64_t pending = 0;
    };

    OpenBatch& open_batch(std::int64_t id);
    OpenBatch& open_batch_for(std::int64_t id);
    void flush(bool all);

    int n_;
    int dim_;
    int n_prime_;
    double dt_;
    OriginPlan plan_;
    double box_;
    std::vector<int> lag_slot_;  // offset -> lag index or -1
    std::int64_t max_lag_ = 0;
    std::deque<Origin> active_;
    std::vector<std::vector<double>> hist_;  // ring of the last n'+1 positions
    std::int64_t last_step_ = -1;
    std::int64_t origins_used_ = 0;
    std::int64_t origins_in_traj_ = 0;
    std::deque<OpenBatch> open_;
    std::vector<BatchSample> batches_;
    std::vector<double> dphi_;
    std::vector<double> hbuf_;
};

// Offline versions over recorded trajectories and per-coordinate weights.
[[nodiscard]] EstimateSeries mobility_function(const std::vector<Trajectory>& ensemble,
                                               const std::vector<WeightSeries>& weights, const OriginPlan& origins,
                                               int dim);
[[nodiscard]] EstimateSeries msd(const std::vector<Trajectory>& ensemble, const OriginPlan& origins, int dim,
                                 double box = 0.0);

struct EinsteinResult {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t points = 0;
    std::vector<std::string> warnings;
};

// Mean of (MSD/(2 d))/chi over the grid points in [t_lo, t_hi]. Each point's
// error comes from first-order propagation of the two standard errors
// (treated as independent); the reported error is their mean, which does not
// assume independent points.
[[nodiscard]] EinsteinResult einstein_temperature(const EstimateSeries& chi, const EstimateSeries& msd,
                                                  double t_lo, double t_hi, int dim = 3);

// Same ratio from batch samples, as sum_t MSD/(2 d) over sum_t chi within the
// window. The error propagates the batch covariance of numerator and
// denominator, so the correlation between the two estimators is kept.
// Batches missing any window point are skipped.
[[nodiscard]] EinsteinResult einstein_temperature(const std::vector<BatchSample>& batches,
                                                  const std::vector<double>& lag_times, double t_lo, double t_hi,
                                                  int dim = 3);

struct FdOptions {
    std::int64_t n_trajectories = 1000;
    std::vector<std::int64_t> record_steps;  // steps after the perturbation starts
    int threads = 1;
    int max_halvings = 6;
    std::size_t chunk = 64;
};

struct FdResult {
    EstimateSeries slope;          // central difference at the accepted lambda
    EstimateSeries slope_half;     // same at lambda / 2
    double lambda = 0.0;
    int halvings = 0;
};

// Central finite difference [<Phi>_{+l} - <Phi>_{-l}] / (2 l) with common
// random numbers: the four perturbed copies (+-l, +-l/2) start from the same
// steady state and consume the same increments. While fd_nonlinear holds at
// any recorded time, l is halved and the run repeated. config.perturbation selects F-hat.
[[nodiscard]] FdResult finite_difference_sensitivity(const SimConfig& config, double lambda, const Observable& phi,
                                                     const FdOptions& options);

// Nonlinearity test shared by the finite-difference estimators: true when the
// slopes at lambda and lambda/2 differ significantly (5 SE of their
// difference) and the implied O(lambda^2) bias of the full-step slope exceeds
// half of its standard error.
[[nodiscard]] bool fd_nonlinear(const Welford& gap, const Welford& full);

// Default step: 0.01 k l_s for a constant force and 0.01 k for a linear one,
// with k the force stiffness and l_s = sqrt(T / k) (or sigma_v for pair forces).
[[nodiscard]] double default_fd_lambda(const SimConfig& config);

} // namespace cnmws
