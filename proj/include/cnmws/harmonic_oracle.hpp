#pragma once

#include <vector>

#include "cnmws/noise.hpp"
#include "cnmws/stats.hpp"

namespace cnmws {

enum class PerturbationKind {
    Constant,  // F-hat = 1
    Linear,    // F-hat = x
};

// Single particle, n = 1, x' = xi0^-1 (-k x + f).
struct HarmonicCase {
    double k = 1.0;
    double xi0 = 1.0;
    SpectrumModel spectrum;
    PerturbationKind perturbation = PerturbationKind::Constant;
};

[[nodiscard]] double chi_analytic(double k, double xi0, double t);

// Stationary <x^2>.
[[nodiscard]] double variance_longtime(const HarmonicCase& c);

// lim d<x(t)^2>/d lambda for F-hat = x. Equals -d<x^2>/dk, which is how the
// OU value is obtained; the rational (r = 1) and Matern (nu = 3/2) closed
// forms are evaluated directly.
[[nodiscard]] double second_sensitivity_longtime(const HarmonicCase& c);

enum class OracleObservable { X, X2 };

// One weighted average binom(j,k) <d^k Phi/dt^k p_{j,k}>, or the full sum of
// all such terms when total is set.
struct OracleTarget {
    OracleObservable observable = OracleObservable::X;
    int j = 0;
    int k = 0;
    bool total = false;
};

struct OracleOptions {
    double abs_tol = 1e-12;
    double rel_tol = 1e-12;
    double max_step = 0.0;  // <= 0: no cap
};

// Weighted averages of the continuous-time weights computed from the linear
// moment equations of the joint Gaussian state (x, y) started in its
// stationary law. Standard errors in the returned series are zero.
[[nodiscard]] EstimateSeries moment_oracle(const HarmonicCase& c, const OracleTarget& target,
                                           const std::vector<double>& t_grid, const OracleOptions& options = {});

// All (j,k) terms at once: result[WeightSet::index(j,k)].
[[nodiscard]] std::vector<EstimateSeries> moment_oracle_terms(const HarmonicCase& c, OracleObservable observable,
                                                              const std::vector<double>& t_grid,
                                                              const OracleOptions& options = {});

} // namespace cnmws
