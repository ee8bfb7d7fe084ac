#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cnmws/linalg.hpp"
#include "cnmws/rng.hpp"

namespace cnmws {

enum class Family { OU, Rational, Matern };

[[nodiscard]] std::string_view to_string(Family family);
// Accepts "ou", "rational" (alias "psd1"), "matern" (alias "psd2").
[[nodiscard]] Family parse_family(std::string_view name);

// One Lorentzian pair of the rational spectrum: amplitude sigma, centre
// frequency omega and half-width ell.
struct RationalTerm {
    double sigma = 0.0;
    double omega = 0.0;
    double ell = 0.0;
};

// A calibrated stationary noise spectrum. psd(0) = 2 xi0 T_eff and
// -psd''(0)/psd(0) = tau_c^2 hold for every model produced by calibrate().
struct SpectrumModel {
    Family family = Family::OU;
    double xi0 = 1.0;
    double t_eff = 1.0;
    double tau_c = 1.0;

    double tau_p = 0.0;                // OU
    std::vector<RationalTerm> terms;   // Rational
    double nu = 0.0;                   // Matern smoothness
    double sigma_nu = 0.0;             // Matern amplitude (sigma_nu^2 = c(0))
    double tau_nu = 0.0;               // Matern time scale
};

struct FamilyOptions {
    // Rational: number of Lorentzian pairs. Only r = 1 has a built-in
    // calibration; r > 1 needs explicit terms.
    int rational_terms = 1;
    // Rational: spectral shape. When non-empty the amplitudes and
    // frequencies are rescaled so that T_eff and tau_c come out exactly.
    std::vector<RationalTerm> terms;
    double nu = 1.5;
};

[[nodiscard]] SpectrumModel calibrate(Family family, double xi0, double t_eff, double tau_c,
                                      const FamilyOptions& options = {});

// Power spectral density, psd(w) = int exp(-i w t) c(t) dt.
[[nodiscard]] double psd_value(const SpectrumModel& model, double omega);

// Correlation function c(t) of one noise component.
[[nodiscard]] double correlation(const SpectrumModel& model, double t);

// -psd''(0)/psd(0) computed from the closed forms of each family.
[[nodiscard]] double rms_correlation_time(const SpectrumModel& model);

enum class RealizationForm { NonsingularBBt, Brunowski };

// Per-component linear system y' = -A y + B w', f = C y. The n-component
// noise used by the dynamics is this block tensored with I_n, with the state
// stored block-major: y[r * n + c] is row r of the block for component c.
struct NoiseBlock {
    Matrix a;  // q0 x q0
    Matrix b;  // q0 x p0
    Matrix c;  // 1 x q0
};

class StateSpaceRealization {
public:
    StateSpaceRealization() = default;
    StateSpaceRealization(NoiseBlock block, int components, RealizationForm form);

    [[nodiscard]] int n() const { return n_; }
    [[nodiscard]] int q() const { return n_ * block_q(); }
    [[nodiscard]] int p() const { return n_ * block_p(); }
    [[nodiscard]] int block_q() const { return static_cast<int>(block_.a.rows()); }
    [[nodiscard]] int block_p() const { return static_cast<int>(block_.b.cols()); }
    [[nodiscard]] RealizationForm form() const { return form_; }
    [[nodiscard]] const NoiseBlock& block() const { return block_; }
    [[nodiscard]] const Matrix& block_sigma_inf() const { return block_sigma_; }
    [[nodiscard]] const Matrix& block_sigma_factor() const { return block_factor_; }

    // Full (Kronecker) matrices. Cheap for small n; used by tests and the
    // moment oracle, never by the integrator.
    [[nodiscard]] Matrix a() const;
    [[nodiscard]] Matrix b() const;
    [[nodiscard]] Matrix c() const;
    [[nodiscard]] Matrix sigma_inf() const;

    // Brunowski data, per component: n' blocks A_1..A_n' (q0' x q0', without
    // the scale), unscaled B-bar and C-bar, and the common scale ell such that
    // the realised matrices are ell * A and ell * B.
    void set_brunowski(std::vector<Matrix> companion, Matrix b_bar, Matrix c_bar, double scale);
    [[nodiscard]] int n_prime() const { return n_prime_; }
    [[nodiscard]] const std::vector<Matrix>& companion() const { return companion_; }
    [[nodiscard]] const Matrix& b_bar() const { return b_bar_; }
    [[nodiscard]] const Matrix& c_bar() const { return c_bar_; }
    [[nodiscard]] double scale() const { return scale_; }

    // Coefficient of the first block of C (C = [c1 I_n, ...]); the canonical
    // right inverse of C divides by it.
    [[nodiscard]] double leading_gain() const { return block_.c(0, 0); }

private:
    NoiseBlock block_;
    int n_ = 0;
    RealizationForm form_ = RealizationForm::NonsingularBBt;
    Matrix block_sigma_;
    Matrix block_factor_;
    int n_prime_ = 1;
    std::vector<Matrix> companion_;
    Matrix b_bar_;
    Matrix c_bar_;
    double scale_ = 1.0;
};

[[nodiscard]] StateSpaceRealization realize(const SpectrumModel& model, int n);

// Symmetric PSD solution of A S + S A^T = B B^T.
[[nodiscard]] Matrix stationary_covariance(const Matrix& a, const Matrix& b);

// y0 ~ N(0, Sigma_inf), one independent block draw per component.
[[nodiscard]] Vector sample_stationary(const StateSpaceRealization& realization, NormalSource& rng);

// PSD of f = C y implied by a block: H(w) H(w)^*, H(w) = C (i w I + A)^{-1} B.
[[nodiscard]] double transfer_psd(const NoiseBlock& block, double omega);

[[nodiscard]] std::string describe(const SpectrumModel& model);

} // namespace cnmws
