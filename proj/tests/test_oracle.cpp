#include <cmath>
#include <numbers>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <gtest/gtest.h>

#include "cnmws/errors.hpp"
#include "cnmws/harmonic_oracle.hpp"
#include "cnmws/malliavin.hpp"

using namespace cnmws;

namespace {

// <x^2> = (1/pi) int_0^inf psd(w) / (k^2 + xi0^2 w^2) dw for the stationary
// linear filter x' = xi0^-1 (-k x + f).
double quadrature_variance(const SpectrumModel& m, double k, double xi0) {
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate([&](double w) { return psd_value(m, w) / (k * k + xi0 * xi0 * w * w); }) /
           std::numbers::pi;
}

std::vector<double> grid(double t_max, int n) {
    std::vector<double> t;
    for (int i = 0; i <= n; ++i) {
        t.push_back(t_max * i / n);
    }
    return t;
}

const Family kFamilies[] = {Family::OU, Family::Rational, Family::Matern};

} // namespace

TEST(Oracle, ChiClosedForm) {
    EXPECT_NEAR(chi_analytic(1.0, 1.0, 1.0), 1.0 - std::exp(-1.0), 1e-15);
    EXPECT_NEAR(chi_analytic(2.0, 0.5, 0.3), 0.5 * (1.0 - std::exp(-1.2)), 1e-15);
    EXPECT_THROW((void)chi_analytic(0.0, 1.0, 1.0), ConfigError);
}

TEST(Oracle, VarianceMatchesSpectralIntegral) {
    for (const Family f : kFamilies) {
        for (const double tau_c : {0.01, 0.5, std::numbers::sqrt2, 4.0}) {
            for (const double k : {0.5, 1.0, 3.0}) {
                const SpectrumModel m = calibrate(f, 1.3, 0.9, tau_c);
                const HarmonicCase hc{k, 1.3, m, PerturbationKind::Linear};
                const double v = quadrature_variance(m, k, 1.3);
                EXPECT_NEAR(variance_longtime(hc), v, 1e-8 * v) << to_string(f) << " tau_c=" << tau_c;
            }
        }
    }
}

TEST(Oracle, SecondSensitivityIsMinusVarianceSlope) {
    for (const Family f : kFamilies) {
        for (const double tau_c : {0.01, std::numbers::sqrt2, 3.0}) {
            const SpectrumModel m = calibrate(f, 1.0, 1.0, tau_c);
            const double k = 1.0;
            const double h = 1e-4;
            const double slope = -(quadrature_variance(m, k + h, 1.0) - quadrature_variance(m, k - h, 1.0)) / (2 * h);
            const HarmonicCase hc{k, 1.0, m, PerturbationKind::Linear};
            EXPECT_NEAR(second_sensitivity_longtime(hc), slope, 1e-6) << to_string(f) << " tau_c=" << tau_c;
        }
    }
}

TEST(Oracle, WhiteNoiseLimit) {
    for (const Family f : kFamilies) {
        const SpectrumModel m = calibrate(f, 1.0, 1.0, 1e-4);
        const HarmonicCase hc{1.0, 1.0, m, PerturbationKind::Linear};
        EXPECT_NEAR(variance_longtime(hc), 1.0, 2e-4);
        EXPECT_NEAR(second_sensitivity_longtime(hc), 1.0, 2e-4);
    }
}

TEST(Oracle, FirstSensitivityTermsSumToChi) {
    const auto t = grid(6.0, 30);
    for (const Family f : kFamilies) {
        const HarmonicCase hc{1.0, 1.0, calibrate(f, 1.0, 1.0, std::numbers::sqrt2), PerturbationKind::Constant};
        const EstimateSeries total = moment_oracle(hc, {OracleObservable::X, 0, 0, true}, t);
        for (std::size_t i = 0; i < t.size(); ++i) {
            EXPECT_NEAR(total.estimate[i], chi_analytic(1.0, 1.0, t[i]), 1e-8) << to_string(f);
        }
        // Same total from the individual terms.
        const auto terms = moment_oracle_terms(hc, OracleObservable::X, t);
        for (std::size_t i = 0; i < t.size(); ++i) {
            double s = 0.0;
            for (const auto& term : terms) {
                s += term.estimate[i];
            }
            EXPECT_NEAR(s, total.estimate[i], 1e-10);
        }
    }
}

TEST(Oracle, SecondSensitivityApproachesLongTimeValue) {
    const std::vector<double> t{0.0, 10.0, 20.0, 30.0};
    for (const Family f : kFamilies) {
        const HarmonicCase hc{1.0, 1.0, calibrate(f, 1.0, 1.0, std::numbers::sqrt2), PerturbationKind::Linear};
        const EstimateSeries s = moment_oracle(hc, {OracleObservable::X2, 0, 0, true}, t);
        EXPECT_EQ(s.estimate[0], 0.0);
        EXPECT_NEAR(s.estimate.back(), second_sensitivity_longtime(hc), 1e-8) << to_string(f);
    }
}

TEST(Oracle, CrossSensitivitiesVanish) {
    const auto t = grid(5.0, 10);
    for (const Family f : kFamilies) {
        const SpectrumModel m = calibrate(f, 1.0, 1.0, 0.7);
        const HarmonicCase lin{1.0, 1.0, m, PerturbationKind::Linear};
        const HarmonicCase con{1.0, 1.0, m, PerturbationKind::Constant};
        const EstimateSeries a = moment_oracle(lin, {OracleObservable::X, 0, 0, true}, t);
        const EstimateSeries b = moment_oracle(con, {OracleObservable::X2, 0, 0, true}, t);
        for (std::size_t i = 0; i < t.size(); ++i) {
            EXPECT_NEAR(a.estimate[i], 0.0, 1e-10);
            EXPECT_NEAR(b.estimate[i], 0.0, 1e-10);
        }
    }
}

TEST(Oracle, TermLayoutFollowsTheWeightOrder) {
    const auto t = grid(1.0, 4);
    const HarmonicCase ou{1.0, 1.0, calibrate(Family::OU, 1.0, 1.0, 1.0), PerturbationKind::Constant};
    EXPECT_EQ(moment_oracle_terms(ou, OracleObservable::X, t).size(), 3u);
    const HarmonicCase ma{1.0, 1.0, calibrate(Family::Matern, 1.0, 1.0, 1.0), PerturbationKind::Constant};
    const auto terms = moment_oracle_terms(ma, OracleObservable::X, t);
    ASSERT_EQ(terms.size(), 6u);
    // A constant force has no gradient, so p_{j,k} with j > k is zero.
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(terms[WeightSet::index(1, 0)].estimate[i], 0.0);
        EXPECT_EQ(terms[WeightSet::index(2, 1)].estimate[i], 0.0);
    }
}
