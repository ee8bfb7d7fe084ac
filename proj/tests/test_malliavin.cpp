#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cnmws/errors.hpp"
#include "cnmws/harmonic_oracle.hpp"
#include "cnmws/malliavin.hpp"

using namespace cnmws;

namespace {

std::vector<Trajectory> ensemble(const SimConfig& cfg, const StateSpaceRealization& r, int count) {
    std::vector<Trajectory> out;
    for (int i = 0; i < count; ++i) {
        NormalSource rng(make_stream(cfg.seed, static_cast<std::uint64_t>(i)));
        out.push_back(simulate(cfg, r, rng));
    }
    return out;
}

} // namespace

TEST(Differences, BackwardDerivativesOfAQuadratic) {
    const double dt = 0.1;
    const auto phi = [](double t) { return 1.0 + 2.0 * t + 3.0 * t * t; };
    const double tn = 0.7;
    const std::vector<double> hist{phi(tn - 2 * dt), phi(tn - dt), phi(tn)};
    std::vector<double> d(3);
    backward_derivatives(hist, dt, d);
    EXPECT_NEAR(d[0], phi(tn), 1e-13);
    EXPECT_NEAR(d[1], 2.0 + 3.0 * (2.0 * tn - dt), 1e-12);
    EXPECT_NEAR(d[2], 6.0, 1e-10);
}

TEST(Differences, CombineUsesBinomials) {
    WeightSet w(2, 1);
    for (int j = 0; j <= 2; ++j) {
        for (int k = 0; k <= j; ++k) {
            w.at(j, k) = 10.0 * j + k + 1.0;
        }
    }
    const std::vector<double> dphi{1.0, 2.0, 3.0};
    std::vector<double> terms(6);
    const double total = combine_terms(w, dphi, terms);
    EXPECT_DOUBLE_EQ(terms[WeightSet::index(2, 1)], 2.0 * 2.0 * 22.0);
    EXPECT_DOUBLE_EQ(terms[WeightSet::index(2, 2)], 3.0 * 23.0);
    EXPECT_DOUBLE_EQ(total, 1.0 * 1 + 1.0 * 11 + 2.0 * 12 + 1.0 * 21 + 2.0 * 2.0 * 22 + 3.0 * 23);
}

TEST(Lift, DividesByTheLeadingGain) {
    const StateSpaceRealization r = realize(calibrate(Family::Rational, 1.0, 1.0, 1.0), 2);
    const double c1 = r.leading_gain();
    const std::vector<double> x{0.5, -2.0};
    std::vector<double> out(2);
    PerturbationLift con(ConstantForce{1}, r);
    con.eps(x, out);
    EXPECT_EQ(out[0], 0.0);
    EXPECT_DOUBLE_EQ(out[1], 1.0 / c1);
    EXPECT_TRUE(con.constant());
    PerturbationLift lin(LinearForce{}, r);
    lin.eps(x, out);
    EXPECT_DOUBLE_EQ(out[1], -2.0 / c1);
    const std::vector<double> v{3.0, 4.0};
    lin.eps_jvp(x, v, out);
    EXPECT_DOUBLE_EQ(out[0], 3.0 / c1);
    // The full lift is a right inverse of C.
    const Vector e = lin.lift(x);
    const Vector back = r.c() * e;
    EXPECT_NEAR(back(0), 0.5, 1e-14);
    EXPECT_NEAR(back(1), -2.0, 1e-14);
}

TEST(Weights, CaseIsCheckedAgainstTheRealization) {
    SimConfig cfg;
    cfg.dt = 1e-2;
    cfg.n_steps = 10;
    cfg.spectrum = calibrate(Family::Matern, 1.0, 1.0, 1.0);
    const StateSpaceRealization r = realize(cfg.spectrum, 1);
    NormalSource rng(make_stream(1, 0));
    const Trajectory tr = simulate(cfg, r, rng);
    const PerturbationLift lift(ConstantForce{}, r);
    EXPECT_THROW((void)propagate_weights_case1(tr, lift, r), ConfigError);
    EXPECT_EQ(propagate_weights_case2(tr, lift, r).size(), 11u);
}

TEST(Weights, RecoveredVelocityMatchesIntegratorDrift) {
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_steps = 400;
    cfg.spectrum = calibrate(Family::Rational, 1.0, 1.0, 0.8);
    const StateSpaceRealization r = realize(cfg.spectrum, 1);
    const PerturbationLift lift(LinearForce{}, r);
    NormalSource rng(make_stream(4, 0));
    Integrator integ(r, cfg.force, cfg.xi0, cfg.dt);
    prepare_steady_state(cfg, integ, rng);
    WeightPropagator with_v(lift, r, cfg.dt);
    WeightPropagator without_v(lift, r, cfg.dt);
    with_v.reset(integ.x());
    without_v.reset(integ.x());
    std::vector<double> dw(static_cast<std::size_t>(r.p()));
    std::vector<double> prev(1);
    for (int i = 0; i < 400; ++i) {
        integ.draw(rng, dw);
        prev[0] = integ.x()[0];
        integ.step(dw);
        with_v.advance(prev, integ.x(), dw, integ.velocity());
        without_v.advance(prev, integ.x(), dw);
    }
    for (std::size_t i = 0; i < with_v.weights().values.size(); ++i) {
        EXPECT_NEAR(with_v.weights().values[i], without_v.weights().values[i],
                    1e-9 * (1.0 + std::abs(with_v.weights().values[i])));
    }
}

TEST(Weights, ConstantForceHasNoGradientWeights) {
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_steps = 50;
    cfg.spectrum = calibrate(Family::OU, 1.0, 1.0, 1.0);
    const StateSpaceRealization r = realize(cfg.spectrum, 1);
    NormalSource rng(make_stream(8, 0));
    const Trajectory tr = simulate(cfg, r, rng);
    const auto ws = propagate_weights_case1(tr, PerturbationLift(ConstantForce{}, r), r);
    for (const auto& w : ws) {
        EXPECT_EQ(w.at(1, 0), 0.0);
    }
    // p00 is then a fixed multiple of the noise increments.
    double sum_dw = 0.0;
    for (std::size_t i = 0; i < tr.steps(); ++i) {
        sum_dw += tr.dw_at(i)[0];
    }
    EXPECT_NEAR(ws.back().at(0, 0), weight_gains(r).g[0][0] * sum_dw / r.leading_gain(), 1e-12);
}

// Statistical check of both estimator cases against the exact first
// sensitivity of a harmonic trap.
class ChiEstimate : public ::testing::TestWithParam<Family> {};

TEST_P(ChiEstimate, AgreesWithClosedForm) {
    SimConfig cfg;
    cfg.dt = 2e-3;
    cfg.n_steps = 400;
    cfg.seed = 21;
    cfg.init = InitMode::ExactStationary;
    cfg.spectrum = calibrate(GetParam(), 1.0, 1.0, std::numbers::sqrt2);
    const StateSpaceRealization r = realize(cfg.spectrum, 1);
    const auto runs = ensemble(cfg, r, 1500);
    const PerturbationLift lift(ConstantForce{}, r);
    std::vector<WeightSeries> ws;
    for (const auto& tr : runs) {
        ws.push_back(r.form() == RealizationForm::Brunowski ? propagate_weights_case2(tr, lift, r)
                                                             : propagate_weights_case1(tr, lift, r));
    }
    const auto phi = moment_observable(0, 1);
    const SensitivityResult res = r.form() == RealizationForm::Brunowski
                                      ? sensitivity_case2(runs, phi, ws, r.n_prime())
                                      : sensitivity_case1(runs, phi, ws);
    for (const std::size_t i : {100u, 250u, 400u}) {
        const double t = res.total.t[i];
        EXPECT_NEAR(res.total.estimate[i], chi_analytic(1.0, 1.0, t), 4.0 * res.total.std_error[i])
            << to_string(GetParam()) << " t=" << t;
        EXPECT_LT(res.total.std_error[i], 0.1);
    }
}

INSTANTIATE_TEST_SUITE_P(Families, ChiEstimate, ::testing::Values(Family::OU, Family::Rational, Family::Matern));
